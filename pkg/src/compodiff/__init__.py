"""Compositional diffusion autoencoder with a masked latent prior.

A semantic encoder splits a mixture into N latents, one shared conditional
denoiser renders each latent, and a fixed operator composes the renderings.
"""

from .compose import (DecompositionModel, LatentStack, ModelConfig, TrainConfig, build_model, compose,
                      decode_component, decomposition_loss, encode, reconstruct, separate,
                      train_decomposition)
from .diffusion import NoiseSchedule, SamplerConfig, ddpm_forward, ddpm_loss, iadb_blend, iadb_loss, iadb_sample
from .metrics import STFTConfig, ms_stft_distance, mse, permute_and_score, si_decompose, si_scores
from .prior import Mask, PriorConfig, PriorModel, build_prior, generate, make_mask, masked_blend, prior_loss, train_prior
from .synthdata import DataConfig, MixtureSample, SourceParams, make_dataset

__version__ = "0.1.0"
