"""Command-line experiment runner.

``compodiff <command> --config <path> --out <dir> [--seed N] [--steps N]``

Every command reads and writes inside ``--out``. CSV files use a header row
and the fixed column orders in :data:`COLUMNS`; floats are written with
``repr`` so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import checkpoint
from .compose import (OPERATORS, DecompositionModel, ModelConfig, TrainConfig, build_model, compose,
                      decode_component, separate_batch, train_decomposition)
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .metrics import STFTConfig, ms_stft_distance, mse, permute_and_score, si_scores, summarize
from .numerics import Tensor, no_grad
from .prior import PriorConfig, PriorModel, build_prior, generate_many, train_prior
from .synthdata import DataConfig, MixtureSample, make_dataset, write_wav

log = logging.getLogger("compodiff")

CHUNK = 64

COLUMNS = {
    "decomp_loss.csv": ["epoch", "loss"],
    "prior_loss.csv": ["epoch", "loss"],
    "ablation_loss.csv": ["operator", "epoch", "loss"],
    "ablation_crops.csv": ["operator", "crop", "mse", "ms_stft"],
    "ablation.csv": ["operator", "mse_mean", "mse_std", "ms_stft_mean", "ms_stft_std"],
    "separation.csv": ["crop", "source", "estimate", "si_sdr", "si_sir", "si_sar",
                       "base_si_sdr", "base_si_sir", "base_si_sar"],
    "separation_summary.csv": ["metric", "mean", "std", "count", "sentinels"],
    "generation.csv": ["case", "kept", "generated", "kept_exact", "mse_real", "mse_random",
                       "ms_stft_real", "ms_stft_random"],
    "generation_summary.csv": ["metric", "mean", "std", "count", "sentinels"],
    "reconstruct.csv": ["crop", "mse", "ms_stft"],
}


# -- io -----------------------------------------------------------------------

def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def write_csv(path: Path, rows: Iterable[Sequence]) -> None:
    header = COLUMNS[path.name]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"{path.name}: row has {len(row)} fields, expected {len(header)}")
            writer.writerow([_fmt(v) for v in row])


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def data_config(cfg: ExperimentConfig) -> DataConfig:
    d = cfg.data
    return DataConfig(channels=d.channels, length=d.length, seed=d.seed, shared_tempo=d.shared_tempo)


def save_dataset(path: Path, samples: list[MixtureSample], cfg: ExperimentConfig) -> None:
    tensors = {
        "mixture": np.stack([s.mixture for s in samples]),
        "stems": np.stack([np.stack(s.stems) for s in samples]),
        "scale": np.array([s.scale for s in samples]),
    }
    checkpoint.save(path, tensors, {"config": cfg.to_dict(), "params": [s.params for s in samples]})


def load_dataset(path: Path) -> list[MixtureSample]:
    meta, t = checkpoint.load(path)
    return [MixtureSample(mixture=t["mixture"][i], stems=list(t["stems"][i]), params=meta["params"][i],
                          scale=float(t["scale"][i]))
            for i in range(t["mixture"].shape[0])]


def model_config(cfg: ExperimentConfig, operator: str | None = None) -> ModelConfig:
    m = cfg.model
    return ModelConfig(cfg.data.channels, cfg.data.length, m.n_latents, m.latent_dim, m.channels,
                       m.groups, m.attention, operator or m.operator, m.zero_init_output)


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    t = cfg.training
    return TrainConfig(t.epochs, t.lr, t.batch, t.seed, t.weight_decay, (t.beta1, t.beta2), t.eps)


def prior_train_config(cfg: ExperimentConfig) -> TrainConfig:
    p, t = cfg.prior, cfg.training
    return TrainConfig(p.epochs, p.lr, p.batch, p.seed, t.weight_decay, (t.beta1, t.beta2), t.eps)


def save_model(path: Path, model, cfg: ExperimentConfig, extra: dict | None = None) -> None:
    tensors = dict(model.state_dict())
    for key, value in (extra or {}).items():
        tensors[key] = np.asarray(value, dtype=np.float64)
    checkpoint.save(path, tensors, {"config": cfg.to_dict()})


def load_decomposition(path: Path, operator: str | None = None) -> tuple[DecompositionModel, ExperimentConfig]:
    meta, tensors = checkpoint.load(path)
    cfg = ExperimentConfig.from_dict(meta["config"])
    model = build_model(model_config(cfg, operator), cfg.model.seed)
    model.load_state_dict(tensors)
    return model, cfg


def _prior_config(cfg: ExperimentConfig) -> PriorConfig:
    return PriorConfig(cfg.model.n_latents, cfg.model.latent_dim, cfg.prior.channels, cfg.prior.groups,
                       p_mask=cfg.prior.p_mask)


def load_prior(path: Path) -> PriorModel:
    meta, tensors = checkpoint.load(path)
    cfg = ExperimentConfig.from_dict(meta["config"])
    prior = build_prior(_prior_config(cfg), cfg.prior.seed)
    prior.center = float(tensors.pop("_center"))
    prior.scale = float(tensors.pop("_scale"))
    prior.load_state_dict(tensors)
    return prior


# -- evaluation helpers -----------------------------------------------------------

def _chunks(n: int, size: int = CHUNK):
    for start in range(0, n, size):
        yield start, min(n, start + size)


def _pmap(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _test_crops(cfg: ExperimentConfig, out: Path) -> list[MixtureSample]:
    samples = load_dataset(out / "data" / "test.ckpt")
    return samples[: min(cfg.evaluation.crops, len(samples))]


def separate_crops(model: DecompositionModel, mixtures: np.ndarray, steps: int, base_seed: int) -> list[np.ndarray]:
    """N arrays of shape M x C x L; crop m uses seed ``base_seed + m``."""
    parts = []
    for lo, hi in _chunks(len(mixtures)):
        parts.append(separate_batch(model, mixtures[lo:hi], steps, [base_seed + i for i in range(lo, hi)]))
    return [np.concatenate([p[i] for p in parts]) for i in range(len(parts[0]))]


def reconstruction_rows(model: DecompositionModel, samples: list[MixtureSample], steps: int,
                        base_seed: int) -> list[tuple[int, float, float]]:
    mixtures = np.stack([s.mixture for s in samples])
    estimates = separate_crops(model, mixtures, steps, base_seed)
    with no_grad():
        recon = compose(model.operator, [Tensor(e) for e in estimates]).data
    stft = STFTConfig.for_length(mixtures.shape[-1])
    return [(i, mse(recon[i], mixtures[i]), ms_stft_distance(mixtures[i], recon[i], stft))
            for i in range(len(samples))]


def _summary_rows(columns: dict[str, list[float]]) -> list[tuple]:
    rows = []
    for name, values in columns.items():
        s = summarize(values)
        rows.append((name, s["mean"], s["std"], s["count"], s["sentinels"]))
    return rows


def _derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 2:
        raise ValueError("a random partner needs at least two cases")
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


# -- commands -------------------------------------------------------------------

def cmd_make_data(cfg: ExperimentConfig, out: Path, steps: int) -> None:
    d = cfg.data
    dc = data_config(cfg)
    (out / "data").mkdir(parents=True, exist_ok=True)
    save_dataset(out / "data" / "train.ckpt", make_dataset(dc, d.train_size), cfg)
    save_dataset(out / "data" / "test.ckpt", make_dataset(dc, d.test_size, offset=d.test_offset), cfg)
    log.info("wrote %d train and %d test frames", d.train_size, d.test_size)


def _train_mixtures(out: Path) -> np.ndarray:
    return np.stack([s.mixture for s in load_dataset(out / "data" / "train.ckpt")])


def cmd_train_decomp(cfg: ExperimentConfig, out: Path, steps: int) -> None:
    data = _train_mixtures(out)
    model = build_model(model_config(cfg), cfg.model.seed)
    model, trace = train_decomposition(model, data, train_config(cfg))
    save_model(out / "decomp.ckpt", model, cfg)
    write_csv(out / "decomp_loss.csv", enumerate(trace))


def cmd_ablate_operators(cfg: ExperimentConfig, out: Path, steps: int) -> None:
    data = _train_mixtures(out)
    crops = _test_crops(cfg, out)
    operators = [op.strip() for op in cfg.evaluation.operators.split(",") if op.strip()]
    unknown = [op for op in operators if op not in OPERATORS]
    if unknown:
        raise ConfigError(f"unknown operators in [evaluation] operators: {unknown}")
    losses, crop_rows, summary = [], [], []
    for op in operators:
        log.info("ablation: training with operator %s", op)
        model = build_model(model_config(cfg, op), cfg.model.seed)
        model, trace = train_decomposition(model, data, train_config(cfg))
        losses += [(op, epoch, loss) for epoch, loss in enumerate(trace)]
        rows = reconstruction_rows(model, crops, steps, cfg.evaluation.seed)
        crop_rows += [(op, *row) for row in rows]
        m = summarize([r[1] for r in rows])
        s = summarize([r[2] for r in rows])
        summary.append((op, m["mean"], m["std"], s["mean"], s["std"]))
    write_csv(out / "ablation_loss.csv", losses)
    write_csv(out / "ablation_crops.csv", crop_rows)
    write_csv(out / "ablation.csv", summary)


def encode_all(model: DecompositionModel, mixtures: np.ndarray) -> np.ndarray:
    with no_grad():
        return np.concatenate([model.encode_batch(mixtures[lo:hi]).data for lo, hi in _chunks(len(mixtures))])


def cmd_train_prior(cfg: ExperimentConfig, out: Path, steps: int) -> None:
    model, _ = load_decomposition(out / "decomp.ckpt")
    latents = encode_all(model, _train_mixtures(out))
    prior = build_prior(_prior_config(cfg), cfg.prior.seed)
    prior, trace = train_prior(prior, latents, prior_train_config(cfg), encoder=model.encoder)
    save_model(out / "prior.ckpt", prior, cfg, {"_center": prior.center, "_scale": prior.scale})
    write_csv(out / "prior_loss.csv", enumerate(trace))


def cmd_eval_separation(cfg: ExperimentConfig, out: Path, steps: int) -> None:
    model, _ = load_decomposition(out / "decomp.ckpt")
    crops = _test_crops(cfg, out)
    estimates = separate_crops(model, np.stack([s.mixture for s in crops]), steps, cfg.evaluation.seed)

    def score(i: int) -> list[tuple]:
        refs = crops[i].stems
        perm, scores = permute_and_score([e[i] for e in estimates], refs)
        rows = []
        for j, sc in enumerate(scores):
            base = si_scores(crops[i].mixture, j, refs)
            rows.append((i, j, perm[j], *sc.as_tuple(), *base.as_tuple()))
        return rows

    rows = [r for block in _pmap(score, range(len(crops)), cfg.evaluation.workers) for r in block]
    write_csv(out / "separation.csv", rows)
    names = COLUMNS["separation.csv"][3:]
    write_csv(out / "separation_summary.csv",
              _summary_rows({n: [r[3 + k] for r in rows] for k, n in enumerate(names)}))


def cmd_eval_generation(cfg: ExperimentConfig, out: Path, steps: int) -> None:
    model, _ = load_decomposition(out / "decomp.ckpt")
    prior = load_prior(out / "prior.ckpt")
    crops = _test_crops(cfg, out)
    z = encode_all(model, np.stack([s.mixture for s in crops]))
    cases, n, dim = z.shape
    kept = np.arange(cases) % n
    bits = np.ones_like(z)
    bits[np.arange(cases), kept] = 0.0
    base = cfg.evaluation.seed
    gen = np.concatenate([generate_many(prior, z[lo:hi], bits[lo:hi], steps, [base + i for i in range(lo, hi)])
                          for lo, hi in _chunks(cases)])
    partner = _derangement(cases, np.random.default_rng(base))
    stft = STFTConfig.for_length(cfg.data.length)
    # render generated, true and random partners from one shared noise draw per case
    x0 = np.stack([np.random.default_rng(base + i).standard_normal((cfg.data.channels, cfg.data.length))
                   for i in range(cases)])
    rows = []
    for j in range(n):
        idx = np.flatnonzero(kept != j)
        if idx.size == 0:
            continue
        audio = {}
        for name, lat in (("gen", gen[idx, j]), ("real", z[idx, j]), ("rand", z[partner[idx], j])):
            audio[name] = np.concatenate([decode_component(model, lat[lo:hi, None], x0[idx[lo:hi]], steps)
                                          for lo, hi in _chunks(idx.size)])
        for k, i in enumerate(idx):
            exact = int(np.array_equal(gen[i, kept[i]], z[i, kept[i]]))
            rows.append((int(i), int(kept[i]), j, exact, mse(gen[i, j], z[i, j]), mse(gen[i, j], z[partner[i], j]),
                         ms_stft_distance(audio["real"][k], audio["gen"][k], stft),
                         ms_stft_distance(audio["rand"][k], audio["gen"][k], stft)))
    rows.sort(key=lambda r: (r[0], r[2]))
    write_csv(out / "generation.csv", rows)
    names = COLUMNS["generation.csv"][3:]
    write_csv(out / "generation_summary.csv",
              _summary_rows({nm: [r[3 + k] for r in rows] for k, nm in enumerate(names)}))


def cmd_reconstruct(cfg: ExperimentConfig, out: Path, steps: int) -> None:
    model, _ = load_decomposition(out / "decomp.ckpt")
    crops = _test_crops(cfg, out)
    rows = reconstruction_rows(model, crops, steps, cfg.evaluation.seed)
    write_csv(out / "reconstruct.csv", rows)
    if cfg.evaluation.wav > 0:
        wav_dir = out / "wav"
        wav_dir.mkdir(exist_ok=True)
        subset = crops[: cfg.evaluation.wav]
        estimates = separate_crops(model, np.stack([s.mixture for s in subset]), steps, cfg.evaluation.seed)
        for i, sample in enumerate(subset):
            write_wav(wav_dir / f"crop{i:03d}_mixture.wav", sample.mixture[0])
            for j, est in enumerate(estimates):
                write_wav(wav_dir / f"crop{i:03d}_source{j}.wav", est[i, 0])


REPORT_FILES = ("ablation_crops.csv", "separation.csv", "generation.csv")


def _mean_std(values: list[float]) -> str:
    s = summarize(values)
    if s["count"] and s["sentinels"] == s["count"]:
        return "inf"
    text = f"{s['mean']:.4g} ({s['std']:.3g})"
    return text + (f" [{s['sentinels']} inf]" if s["sentinels"] else "")


def report(out: Path, stream=sys.stdout) -> int:
    """Print ablation, separation and generation tables from per-crop CSVs."""
    present = [name for name in REPORT_FILES if (out / name).exists()]
    missing = [name for name in REPORT_FILES if name not in present]
    if not present:
        print(f"no results in {out}; expected any of: {', '.join(REPORT_FILES)}", file=sys.stderr)
        return 1
    if "ablation_crops.csv" in present:
        rows = read_csv(out / "ablation_crops.csv")
        print("operator ablation: mean (std) over crops", file=stream)
        print(f"{'operator':<10}{'MSE':>28}{'MS-STFT':>28}", file=stream)
        for op in dict.fromkeys(r["operator"] for r in rows):
            sel = [r for r in rows if r["operator"] == op]
            print(f"{op:<10}{_mean_std([float(r['mse']) for r in sel]):>28}"
                  f"{_mean_std([float(r['ms_stft']) for r in sel]):>28}", file=stream)
        print(file=stream)
    if "separation.csv" in present:
        rows = read_csv(out / "separation.csv")
        print("separation (dB): mean (std) over crops and sources", file=stream)
        print(f"{'':<12}{'SI-SDR':>24}{'SI-SIR':>24}{'SI-SAR':>24}", file=stream)
        for label, prefix in (("estimates", ""), ("mixture", "base_")):
            cells = [_mean_std([float(r[prefix + m]) for r in rows]) for m in ("si_sdr", "si_sir", "si_sar")]
            print(f"{label:<12}" + "".join(f"{c:>24}" for c in cells), file=stream)
        print(file=stream)
    if "generation.csv" in present:
        rows = read_csv(out / "generation.csv")
        print("variation diversity: mean (std) over cases", file=stream)
        print(f"{'':<8}{'MSE (latent)':>28}{'MS-STFT':>28}", file=stream)
        for label in ("real", "random"):
            print(f"{label:<8}{_mean_std([float(r['mse_' + label]) for r in rows]):>28}"
                  f"{_mean_std([float(r['ms_stft_' + label]) for r in rows]):>28}", file=stream)
        exact = sum(int(r["kept_exact"]) for r in rows)
        print(f"kept latents bit-exact: {exact}/{len(rows)}", file=stream)
    if missing:
        print(f"not yet available: {', '.join(missing)}", file=stream)
    return 0


COMMANDS = {
    "make-data": cmd_make_data,
    "train-decomp": cmd_train_decomp,
    "ablate-operators": cmd_ablate_operators,
    "train-prior": cmd_train_prior,
    "eval-separation": cmd_eval_separation,
    "eval-generation": cmd_eval_generation,
    "reconstruct": cmd_reconstruct,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="compodiff", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=[*COMMANDS, "report"])
    parser.add_argument("--config", type=Path, help="key=value experiment config (defaults if omitted)")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--seed", type=int, help="replace every seed in the config")
    parser.add_argument("--steps", type=int, help="sampling steps (overrides [sampling] steps)")
    parser.add_argument("-q", "--quiet", action="store_true")
    return parser


def run(command: str, cfg: ExperimentConfig, out: Path, steps: int | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.snapshot").write_text(dump_config(cfg), encoding="utf-8")
    COMMANDS[command](cfg, out, steps or cfg.sampling.steps)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    if args.command == "report":
        return report(args.out)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.steps is not None and args.steps < 1:
            raise ConfigError("--steps must be >= 1")
        run(args.command, cfg, args.out, args.steps)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, checkpoint.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
