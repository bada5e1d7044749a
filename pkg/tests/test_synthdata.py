import wave

import numpy as np
import pytest

from compodiff.synthdata import (HARMONIC, PERCUSSIVE, DataConfig, SourceParams, default_harmonic,
                                 default_percussive, gen_harmonic, gen_percussive, make_dataset, make_sample,
                                 spectral_flatness, to_frame, write_wav)


def test_zero_amplitude_harmonic_is_silent():
    p = SourceParams(HARMONIC, (4.0, 4.0), (0.0, 0.0), (100.0, 100.0))
    assert np.all(gen_harmonic(p, np.random.default_rng(0), 128) == 0)


def test_single_partial_peaks_at_fundamental():
    p = SourceParams(HARMONIC, (5.0, 5.0), (1.0, 1.0), (np.inf, np.inf), max_partials=1)
    x = gen_harmonic(p, np.random.default_rng(0), 128)
    assert int(np.argmax(np.abs(np.fft.rfft(x)))) == 5
    np.testing.assert_allclose(np.abs(np.fft.rfft(x))[5], 64.0, rtol=1e-9)


def test_partials_respect_cutoff():
    p = SourceParams(HARMONIC, (9.0, 9.0), (1.0, 1.0), (np.inf, np.inf), max_partials=3, cutoff=20.0)
    for seed in range(20):
        spec = np.abs(np.fft.rfft(gen_harmonic(p, np.random.default_rng(seed), 128)))
        assert np.all(spec[20:] < 1e-9)


def test_harmonic_draws_are_weakly_correlated():
    p = default_harmonic()
    corr = [abs(np.corrcoef(gen_harmonic(p, np.random.default_rng(2 * k), 128),
                            gen_harmonic(p, np.random.default_rng(2 * k + 1), 128))[0, 1]) for k in range(100)]
    assert np.mean(corr) < 0.5


def test_zero_rate_percussive_is_silent():
    p = SourceParams(PERCUSSIVE, (0.0, 0.0), (1.0, 1.0), (5.0, 5.0))
    assert np.all(gen_percussive(p, np.random.default_rng(0), 128) == 0)


def test_single_burst_is_causal():
    p = SourceParams(PERCUSSIVE, (1.0, 1.0), (1.0, 1.0), (5.0, 5.0))
    record = {}
    x = gen_percussive(p, np.random.default_rng(3), 128, record=record)
    (onset,) = record["onsets"]
    assert np.all(x[:onset] == 0)
    assert np.sum(x[onset:] ** 2) > 0


def test_shared_tempo_aligns_rate_quantiles():
    cfg = DataConfig()
    for s in make_dataset(cfg, 20):
        h, p = s.params
        qh = (h["f0"] - cfg.harmonic.rate_range[0]) / np.ptp(cfg.harmonic.rate_range)
        qp = (p["rate"] - cfg.percussive.rate_range[0]) / np.ptp(cfg.percussive.rate_range)
        assert abs(qh - qp) < 1e-12


def test_independent_tempo_option():
    cfg = DataConfig(shared_tempo=False)
    q = []
    for s in make_dataset(cfg, 200):
        h, p = s.params
        q.append(((h["f0"] - 3.0) / 5.0, (p["rate"] - 2.0) / 2.0))
    q = np.array(q)
    assert abs(np.corrcoef(q.T)[0, 1]) < 0.2


def test_flatness_separates_sources():
    cfg = DataConfig()
    samples = make_dataset(cfg, 100)
    fh = np.array([spectral_flatness(s.stems[0][0]) for s in samples])
    fp = np.array([spectral_flatness(s.stems[1][0]) for s in samples])
    assert fp.mean() > fh.mean()
    values = np.concatenate([fh, fp])
    labels = np.concatenate([np.zeros(100), np.ones(100)])
    accuracy = max(np.mean((values > thr) == labels) for thr in np.unique(values))
    assert accuracy >= 0.95


def test_mixture_is_exact_sum_of_stems():
    samples = make_dataset(DataConfig(), 1000)
    worst = max(np.max(np.abs(s.mixture - sum(s.stems))) for s in samples)
    assert worst < 1e-12
    for s in samples[:50]:
        s.check()
        assert np.max(np.abs(s.mixture)) == pytest.approx(1.0, abs=1e-12)


def test_dataset_is_deterministic():
    a = make_dataset(DataConfig(seed=4), 5)
    b = make_dataset(DataConfig(seed=4), 5)
    assert all(np.array_equal(x.mixture, y.mixture) and x.params == y.params for x, y in zip(a, b))
    c = make_dataset(DataConfig(seed=5), 5)
    assert not np.array_equal(a[0].mixture, c[0].mixture)


def test_single_sample_dataset():
    (s,) = make_dataset(DataConfig(), 1)
    assert s.mixture.shape == (4, 128) and len(s.stems) == 2


def test_offset_matches_index():
    assert np.array_equal(make_dataset(DataConfig(), 1, offset=7)[0].mixture, make_sample(DataConfig(), 7).mixture)


def test_frame_channels():
    x = np.random.default_rng(0).standard_normal(128)
    frame = to_frame(x, 4)
    assert frame.shape == (4, 128) and np.array_equal(frame[0], x)
    with pytest.raises(ValueError):
        to_frame(x, 5)


def test_invalid_params():
    with pytest.raises(ValueError):
        SourceParams("noise", (1, 2), (1, 2), (1, 2))
    with pytest.raises(ValueError):
        SourceParams(HARMONIC, (3, 2), (1, 2), (1, 2))
    with pytest.raises(ValueError):
        make_dataset(DataConfig(), 0)


def test_wav_export(tmp_path):
    x = np.sin(np.linspace(0, 20, 400))
    write_wav(tmp_path / "a.wav", x)
    with wave.open(str(tmp_path / "a.wav")) as fh:
        assert (fh.getnchannels(), fh.getsampwidth(), fh.getframerate(), fh.getnframes()) == (1, 2, 8000, 400)
        pcm = np.frombuffer(fh.readframes(400), dtype="<i2")
    assert np.max(np.abs(pcm)) == 32767


def test_default_percussive_is_louder_than_harmonic_ceiling():
    assert default_percussive().amp_range[0] > default_harmonic().amp_range[1]


def test_band_copies_match_centred_convolution():
    from scipy.signal import firwin
    x = np.random.default_rng(1).standard_normal(128)
    np.testing.assert_array_equal(to_frame(x, 2)[1], np.convolve(x, firwin(17, 0.35), mode="same"))
    assert to_frame(x[:10], 4).shape == (4, 10)
