import numpy as np
import pytest

from marblevad.features import (FeatureConfig, FrameSpec, build_mel_filterbank,
                                dct_matrix, frame_signal, hz_to_mel, log_mel,
                                mel_to_hz, mfcc, normalize, power_spectrum)
from marblevad.rng import substream
from marblevad.wavio import Waveform

SR = 16000


def noise_wave(n, seed=0, sr=SR):
    return Waveform(substream(seed, "t").standard_normal(n), sr)


def test_mfcc_geometry_63ms_segment():
    w = noise_wave(10080)
    fm = mfcc(w, FrameSpec(), build_mel_filterbank(64, 512, SR), 64)
    assert fm.values.shape == (64, 64)


def test_log_mel_geometry():
    w = noise_wave(10080)
    fm = log_mel(w, FrameSpec(), build_mel_filterbank(64, 512, SR))
    assert fm.values.shape == (64, 64)


def test_frame_count_rule():
    # centered framing: n_frames = n_samples // hop + 1
    for n in (160, 10080, 16000, 321):
        frames = frame_signal(Waveform(np.zeros(n), SR), FrameSpec())
        assert frames.shape == (n // 160 + 1, 400)


def test_tiny_input_reflects():
    # 160 samples is shorter than one 400-sample window; reflection
    # indexing must still produce two frames without error
    w = Waveform(np.arange(160, dtype=float), SR)
    frames = frame_signal(w, FrameSpec(window="rect"))
    assert frames.shape == (2, 400)
    assert np.all(np.abs(frames) <= 159)


def test_reflection_matches_numpy_pad_when_applicable():
    x = np.arange(1000, dtype=float)
    spec = FrameSpec(window="rect")
    frames = frame_signal(Waveform(x, SR), spec)
    padded = np.pad(x, (200, 400), mode="reflect")
    for i in range(frames.shape[0]):
        start = i * 160
        assert np.array_equal(frames[i], padded[start:start + 400])


def test_hann_window_applied():
    x = np.ones(1000)
    spec = FrameSpec()
    frames = frame_signal(Waveform(x, SR), spec)
    expected = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(400) / 400)  # periodic
    assert np.allclose(frames[3], expected, atol=1e-12)


def test_power_spectrum_matches_brute_force_dft():
    rng = substream(1, "dft")
    frames = rng.standard_normal((4, 64))
    ps = power_spectrum(frames, 64)
    n = 64
    k = np.arange(n)[:, None] * np.arange(n)[None, :]
    dft = np.exp(-2j * np.pi * k / n)
    ref = np.abs(frames @ dft.T)[:, :33] ** 2
    assert np.max(np.abs(ps - ref) / np.maximum(np.abs(ref), 1e-12)) < 1e-9


def test_power_spectrum_rejects_long_frames():
    with pytest.raises(ValueError):
        power_spectrum(np.zeros((1, 600)), 512)


def test_mel_scale_oracles():
    assert hz_to_mel(0.0) == 0.0
    assert hz_to_mel(700.0) == pytest.approx(781.1728387480312, abs=1e-12)
    assert mel_to_hz(hz_to_mel(1234.5)) == pytest.approx(1234.5, rel=1e-12)


def test_filterbank_shape_and_partition():
    fb = build_mel_filterbank(64, 512, SR)
    assert fb.weights.shape == (64, 257)
    assert np.all(fb.weights >= 0) and np.all(fb.weights <= 1 + 1e-12)
    assert np.all(fb.weights.sum(axis=1) > 0)
    # triangles of adjacent filters sum to one between the outermost centers
    col = fb.weights.sum(axis=0)
    freqs = np.arange(257) * (SR / 512)
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(8000.0), 66))
    interior = (freqs > edges[1]) & (freqs < edges[-2])
    assert np.allclose(col[interior], 1.0, atol=1e-9)


def test_filterbank_empty_filter_rejected():
    # too many filters for the FFT resolution leaves empty rows
    with pytest.raises(ValueError):
        build_mel_filterbank(64, 64, SR)


def test_log_floor_value():
    w = Waveform(np.zeros(10080), SR)
    fm = log_mel(w, FrameSpec(), build_mel_filterbank(64, 512, SR))
    assert np.all(fm.values == -23.025850929940457)


def test_dct_matrix_orthonormal():
    d = dct_matrix(64)
    assert np.allclose(d @ d.T, np.eye(64), atol=1e-12)
    assert np.allclose(d[0], np.sqrt(1.0 / 64))


def test_mfcc_is_dct_of_log_mel():
    w = noise_wave(10080, seed=5)
    spec = FrameSpec()
    fb = build_mel_filterbank(64, 512, SR)
    lm = log_mel(w, spec, fb)
    fm = mfcc(w, spec, fb, 20)
    assert np.allclose(fm.values, (dct_matrix(64) @ lm.values)[:20], atol=1e-12)


def test_normalize_rows():
    w = noise_wave(10080, seed=6)
    fm = normalize(log_mel(w, FrameSpec(), build_mel_filterbank(64, 512, SR)))
    assert np.allclose(fm.values.mean(axis=1), 0.0, atol=1e-9)
    assert np.allclose(fm.values.std(axis=1), 1.0, atol=1e-6)


def test_normalize_constant_row_floored():
    # the std floor keeps constant rows near zero instead of dividing by ~0
    w = Waveform(np.zeros(10080), SR)
    fm = normalize(log_mel(w, FrameSpec(), build_mel_filterbank(64, 512, SR)))
    assert np.max(np.abs(fm.values)) < 1e-8


def test_normalize_needs_two_frames():
    from marblevad.features import FeatureMatrix
    with pytest.raises(ValueError):
        normalize(FeatureMatrix(np.ones((3, 1)), "mfcc", FrameSpec()))


def test_log_mel_filterbank_mismatch_rejected():
    w = noise_wave(10080)  # 16 kHz waveform vs an 8 kHz filterbank
    fb = build_mel_filterbank(64, 512, 8000, f_max=4000.0)
    with pytest.raises(ValueError):
        log_mel(w, FrameSpec(), fb)


def test_filterbank_range_validation():
    with pytest.raises(ValueError):
        build_mel_filterbank(64, 512, 8000)  # default f_max exceeds Nyquist


def test_feature_config_round_trip():
    fc = FeatureConfig(kind="log_mel", n_mels=32, normalize=False)
    assert FeatureConfig.from_dict(fc.to_dict()) == fc
    assert fc.n_features == 32
    assert FeatureConfig(kind="mfcc", n_coeffs=13).n_features == 13


def test_feature_config_rejects_unknown_kind():
    with pytest.raises(ValueError):
        FeatureConfig(kind="plp")


def test_feature_config_extract_kinds_differ():
    w = noise_wave(10080, seed=8)
    a = FeatureConfig(kind="mfcc").extract(w)
    b = FeatureConfig(kind="log_mel").extract(w)
    assert a.shape == b.shape == (64, 64)
    assert not np.allclose(a, b)


def test_rect_window():
    x = np.arange(1000, dtype=float)
    frames = frame_signal(Waveform(x, SR), FrameSpec(window="rect"))
    assert np.array_equal(frames[1], np.pad(x, (200, 400), mode="reflect")[160:560])


def test_unknown_window_rejected():
    with pytest.raises(ValueError):
        frame_signal(noise_wave(1000), FrameSpec(window="hamming"))
