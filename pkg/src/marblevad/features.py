"""MFCC and log-mel front ends sized to a 64x64 matrix for 0.63 s segments.

The chain is: reflection-centered framing with a periodic Hann window,
power spectrum over a zero-padded FFT, triangular mel filterbank on the
HTK mel scale, natural log with a 1e-10 power floor, and (for MFCC) an
orthonormal DCT-II. Normalization is per segment, per feature row.
"""

from dataclasses import dataclass, field, replace, asdict
from functools import lru_cache

import numpy as np

POWER_FLOOR = 1e-10
STD_FLOOR = 1e-5

FEATURE_KINDS = ("mfcc", "log_mel")


@dataclass
class FrameSpec:
    win_len_s: float = 0.025
    hop_s: float = 0.010
    fft_size: int = 512
    window: str = "hann"  # hann | rect
    center_pad: bool = True

    def __post_init__(self):
        if self.hop_s <= 0:
            raise ValueError("hop must be positive")
        if self.window not in ("hann", "rect"):
            raise ValueError(f"unknown window {self.window!r}")

    def win_samples(self, sr):
        return int(round(self.win_len_s * sr))

    def hop_samples(self, sr):
        return int(round(self.hop_s * sr))


@dataclass
class MelFilterbank:
    weights: np.ndarray  # (n_mels, fft_size // 2 + 1)
    n_mels: int
    f_min: float
    f_max: float
    sr: int
    fft_size: int


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (n_features, n_frames)
    kind: str
    frame_spec: FrameSpec

    @property
    def n_features(self):
        return self.values.shape[0]

    @property
    def n_frames(self):
        return self.values.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (np.power(10.0, np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _window_values(kind, n):
    if kind == "rect":
        return np.ones(n)
    # periodic Hann
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _reflect_indices(idx, n):
    """Fold arbitrary integer indices into [0, n) by boundary reflection."""
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def frame_signal(w, spec):
    """Slice a waveform into windowed frames, shape (n_frames, win_len).

    With center padding the signal is reflection-extended by half a window
    on each side and n_frames = floor(n_samples / hop) + 1, which produces
    exactly 64 frames for a 0.63 s segment at 16 kHz with the defaults.
    """
    x = w.samples
    if x.size == 0:
        raise ValueError("cannot frame an empty waveform")
    sr = w.sample_rate
    win_n = spec.win_samples(sr)
    hop_n = spec.hop_samples(sr)
    if win_n < 1 or hop_n < 1:
        raise ValueError("window and hop must be at least one sample")
    if win_n > spec.fft_size:
        raise ValueError(f"window of {win_n} samples exceeds fft_size {spec.fft_size}")
    if spec.center_pad:
        n_frames = x.size // hop_n + 1
        offset = -(win_n // 2)
    else:
        if x.size < win_n:
            raise ValueError("signal shorter than one window (center_pad disabled)")
        n_frames = 1 + (x.size - win_n) // hop_n
        offset = 0
    pos = offset + hop_n * np.arange(n_frames)[:, None] + np.arange(win_n)[None, :]
    frames = x[_reflect_indices(pos, x.size)]
    return frames * _window_values(spec.window, win_n)


def power_spectrum(frames, fft_size):
    """|DFT|^2 of zero-padded frames over bins 0..fft_size/2."""
    x = np.asarray(frames, dtype=np.float64)
    if x.shape[-1] > fft_size:
        raise ValueError(f"frame length {x.shape[-1]} exceeds fft_size {fft_size}")
    spec = np.fft.rfft(x, n=fft_size, axis=-1)
    return spec.real ** 2 + spec.imag ** 2


def build_mel_filterbank(n_mels=64, fft_size=512, sr=16000, f_min=0.0, f_max=8000.0):
    """Triangular filters on mel-spaced edges between f_min and f_max."""
    if not 0.0 <= f_min < f_max <= sr / 2:
        raise ValueError(f"need 0 <= f_min < f_max <= sr/2, got [{f_min}, {f_max}] at sr {sr}")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    bin_hz = np.arange(fft_size // 2 + 1) * (sr / fft_size)
    weights = np.zeros((n_mels, bin_hz.size))
    for m in range(n_mels):
        lo, ctr, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (bin_hz - lo) / (ctr - lo)
        down = (hi - bin_hz) / (hi - ctr)
        weights[m] = np.maximum(0.0, np.minimum(up, down))
    if np.any(weights.sum(axis=1) <= 0.0):
        raise ValueError(
            f"{n_mels} mel filters leave empty rows at fft_size {fft_size}; "
            "reduce n_mels or raise fft_size")
    return MelFilterbank(weights, n_mels, float(f_min), float(f_max), int(sr), int(fft_size))


@lru_cache(maxsize=16)
def _cached_filterbank(n_mels, fft_size, sr, f_min, f_max):
    return build_mel_filterbank(n_mels, fft_size, sr, f_min, f_max)


@lru_cache(maxsize=8)
def dct_matrix(n):
    """Orthonormal DCT-II matrix, D @ D.T = I."""
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    d = np.cos(np.pi * k * (2 * m + 1) / (2 * n)) * np.sqrt(2.0 / n)
    d[0] *= np.sqrt(0.5)
    return d


def _check_fb(w, spec, fb):
    if fb.sr != w.sample_rate:
        raise ValueError(f"filterbank built for {fb.sr} Hz, waveform is {w.sample_rate} Hz")
    if fb.fft_size != spec.fft_size:
        raise ValueError(f"filterbank fft_size {fb.fft_size} != frame spec {spec.fft_size}")


def log_mel(w, spec, fb):
    """Log mel-filterbank energies, shape (n_mels, n_frames)."""
    _check_fb(w, spec, fb)
    frames = frame_signal(w, spec)
    ps = power_spectrum(frames, spec.fft_size)
    mel = ps @ fb.weights.T
    return FeatureMatrix(np.log(np.maximum(mel, POWER_FLOOR)).T, "log_mel", spec)


def mfcc(w, spec, fb, n_coeffs=64):
    """Mel-frequency cepstral coefficients: DCT-II of the log-mel columns."""
    if n_coeffs > fb.n_mels:
        raise ValueError(f"n_coeffs {n_coeffs} exceeds n_mels {fb.n_mels}")
    lm = log_mel(w, spec, fb)
    vals = (dct_matrix(fb.n_mels) @ lm.values)[:n_coeffs]
    return FeatureMatrix(vals, "mfcc", spec)


def normalize(fm):
    """Zero-mean, unit-std per feature row, computed over this segment."""
    if fm.n_frames < 2:
        raise ValueError("normalization needs at least 2 frames")
    mu = fm.values.mean(axis=1, keepdims=True)
    sd = np.maximum(fm.values.std(axis=1, keepdims=True), STD_FLOOR)
    return replace(fm, values=(fm.values - mu) / sd)


@dataclass
class FeatureConfig:
    """Everything needed to turn a waveform into the model's input matrix."""

    kind: str = "mfcc"
    n_mels: int = 64
    n_coeffs: int = 64
    win_len_s: float = 0.025
    hop_s: float = 0.010
    fft_size: int = 512
    window: str = "hann"
    f_min: float = 0.0
    f_max: float = 8000.0
    normalize: bool = True

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"feature kind must be one of {FEATURE_KINDS}, got {self.kind!r}")

    @property
    def n_features(self):
        return self.n_coeffs if self.kind == "mfcc" else self.n_mels

    def frame_spec(self):
        return FrameSpec(self.win_len_s, self.hop_s, self.fft_size, self.window)

    def filterbank(self, sr):
        return _cached_filterbank(self.n_mels, self.fft_size, int(sr),
                                  float(self.f_min), float(self.f_max))

    def extract_matrix(self, w):
        spec = self.frame_spec()
        fb = self.filterbank(w.sample_rate)
        if self.kind == "mfcc":
            fm = mfcc(w, spec, fb, self.n_coeffs)
        else:
            fm = log_mel(w, spec, fb)
        return normalize(fm) if self.normalize else fm

    def extract(self, w):
        return self.extract_matrix(w).values

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)
