"""Training-time augmentations on waveforms and feature matrices.

One probability gate covers the waveform-level pair (time shift plus white
noise) jointly; the feature-space masks always apply during training. All
draws come from the caller's RNG stream in a fixed order, so a fixed seed
fixes every outcome bit-exactly.
"""

from dataclasses import dataclass, replace

import numpy as np

from .wavio import Waveform


@dataclass
class AugmentConfig:
    p_wave_augment: float = 0.8
    shift_ms: tuple = (-5.0, 5.0)
    noise_db: tuple = (-90.0, -46.0)
    n_time_masks: int = 2
    max_time_mask: int = 25
    n_freq_masks: int = 2
    max_freq_mask: int = 15
    n_cutout_masks: int = 5
    cutout_max_t: int = 25
    cutout_max_f: int = 15
    mask_fill: float = 0.0

    def __post_init__(self):
        self.shift_ms = tuple(float(v) for v in self.shift_ms)
        self.noise_db = tuple(float(v) for v in self.noise_db)
        if not 0.0 <= self.p_wave_augment <= 1.0:
            raise ValueError("p_wave_augment must be in [0, 1]")
        if self.shift_ms[0] > self.shift_ms[1] or self.noise_db[0] > self.noise_db[1]:
            raise ValueError("ranges must be (low, high) with low <= high")
        if min(self.n_time_masks, self.n_freq_masks, self.n_cutout_masks) < 0:
            raise ValueError("mask counts must be >= 0")

    @classmethod
    def disabled(cls):
        """A config under which every augmentation is the identity."""
        return cls(p_wave_augment=0.0, n_time_masks=0, n_freq_masks=0, n_cutout_masks=0)


def time_shift(w, shift_range_ms, rng):
    """Shift content by a uniform draw from the range; vacated samples are zero."""
    ms = rng.uniform(shift_range_ms[0], shift_range_ms[1])
    n = int(round(ms / 1000.0 * w.sample_rate))
    if abs(n) > w.n_samples:
        raise ValueError(f"shift of {ms:.1f} ms exceeds waveform duration")
    y = np.zeros_like(w.samples)
    if n > 0:
        y[n:] = w.samples[:-n]
    elif n < 0:
        y[:n] = w.samples[-n:]
    else:
        y[:] = w.samples
    return Waveform(y, w.sample_rate)


def add_white_noise(w, db_range, rng):
    """Add i.i.d. Gaussian noise at a level drawn uniformly in dB full scale.

    A level L maps to standard deviation 10^(L/20) relative to amplitude 1.
    """
    if not -200.0 <= db_range[0] <= db_range[1] <= 0.0:
        raise ValueError("noise dB range must lie within [-200, 0]")
    level_db = rng.uniform(db_range[0], db_range[1])
    std = 10.0 ** (level_db / 20.0)
    return Waveform(w.samples + rng.normal(0.0, std, w.n_samples), w.sample_rate)


def augment_waveform(w, cfg, rng):
    """Apply the jointly gated waveform augmentations (shift then noise)."""
    if cfg.p_wave_augment > 0.0 and rng.random() < cfg.p_wave_augment:
        w = time_shift(w, cfg.shift_ms, rng)
        w = add_white_noise(w, cfg.noise_db, rng)
    return w


def _mask_time(vals, max_width, fill, rng):
    n_t = vals.shape[1]
    width = min(int(rng.integers(0, max_width + 1)), n_t)
    start = int(rng.integers(0, n_t - width + 1))
    vals[:, start:start + width] = fill


def _mask_freq(vals, max_width, fill, rng):
    n_f = vals.shape[0]
    width = min(int(rng.integers(0, max_width + 1)), n_f)
    start = int(rng.integers(0, n_f - width + 1))
    vals[start:start + width, :] = fill


def spec_augment(fm, cfg, rng):
    """Contiguous time and frequency masks with uniform widths and positions.

    Widths beyond the matrix extent are clamped to it. Draw order per mask
    is width then start; time masks precede frequency masks.
    """
    vals = fm.values.copy()
    for _ in range(cfg.n_time_masks):
        _mask_time(vals, cfg.max_time_mask, cfg.mask_fill, rng)
    for _ in range(cfg.n_freq_masks):
        _mask_freq(vals, cfg.max_freq_mask, cfg.mask_fill, rng)
    return replace(fm, values=vals)


def spec_cutout(fm, cfg, rng):
    """Rectangular time-frequency masks; extents are at least one cell.

    Draw order per rectangle: time extent, frequency extent, time start,
    frequency start.
    """
    vals = fm.values.copy()
    n_f, n_t = vals.shape
    for _ in range(cfg.n_cutout_masks):
        t_w = min(int(rng.integers(1, cfg.cutout_max_t + 1)), n_t)
        f_w = min(int(rng.integers(1, cfg.cutout_max_f + 1)), n_f)
        t0 = int(rng.integers(0, n_t - t_w + 1))
        f0 = int(rng.integers(0, n_f - f_w + 1))
        vals[f0:f0 + f_w, t0:t0 + t_w] = cfg.mask_fill
    return replace(fm, values=vals)


def augment_features(fm, cfg, rng):
    """SpecAugment masks followed by cutout rectangles."""
    return spec_cutout(spec_augment(fm, cfg, rng), cfg, rng)
