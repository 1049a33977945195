"""Dataset manifests, segment cutting, class rebalancing, synthetic corpora.

Manifests are UTF-8 JSON-lines files, one entry per line, with keys
audio_filepath, offset_s, duration_s, label, and optionally condition.
Segment cutting follows the fixed-length protocol: one central crop per
speech sample for training, strided windows elsewhere.
"""

import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from .rng import substream
from .wavio import Waveform, load_wav, save_wav

log = logging.getLogger(__name__)

LABELS = ("non_speech", "speech")
LABEL_TO_INDEX = {"non_speech": 0, "speech": 1}
CONDITIONS = ("clean", "noise", "music")

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_SEG_LEN_S = 0.63
DEFAULT_STRIDE_S = 0.15


class ManifestError(Exception):
    """A manifest line failed to parse or validate."""


class SegmentError(Exception):
    """A sample cannot be cut to the requested segment length."""


@dataclass
class ManifestEntry:
    audio_filepath: str
    offset_s: float
    duration_s: float
    label: str
    condition: str = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.offset_s < 0:
            raise ValueError("offset_s must be >= 0")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be > 0")
        if self.condition is not None and self.condition not in CONDITIONS:
            raise ValueError(f"condition must be one of {CONDITIONS}, got {self.condition!r}")

    def to_json(self):
        rec = {
            "audio_filepath": self.audio_filepath,
            "offset_s": self.offset_s,
            "duration_s": self.duration_s,
            "label": self.label,
        }
        if self.condition is not None:
            rec["condition"] = self.condition
        return json.dumps(rec)


@dataclass
class Segment:
    """A fixed-length waveform cut from a manifest entry."""

    waveform: Waveform
    label: str
    source: ManifestEntry
    start_in_source_s: float


@dataclass
class SplitSpec:
    ratios: tuple = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise ValueError("ratios must be three non-negative values")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"ratios must sum to 1, got {sum(self.ratios)}")


def read_manifest(path):
    """Parse a JSON-lines manifest; errors carry the offending line number."""
    entries = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                entries.append(ManifestEntry(
                    audio_filepath=rec["audio_filepath"],
                    offset_s=float(rec.get("offset_s", 0.0)),
                    duration_s=float(rec["duration_s"]),
                    label=rec["label"],
                    condition=rec.get("condition"),
                ))
            except (ValueError, KeyError, TypeError) as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
    return entries


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8") as f:
        for e in entries:
            f.write(e.to_json() + "\n")


def _apportion(n, ratios):
    """Split n items into integer counts by largest-remainder rounding."""
    quotas = [r * n for r in ratios]
    counts = [math.floor(q) for q in quotas]
    leftover = n - sum(counts)
    by_remainder = sorted(range(len(ratios)), key=lambda i: (counts[i] - quotas[i], i))
    for i in by_remainder[:leftover]:
        counts[i] += 1
    return counts


def split_manifest(entries, spec):
    """Partition entries into (train, val, test) per source file.

    Files are shuffled deterministically from the seed and apportioned by
    the split ratios, so no source file ever straddles two splits.
    """
    if not entries:
        raise ValueError("cannot split an empty manifest")
    files = []
    seen = set()
    for e in entries:
        if e.audio_filepath not in seen:
            seen.add(e.audio_filepath)
            files.append(e.audio_filepath)
    rng = substream(spec.seed, "split")
    order = [files[i] for i in rng.permutation(len(files))]
    n_train, n_val, _ = _apportion(len(order), spec.ratios)
    assignment = {}
    for i, path in enumerate(order):
        assignment[path] = 0 if i < n_train else (1 if i < n_train + n_val else 2)
    splits = ([], [], [])
    for e in entries:
        splits[assignment[e.audio_filepath]].append(e)
    return splits


def load_entry(entry, expected_sr=DEFAULT_SAMPLE_RATE, cache=None):
    """Load the audio span an entry points at.

    Rejects files whose sample rate differs from expected_sr (resampling is
    not supported). An optional dict cache avoids re-reading source files.
    """
    if cache is not None and entry.audio_filepath in cache:
        w = cache[entry.audio_filepath]
    else:
        w = load_wav(entry.audio_filepath)
        if cache is not None:
            cache[entry.audio_filepath] = w
    if expected_sr is not None and w.sample_rate != expected_sr:
        raise ValueError(
            f"{entry.audio_filepath}: sample rate {w.sample_rate} != {expected_sr} "
            "and resampling is not supported")
    start = int(round(entry.offset_s * w.sample_rate))
    n = int(round(entry.duration_s * w.sample_rate))
    if start + n > w.n_samples:
        raise ValueError(
            f"{entry.audio_filepath}: span {entry.offset_s:.3f}s+{entry.duration_s:.3f}s "
            "runs past the end of the file")
    return Waveform(w.samples[start:start + n], w.sample_rate)


def central_start(n_total, seg_n, sr):
    """Start sample of the training crop for a sample of n_total samples.

    1.0 s samples cut at 0.2 s when the segment length is the default
    0.63 s; every other duration takes the centered window rounded to the
    nearest sample.
    """
    if n_total < seg_n:
        raise SegmentError(f"sample of {n_total} samples is shorter than segment ({seg_n})")
    if n_total == sr and seg_n == int(round(DEFAULT_SEG_LEN_S * sr)):
        return int(round(0.2 * sr))
    return int(round((n_total - seg_n) / 2.0))


def strided_starts(n_total, seg_n, stride_n):
    """Start samples 0, stride, 2*stride, ... while the window fits."""
    if stride_n < 1:
        raise ValueError("stride must be at least one sample")
    if n_total < seg_n:
        return []
    return list(range(0, n_total - seg_n + 1, stride_n))


def make_train_segment(entry, seg_len_s=DEFAULT_SEG_LEN_S, expected_sr=DEFAULT_SAMPLE_RATE,
                       cache=None):
    """Cut the training crop of a speech sample as a Segment."""
    w = load_entry(entry, expected_sr, cache)
    seg_n = int(round(seg_len_s * w.sample_rate))
    try:
        start = central_start(w.n_samples, seg_n, w.sample_rate)
    except SegmentError as exc:
        raise SegmentError(f"{entry.audio_filepath}: {exc}") from exc
    cut = Waveform(w.samples[start:start + seg_n], w.sample_rate)
    return Segment(cut, entry.label, entry, entry.offset_s + start / w.sample_rate)


def make_strided_segments(entry, seg_len_s=DEFAULT_SEG_LEN_S, stride_s=DEFAULT_STRIDE_S,
                          expected_sr=DEFAULT_SAMPLE_RATE, cache=None):
    """Cut strided fixed-length segments; short entries yield an empty list."""
    w = load_entry(entry, expected_sr, cache)
    sr = w.sample_rate
    seg_n = int(round(seg_len_s * sr))
    stride_n = int(round(stride_s * sr))
    starts = strided_starts(w.n_samples, seg_n, stride_n)
    if not starts:
        log.warning("%s: %.3fs entry shorter than %.3fs segment, skipped",
                    entry.audio_filepath, w.duration_s, seg_len_s)
        return []
    return [
        Segment(Waveform(w.samples[s:s + seg_n], sr), entry.label, entry,
                entry.offset_s + s / sr)
        for s in starts
    ]


def rebalance(items, seed, *keys):
    """Equalize class counts by uniformly subsampling the majority class.

    Works on anything with a .label attribute (segments or manifest
    entries). Input order is preserved; already balanced input is returned
    unchanged. Extra keys separate the draw stream, e.g. per split.
    """
    by_label = {}
    for i, item in enumerate(items):
        by_label.setdefault(item.label, []).append(i)
    if len(by_label) < 2:
        raise ValueError(f"rebalance needs both classes, got only {sorted(by_label)}")
    n_min = min(len(v) for v in by_label.values())
    rng = substream(seed, "rebalance", *keys)
    keep = []
    for label in sorted(by_label):
        idxs = by_label[label]
        if len(idxs) > n_min:
            chosen = rng.choice(len(idxs), size=n_min, replace=False)
            idxs = [idxs[int(c)] for c in chosen]
        keep.extend(idxs)
    return [items[i] for i in sorted(keep)]


def segments_from_manifest(entries, expected_sr=DEFAULT_SAMPLE_RATE, cache=None):
    """Materialize manifest entries that already denote exact segment spans."""
    if cache is None:
        cache = {}
    return [Segment(load_entry(e, expected_sr, cache), e.label, e, e.offset_s)
            for e in entries]


def synth_corpus(out_dir, n_speech, n_noise, seed, sr=DEFAULT_SAMPLE_RATE, duration_s=1.0):
    """Generate a deterministic synthetic corpus and return its manifest.

    Speech stand-ins are harmonic stacks (f0 in [90, 300] Hz, 3 to 6
    harmonics) under 4 to 8 Hz amplitude modulation; non-speech files are
    band-limited white or pink noise. Files are 32-bit float WAVs, bit
    identical for identical seeds.
    """
    os.makedirs(out_dir, exist_ok=True)
    n = int(round(duration_s * sr))
    t = np.arange(n) / sr
    entries = []
    for i in range(n_speech):
        rng = substream(seed, "synth", "speech", i)
        path = os.path.join(out_dir, f"speech_{i:04d}.wav")
        save_wav(path, Waveform(_synth_speech(t, rng), sr), fmt="float32")
        entries.append(ManifestEntry(path, 0.0, duration_s, "speech", "clean"))
    for i in range(n_noise):
        rng = substream(seed, "synth", "noise", i)
        path = os.path.join(out_dir, f"noise_{i:04d}.wav")
        save_wav(path, Waveform(_synth_noise(n, sr, rng), sr), fmt="float32")
        entries.append(ManifestEntry(path, 0.0, duration_s, "non_speech"))
    return entries


def _synth_speech(t, rng):
    f0 = rng.uniform(90.0, 300.0)
    n_harm = int(rng.integers(3, 7))
    x = np.zeros_like(t)
    for h in range(1, n_harm + 1):
        amp = rng.uniform(0.5, 1.0) / h
        phase = rng.uniform(0.0, 2.0 * np.pi)
        x += amp * np.sin(2.0 * np.pi * h * f0 * t + phase)
    am_rate = rng.uniform(4.0, 8.0)
    am_depth = rng.uniform(0.5, 1.0)
    am_phase = rng.uniform(0.0, 2.0 * np.pi)
    x *= 0.5 * (1.0 + am_depth * np.sin(2.0 * np.pi * am_rate * t + am_phase))
    return x * (rng.uniform(0.3, 0.9) / np.max(np.abs(x)))


def _synth_noise(n, sr, rng):
    x = rng.standard_normal(n)
    spec = np.fft.rfft(x)
    f = np.fft.rfftfreq(n, 1.0 / sr)
    if rng.random() < 0.5:  # pink: 1/sqrt(f) amplitude rolloff
        spec[1:] /= np.sqrt(f[1:] / f[1])
    f_lo = rng.uniform(50.0, 3000.0)
    f_hi = rng.uniform(f_lo + 500.0, 7800.0)
    spec[(f < f_lo) | (f > f_hi)] = 0.0
    x = np.fft.irfft(spec, n)
    return x * (rng.uniform(0.3, 0.9) / np.max(np.abs(x)))


def concat_recording(entries, expected_sr=DEFAULT_SAMPLE_RATE, cache=None):
    """Concatenate manifest entries into one recording plus label spans.

    Returns (waveform, spans) where each span is (start_s, end_s, condition):
    speech entries keep their condition (default clean) and non-speech spans
    are tagged no_speech, matching the frame-evaluation label set.
    """
    if cache is None:
        cache = {}
    pieces, spans = [], []
    cursor = 0.0
    for e in entries:
        w = load_entry(e, expected_sr, cache)
        if e.label == "speech":
            cond = e.condition or "clean"
        else:
            cond = "no_speech"
        spans.append((cursor, cursor + w.duration_s, cond))
        pieces.append(w.samples)
        cursor += w.duration_s
    if not pieces:
        raise ValueError("no entries to concatenate")
    sr = expected_sr if expected_sr is not None else DEFAULT_SAMPLE_RATE
    return Waveform(np.concatenate(pieces), sr), spans
