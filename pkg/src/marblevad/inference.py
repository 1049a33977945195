"""Long audio to per-10ms-frame speech scores via overlapped segments.

Two prediction approaches: score a window at every 10 ms shift, or score
sliding segments at a chosen overlap and smooth onto the frame grid with a
majority-vote (median) or probability-average (mean) filter. The frame
grid is anchored at t=0; trailing content is handled by one end-aligned
segment rather than padding.
"""

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .corpus import LABEL_TO_INDEX
from .features import FeatureConfig
from .wavio import Waveform

log = logging.getLogger(__name__)

FRAME_LEN_S = 0.010
SCORE_BATCH = 128


@dataclass
class SegmentScore:
    start_s: float
    end_s: float
    p_speech: float


@dataclass
class FrameTimeline:
    frame_len_s: float
    scores: np.ndarray
    decisions: np.ndarray

    @property
    def n_frames(self):
        return self.scores.size


def frame_count(n_samples, sr):
    """Number of 10 ms frames covering n_samples, computed in integers."""
    frame_n = int(round(FRAME_LEN_S * sr))
    return -(-n_samples // frame_n)


def _model_feature(model):
    return getattr(model, "features", None) or FeatureConfig()


def _score_windows(model, samples, sr, starts, seg_n):
    """Speech probability for windows [s, s+seg_n) at the given starts."""
    feature = _model_feature(model)
    speech = LABEL_TO_INDEX["speech"]
    scores = np.empty(len(starts))
    for lo in range(0, len(starts), SCORE_BATCH):
        batch = starts[lo:lo + SCORE_BATCH]
        x = np.stack([feature.extract(Waveform(samples[s:s + seg_n], sr)) for s in batch])
        scores[lo:lo + len(batch)] = model.predict_proba(x.astype(np.float32))[:, speech]
    return scores


def sliding_scores(model, w, seg_len_s=0.63, overlap=0.875):
    """Score sliding segments with hop = seg_len * (1 - overlap).

    Starts at 0 and advances by the hop while the segment fits; one final
    end-aligned segment is appended if the tail is not already covered.
    Audio shorter than one segment is zero-padded into a single segment.
    """
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must be in [0, 1)")
    sr = w.sample_rate
    seg_n = int(round(seg_len_s * sr))
    samples = w.samples
    if w.n_samples < seg_n:
        log.warning("audio of %.3fs shorter than %.3fs segment, zero-padding",
                    w.duration_s, seg_len_s)
        samples = np.zeros(seg_n)
        samples[:w.n_samples] = w.samples
        starts = [0]
    else:
        hop_n = max(1, int(round(seg_n * (1.0 - overlap))))
        starts = list(range(0, w.n_samples - seg_n + 1, hop_n))
        last = w.n_samples - seg_n
        if starts[-1] != last:
            starts.append(last)
    p = _score_windows(model, samples, sr, starts, seg_n)
    return [SegmentScore(s / sr, (s + seg_n) / sr, float(pi)) for s, pi in zip(starts, p)]


def shift_window_starts(n_samples, sr, seg_len_s):
    """Window start per 10 ms frame; overrunning windows align to the end."""
    seg_n = int(round(seg_len_s * sr))
    frame_n = int(round(FRAME_LEN_S * sr))
    n_frames = frame_count(n_samples, sr)
    last = max(0, n_samples - seg_n)
    return [min(f * frame_n, last) for f in range(n_frames)]


def frames_by_shift(model, w, seg_len_s=0.63):
    """Approach 1: the window starting at each frame start scores that frame."""
    sr = w.sample_rate
    seg_n = int(round(seg_len_s * sr))
    samples = w.samples
    if w.n_samples < seg_n:
        log.warning("audio of %.3fs shorter than %.3fs segment, zero-padding",
                    w.duration_s, seg_len_s)
        samples = np.zeros(seg_n)
        samples[:w.n_samples] = w.samples
    starts = shift_window_starts(w.n_samples, sr, seg_len_s)
    unique = sorted(set(starts))
    p = _score_windows(model, samples, sr, unique, seg_n)
    by_start = dict(zip(unique, p))
    scores = np.asarray([by_start[s] for s in starts])
    return FrameTimeline(FRAME_LEN_S, scores, scores >= 0.5)


def _coverage_slices(scores, n_samples, sr):
    """Frame index range [lo, hi] each segment overlaps, half-open in samples."""
    frame_n = int(round(FRAME_LEN_S * sr))
    n_frames = frame_count(n_samples, sr)
    out = []
    for sc in scores:
        s = int(round(sc.start_s * sr))
        e = int(round(sc.end_s * sr))
        lo = max(0, s // frame_n)
        hi = min(n_frames - 1, (e - 1) // frame_n)
        out.append((lo, hi))
    return out, n_frames


def smooth_median(scores, n_samples, sr):
    """Majority vote of covering segments' hard decisions; ties go to speech.

    The frame score is the fraction of covering segments voting speech.
    """
    spans, n_frames = _coverage_slices(scores, n_samples, sr)
    votes = np.zeros(n_frames)
    total = np.zeros(n_frames)
    for sc, (lo, hi) in zip(scores, spans):
        total[lo:hi + 1] += 1
        if sc.p_speech >= 0.5:
            votes[lo:hi + 1] += 1
    if np.any(total == 0):
        raise ValueError("a frame has no covering segment")
    return FrameTimeline(FRAME_LEN_S, votes / total, 2 * votes >= total)


def smooth_mean(scores, n_samples, sr):
    """Average speech probability of covering segments; decide at 0.5."""
    spans, n_frames = _coverage_slices(scores, n_samples, sr)
    acc = np.zeros(n_frames)
    total = np.zeros(n_frames)
    for sc, (lo, hi) in zip(scores, spans):
        acc[lo:hi + 1] += sc.p_speech
        total[lo:hi + 1] += 1
    if np.any(total == 0):
        raise ValueError("a frame has no covering segment")
    mean = acc / total
    return FrameTimeline(FRAME_LEN_S, mean, mean >= 0.5)


def timeline_from_segments(scores, n_samples, sr):
    """Unsmoothed timeline: each frame takes the nearest-centered segment."""
    if not scores:
        raise ValueError("no segment scores")
    n_frames = frame_count(n_samples, sr)
    centers = np.asarray([(sc.start_s + sc.end_s) / 2.0 for sc in scores])
    p = np.asarray([sc.p_speech for sc in scores])
    mids = (np.arange(n_frames) + 0.5) * FRAME_LEN_S
    nearest = np.abs(mids[None, :] - centers[:, None]).argmin(axis=0)
    frame_scores = p[nearest]
    return FrameTimeline(FRAME_LEN_S, frame_scores, frame_scores >= 0.5)


def decisions_to_intervals(timeline, min_duration_s=0.0):
    """Run-length encode decisions; short runs merge into the longer neighbor."""
    dec = timeline.decisions
    if dec.size == 0:
        return []
    runs = []
    for d in dec:
        if runs and runs[-1][0] == bool(d):
            runs[-1][1] += 1
        else:
            runs.append([bool(d), 1])
    if min_duration_s > 0 and len(runs) > 1:
        min_frames = math.ceil(min_duration_s / timeline.frame_len_s - 1e-9)
        while len(runs) > 1:
            short = [i for i, r in enumerate(runs) if r[1] < min_frames]
            if not short:
                break
            i = min(short, key=lambda j: runs[j][1])
            if i == 0:
                target = 1
            elif i == len(runs) - 1:
                target = i - 1
            else:
                target = i - 1 if runs[i - 1][1] >= runs[i + 1][1] else i + 1
            runs[target][1] += runs[i][1]
            del runs[i]
            j = 0  # coalesce equal-label neighbors created by the merge
            while j + 1 < len(runs):
                if runs[j][0] == runs[j + 1][0]:
                    runs[j][1] += runs[j + 1][1]
                    del runs[j + 1]
                else:
                    j += 1
    intervals = []
    cursor = 0
    for label, count in runs:
        intervals.append((cursor * timeline.frame_len_s,
                          (cursor + count) * timeline.frame_len_s,
                          "speech" if label else "non_speech"))
        cursor += count
    return intervals


def write_frames_csv(path, timeline):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["frame_start_s", "score", "decision"])
        for i in range(timeline.n_frames):
            wr.writerow([f"{i * timeline.frame_len_s:.3f}",
                         f"{timeline.scores[i]:.6f}", int(timeline.decisions[i])])


def read_frames_csv(path):
    starts, scores, decisions = [], [], []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            starts.append(float(row["frame_start_s"]))
            scores.append(float(row["score"]))
            decisions.append(bool(int(row["decision"])))
    if not scores:
        raise ValueError(f"{path}: no frame rows")
    frame_len = starts[1] - starts[0] if len(starts) > 1 else FRAME_LEN_S
    return FrameTimeline(frame_len, np.asarray(scores), np.asarray(decisions))


def write_intervals_csv(path, intervals):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["start_s", "end_s", "label"])
        for start, end, label in intervals:
            wr.writerow([f"{start:.3f}", f"{end:.3f}", label])
