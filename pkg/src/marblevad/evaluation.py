"""Frame-level evaluation: condition-tagged labels, ROC, AUROC, TPR at FPR.

Frames take the condition of the labeled interval containing their
midpoint. The three speech conditions form one positive class against
no_speech; per-condition TPRs are read off at a single global threshold
chosen so the FPR on no_speech frames hits the target.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .corpus import CONDITIONS
from .inference import FRAME_LEN_S

NO_SPEECH = "no_speech"
INTERVAL_CONDITIONS = CONDITIONS + (NO_SPEECH,)


@dataclass
class LabeledInterval:
    start_s: float
    end_s: float
    condition: str

    def __post_init__(self):
        if self.condition not in INTERVAL_CONDITIONS:
            raise ValueError(f"unknown condition {self.condition!r}")
        if not self.start_s < self.end_s:
            raise ValueError("interval must satisfy start < end")


@dataclass
class RocCurve:
    """Staircase ROC; point 0 is (0, 0) at threshold +inf.

    Cumulative true/false positive counts are kept as exact integers so
    the trapezoidal area is computed without rounding.
    """

    thresholds: np.ndarray
    cum_tp: np.ndarray
    cum_fp: np.ndarray
    n_pos: int
    n_neg: int
    fpr: np.ndarray = field(init=False)
    tpr: np.ndarray = field(init=False)

    def __post_init__(self):
        self.fpr = self.cum_fp / self.n_neg
        self.tpr = self.cum_tp / self.n_pos

    @property
    def n_points(self):
        return self.thresholds.size


@dataclass
class EvalReport:
    target_fpr: float
    threshold: float
    tpr_by_condition: dict
    tpr_all: float
    auroc: float
    counts: dict
    n_excluded: int = 0

    def rates(self):
        out = dict(self.tpr_by_condition)
        out["all"] = self.tpr_all
        return out


def align_labels(intervals, n_frames, frame_len_s=FRAME_LEN_S):
    """Per-frame condition from the interval containing the frame midpoint.

    Intervals are half-open [start, end); a midpoint exactly on a boundary
    belongs to the right interval. Returns (conditions, n_excluded) where
    uncovered frames carry None.
    """
    ivs = sorted(intervals, key=lambda iv: iv.start_s)
    for prev, cur in zip(ivs, ivs[1:]):
        if cur.start_s < prev.end_s - 1e-9:
            raise ValueError(f"intervals overlap near {cur.start_s:.3f}s")
    starts = np.asarray([iv.start_s for iv in ivs])
    ends = np.asarray([iv.end_s for iv in ivs])
    mids = (np.arange(n_frames) + 0.5) * frame_len_s
    idx = np.searchsorted(starts, mids, side="right") - 1
    covered = (idx >= 0) & (mids < ends[np.maximum(idx, 0)])
    conditions = np.full(n_frames, None, dtype=object)
    for f in np.nonzero(covered)[0]:
        conditions[f] = ivs[idx[f]].condition
    return conditions, int(n_frames - covered.sum())


def roc_curve(scores, labels):
    """ROC over distinct thresholds descending; ties move diagonally."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D arrays")
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative frame")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    last_of_group = np.nonzero(np.append(s[1:] != s[:-1], True))[0]
    cum_tp = np.concatenate([[0], np.cumsum(y)[last_of_group]])
    cum_fp = np.concatenate([[0], np.cumsum(~y)[last_of_group]])
    thresholds = np.concatenate([[np.inf], s[last_of_group]])
    return RocCurve(thresholds, cum_tp.astype(np.int64),
                    cum_fp.astype(np.int64), n_pos, n_neg)


def auroc(curve):
    """Trapezoidal area, exact: 2*area*P*N accumulated in integers."""
    dfp = np.diff(curve.cum_fp)
    heights = curve.cum_tp[1:] + curve.cum_tp[:-1]
    area2 = int(np.dot(dfp, heights))
    return area2 / (2 * curve.n_pos * curve.n_neg)


def _bracket(curve, target_fpr):
    """Points i <= target <= j on the fpr axis and the blend weight."""
    if not 0.0 <= target_fpr <= 1.0:
        raise ValueError("target_fpr must be in [0, 1]")
    i = int(np.searchsorted(curve.fpr, target_fpr, side="right")) - 1
    if i >= curve.n_points - 1:
        return curve.n_points - 1, curve.n_points - 1, 0.0
    j = i + 1
    span = curve.fpr[j] - curve.fpr[i]
    lam = 0.0 if span == 0 else (target_fpr - curve.fpr[i]) / span
    return i, j, float(lam)


def tpr_at_fpr(curve, target_fpr=0.315):
    """(tpr, threshold) at the target FPR, linearly interpolated.

    The threshold is reported from the lower-FPR bracketing point.
    """
    i, j, lam = _bracket(curve, target_fpr)
    tpr = (1.0 - lam) * curve.tpr[i] + lam * curve.tpr[j]
    return float(tpr), float(curve.thresholds[i])


def _frac_at_or_above(scores, threshold):
    if scores.size == 0:
        return 0.0
    return float(np.mean(scores >= threshold))


def condition_report(scores, conditions, target_fpr=0.315):
    """Per-condition TPR at one global threshold, plus overall AUROC.

    The threshold is set so the FPR over no_speech frames equals the
    target (interpolated between staircase points); each condition's TPR
    is interpolated at the same pair of points, which keeps tpr_all the
    frame-count-weighted mean of the per-condition TPRs. Conditions with
    no frames are reported as None.
    """
    scores = np.asarray(scores, dtype=float)
    conditions = np.asarray(conditions, dtype=object)
    if scores.shape != conditions.shape:
        raise ValueError("scores and conditions must align")
    keep = conditions != None  # noqa: E711 (None entries mark excluded frames)
    n_excluded = int(scores.size - keep.sum())
    scores = scores[keep]
    conditions = conditions[keep]
    labels = conditions != NO_SPEECH
    curve = roc_curve(scores, labels)
    i, j, lam = _bracket(curve, target_fpr)
    thr_i = curve.thresholds[i]
    thr_j = curve.thresholds[j]

    def interp_tpr(subset):
        a = _frac_at_or_above(subset, thr_i)
        b = _frac_at_or_above(subset, thr_j)
        return (1.0 - lam) * a + lam * b

    counts = {c: int(np.sum(conditions == c)) for c in INTERVAL_CONDITIONS}
    tpr_by = {}
    for c in CONDITIONS:
        mask = conditions == c
        tpr_by[c] = interp_tpr(scores[mask]) if counts[c] else None
    return EvalReport(
        target_fpr=target_fpr,
        threshold=float(thr_i),
        tpr_by_condition=tpr_by,
        tpr_all=interp_tpr(scores[labels]),
        auroc=auroc(curve),
        counts=counts,
        n_excluded=n_excluded,
    )


def report_text(report):
    """Human-readable table: one TPR column per condition, then All."""
    cols = list(CONDITIONS) + ["all"]
    rates = report.rates()
    lines = [
        f"target FPR       {report.target_fpr:.3f}",
        f"threshold        {report.threshold:.6f}",
        f"AUROC            {report.auroc:.4f}",
        "condition        TPR      frames",
    ]
    for c in cols:
        n = sum(report.counts.values()) - report.counts[NO_SPEECH] if c == "all" \
            else report.counts[c]
        tpr = rates[c]
        shown = "absent" if tpr is None else f"{tpr:.4f}"
        lines.append(f"{c:<16} {shown:<8} {n}")
    lines.append(f"{NO_SPEECH:<16} {'':<8} {report.counts[NO_SPEECH]}")
    if report.n_excluded:
        lines.append(f"excluded frames  {report.n_excluded}")
    return "\n".join(lines) + "\n"


def write_report_csv(path, report):
    rates = report.rates()
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["metric", "value"])
        wr.writerow(["target_fpr", f"{report.target_fpr:.6f}"])
        wr.writerow(["threshold", f"{report.threshold:.6f}"])
        wr.writerow(["auroc", f"{report.auroc:.6f}"])
        for c in list(CONDITIONS) + ["all"]:
            v = rates[c]
            wr.writerow([f"tpr_{c}", "" if v is None else f"{v:.6f}"])
        for c in INTERVAL_CONDITIONS:
            wr.writerow([f"frames_{c}", report.counts[c]])
        wr.writerow(["frames_excluded", report.n_excluded])


def write_roc_csv(path, curve):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["threshold", "fpr", "tpr"])
        for k in range(curve.n_points):
            wr.writerow([f"{curve.thresholds[k]:.6f}",
                         f"{curve.fpr[k]:.6f}", f"{curve.tpr[k]:.6f}"])


def read_labels_csv(path):
    """Label CSV with header start_s,end_s,condition -> intervals."""
    intervals = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or \
                not {"start_s", "end_s", "condition"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header start_s,end_s,condition")
        for row in reader:
            intervals.append(LabeledInterval(float(row["start_s"]),
                                             float(row["end_s"]),
                                             row["condition"]))
    if not intervals:
        raise ValueError(f"{path}: no label rows")
    return intervals


def write_labels_csv(path, intervals):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["start_s", "end_s", "condition"])
        for iv in intervals:
            wr.writerow([f"{iv.start_s:.3f}", f"{iv.end_s:.3f}", iv.condition])


def evaluate_frames(timeline, intervals, target_fpr=0.315):
    """Full frame-level report for a timeline against labeled intervals."""
    conditions, _ = align_labels(intervals, timeline.n_frames,
                                 timeline.frame_len_s)
    return condition_report(timeline.scores, conditions, target_fpr)
