"""The training recipe: warmup-hold-poly2 schedule, batching, augmentation.

Each step draws a shuffled batch, augments waveforms behind the
probability gate, extracts and normalizes features, applies the feature
masks, and takes one momentum-SGD step at the scheduled rate. Validation
runs in eval mode once per epoch and never mutates the model.
"""

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .augment import AugmentConfig, augment_waveform, augment_features
from .corpus import LABEL_TO_INDEX
from .features import FeatureConfig
from .marblenet import MarbleNet
from .rng import substream

log = logging.getLogger(__name__)

EVAL_BATCH = 256


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 128
    max_lr: float = 0.01
    min_lr: float = 0.001
    warmup_ratio: float = 0.05
    hold_ratio: float = 0.45
    poly_power: float = 2.0
    momentum: float = 0.9
    weight_decay: float = 0.001
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    augment_enabled: bool = True

    def __post_init__(self):
        if self.warmup_ratio + self.hold_ratio > 1.0 + 1e-9:
            raise ValueError("warmup_ratio + hold_ratio must be <= 1")
        if self.min_lr > self.max_lr:
            raise ValueError("min_lr must not exceed max_lr")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)    # (step, lr, loss)
    epochs: list = field(default_factory=list)   # per-epoch metric dicts
    best_epoch: int = -1
    best_val_loss: float = math.inf

    def write_csv(self, path):
        """One CSV with a step row per step and an epoch row per epoch."""
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["kind", "step", "epoch", "lr", "loss",
                         "train_acc", "val_loss", "val_acc"])
            for step, lr, loss in self.steps:
                wr.writerow(["step", step, "", f"{lr:.8g}", f"{loss:.8g}", "", "", ""])
            for rec in self.epochs:
                wr.writerow(["epoch", "", rec["epoch"], "", "",
                             f"{rec['train_acc']:.6f}", f"{rec['val_loss']:.8g}",
                             f"{rec['val_acc']:.6f}"])


def lr_at(step, total_steps, cfg):
    """Warmup linearly to max_lr, hold, then 2nd-order poly decay to min_lr."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return cfg.max_lr
    warm = cfg.warmup_ratio * total_steps
    hold_end = warm + cfg.hold_ratio * total_steps
    if step < warm:
        return cfg.max_lr * step / warm
    if step <= hold_end:
        return cfg.max_lr
    p = (step - hold_end) / (total_steps - hold_end)
    return cfg.min_lr + (cfg.max_lr - cfg.min_lr) * (1.0 - p) ** cfg.poly_power


def _batch_features(segments, idxs, feature, aug, seed, epoch):
    xs, ys = [], []
    for i in idxs:
        i = int(i)
        seg = segments[i]
        if aug is not None:
            rng = substream(seed, "augment", epoch, i)
            w = augment_waveform(seg.waveform, aug, rng)
            fm = feature.extract_matrix(w)
            fm = augment_features(fm, aug, rng)
            xs.append(fm.values)
        else:
            xs.append(feature.extract(seg.waveform))
        ys.append(LABEL_TO_INDEX[seg.label])
    return np.stack(xs).astype(np.float32), np.asarray(ys)


def _eval_loss_acc(model, x, y):
    total_nll = 0.0
    correct = 0
    for lo in range(0, len(x), EVAL_BATCH):
        xb, yb = x[lo:lo + EVAL_BATCH], y[lo:lo + EVAL_BATCH]
        loss, probs = nn.softmax_cross_entropy(model.forward(xb, train=False), yb)
        total_nll += float(loss.data) * len(xb)
        correct += int((probs.argmax(axis=1) == yb).sum())
    return total_nll / len(x), correct / len(x)


def train(model, train_segments, val_segments, cfg, feature=None, seed=0,
          restore_best=True):
    """Run the full recipe and return a TrainLog.

    Deterministic given the seed under single-threaded execution. With
    restore_best the model is left at its lowest-validation-loss state;
    the log records both that epoch and the final metrics.
    """
    if not train_segments or not val_segments:
        raise ValueError("train and validation sets must be non-empty")
    if len({s.label for s in train_segments}) < 2:
        raise ValueError("training set must contain both classes")
    feature = feature or FeatureConfig()
    aug = cfg.augment if cfg.augment_enabled else None

    n = len(train_segments)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    drop_rng = substream(seed, "dropout")
    params = model.parameters()

    val_x = np.stack([feature.extract(s.waveform) for s in val_segments]).astype(np.float32)
    val_y = np.asarray([LABEL_TO_INDEX[s.label] for s in val_segments])

    tlog = TrainLog()
    best_state = None
    step = 0
    for epoch in range(cfg.epochs):
        perm = substream(seed, "shuffle", epoch).permutation(n)
        correct = 0
        for lo in range(0, n, cfg.batch_size):
            idxs = perm[lo:lo + cfg.batch_size]
            x, y = _batch_features(train_segments, idxs, feature, aug, seed, epoch)
            lr = lr_at(step, total_steps, cfg)
            try:
                logits = model.forward(x, train=True, rng=drop_rng)
                loss, probs = nn.softmax_cross_entropy(logits, y)
            except ValueError as exc:
                raise RuntimeError(f"aborting at step {step} (lr {lr:.6g}): {exc}") from exc
            if not np.isfinite(loss.data):
                raise RuntimeError(f"non-finite loss at step {step} (lr {lr:.6g})")
            for p in params:
                p.tensor.zero_grad()
            loss.backward()
            nn.sgd_step(params, lr, cfg.momentum, cfg.weight_decay)
            correct += int((probs.argmax(axis=1) == y).sum())
            tlog.steps.append((step, lr, float(loss.data)))
            step += 1
        val_loss, val_acc = _eval_loss_acc(model, val_x, val_y)
        tlog.epochs.append({"epoch": epoch, "train_acc": correct / n,
                            "val_loss": val_loss, "val_acc": val_acc})
        if val_loss < tlog.best_val_loss:
            tlog.best_val_loss = val_loss
            tlog.best_epoch = epoch
            best_state = ([a.copy() for _, a in model.named_arrays()],
                          [bn.updates for bn in model.batchnorms()])
    if restore_best and best_state is not None:
        arrays, updates = best_state
        for (_, live), saved in zip(model.named_arrays(), arrays):
            live[...] = saved
        for bn, u in zip(model.batchnorms(), updates):
            bn.updates = u
    return tlog


def evaluate_segments(model, segments, feature=None):
    """Eval-mode segment accuracy plus per-class confusion counts."""
    if not segments:
        raise ValueError("no segments to evaluate")
    feature = feature or FeatureConfig()
    x = np.stack([feature.extract(s.waveform) for s in segments]).astype(np.float32)
    y = np.asarray([LABEL_TO_INDEX[s.label] for s in segments])
    index_to_label = {v: k for k, v in LABEL_TO_INDEX.items()}
    confusion = {t: {p: 0 for p in LABEL_TO_INDEX} for t in LABEL_TO_INDEX}
    correct = 0
    for lo in range(0, len(x), EVAL_BATCH):
        probs = model.predict_proba(x[lo:lo + EVAL_BATCH])
        pred = probs.argmax(axis=1)
        yb = y[lo:lo + EVAL_BATCH]
        correct += int((pred == yb).sum())
        for t, p in zip(yb, pred):
            confusion[index_to_label[int(t)]][index_to_label[int(p)]] += 1
    return correct / len(segments), confusion


def feature_ablation(model_cfg, train_segments, val_segments, eval_segments,
                     cfg, base_feature=None, seed=0, kinds=("mfcc", "log_mel")):
    """Train one model per feature kind and tabulate held-out metrics.

    Returns (results, report) where results maps kind to a dict with
    accuracy and segment-level AUROC, and report is a small text table.
    """
    from .evaluation import roc_curve, auroc  # local import to avoid a cycle

    base_feature = base_feature or FeatureConfig()
    results = {}
    for kind in kinds:
        feature = replace(base_feature, kind=kind)
        model = MarbleNet(model_cfg, seed=seed)
        train(model, train_segments, val_segments, cfg, feature, seed=seed)
        acc, _ = evaluate_segments(model, eval_segments, feature)
        x = np.stack([feature.extract(s.waveform) for s in eval_segments]).astype(np.float32)
        scores = []
        for lo in range(0, len(x), EVAL_BATCH):
            scores.append(model.predict_proba(x[lo:lo + EVAL_BATCH])[:, LABEL_TO_INDEX["speech"]])
        scores = np.concatenate(scores)
        positive = np.asarray([s.label == "speech" for s in eval_segments])
        results[kind] = {"accuracy": acc, "auroc": auroc(roc_curve(scores, positive))}
    lines = [f"{'feature':<12} {'accuracy':>9} {'auroc':>9}"]
    for kind, r in results.items():
        lines.append(f"{kind:<12} {r['accuracy']:>9.4f} {r['auroc']:>9.4f}")
    return results, "\n".join(lines)
