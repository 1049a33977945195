"""Command-line pipeline: synth -> prepare -> train -> infer -> eval.

Every subcommand is deterministic given --seed; configuration comes from
an optional dotted-key file with --set overrides on top. Outputs are
WAVs, JSON-lines manifests, checkpoints, and headered CSVs that compose
across subcommands without hand editing.
"""

import argparse
import logging
import os
import sys

from . import config as cfgmod
from . import corpus, evaluation, inference, marblenet, training
from .config import ConfigError
from .corpus import ManifestEntry, ManifestError, SegmentError, SplitSpec
from .marblenet import CheckpointError, MarbleNet
from .wavio import WavError, load_wav

log = logging.getLogger(__name__)


def _parse_sets(pairs):
    out = {}
    for item in pairs or []:
        key, eq, value = item.partition("=")
        if not eq or not key.strip():
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = cfgmod.parse_value(value.strip())
    return out


def _run_config(args):
    return cfgmod.load_run_config(getattr(args, "config", None),
                                  _parse_sets(getattr(args, "set", None)),
                                  getattr(args, "seed", None))


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def cmd_synth(args):
    cfg = _run_config(args)
    entries = corpus.synth_corpus(args.out, args.n_speech, args.n_noise,
                                  cfg.seed, sr=cfg.data.sample_rate,
                                  duration_s=args.duration_s)
    manifest = os.path.join(args.out, "manifest.jsonl")
    corpus.write_manifest(manifest, entries)
    print(f"wrote {len(entries)} files ({args.n_speech} speech, "
          f"{args.n_noise} non-speech) and {manifest}")
    return 0


def _cut_entries(entries, seg_len_s, stride_s, sr, train_mode):
    """Segment-span manifest rows cut arithmetically from sample durations."""
    seg_n = int(round(seg_len_s * sr))
    stride_n = int(round(stride_s * sr))
    out = []
    for e in entries:
        n_total = int(round(e.duration_s * sr))
        if train_mode and e.label == "speech":
            try:
                starts = [corpus.central_start(n_total, seg_n, sr)]
            except SegmentError as exc:
                raise SegmentError(f"{e.audio_filepath}: {exc}") from exc
        else:
            starts = corpus.strided_starts(n_total, seg_n, stride_n)
            if not starts:
                log.warning("%s: %.3fs entry shorter than %.3fs segment, skipped",
                            e.audio_filepath, e.duration_s, seg_len_s)
        out.extend(ManifestEntry(e.audio_filepath, e.offset_s + s / sr,
                                 seg_n / sr, e.label, e.condition)
                   for s in starts)
    return out


def cmd_prepare(args):
    cfg = _run_config(args)
    entries = corpus.read_manifest(args.manifest)
    if not entries:
        raise ManifestError(f"{args.manifest}: manifest is empty")
    splits = corpus.split_manifest(entries, SplitSpec(cfg.data.ratios, cfg.seed))
    os.makedirs(args.out, exist_ok=True)
    for name, split, train_mode in (("train", splits[0], True),
                                    ("val", splits[1], False),
                                    ("test", splits[2], False)):
        cut = _cut_entries(split, cfg.data.seg_len_s, cfg.data.stride_s,
                           cfg.data.sample_rate, train_mode)
        if len({c.label for c in cut}) == 2:
            cut = corpus.rebalance(cut, cfg.seed, name)
        else:
            log.warning("%s split has a single class, not rebalanced", name)
        path = os.path.join(args.out, f"{name}.jsonl")
        corpus.write_manifest(path, cut)
        by_label = {lb: sum(1 for c in cut if c.label == lb) for lb in corpus.LABELS}
        print(f"{name}: {len(cut)} segments from {len(split)} samples "
              f"({by_label['speech']} speech, {by_label['non_speech']} non-speech)"
              f" -> {path}")
    return 0


def cmd_train(args):
    cfg = _run_config(args)
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    if cfg.model.input_features != cfg.features.n_features:
        raise ConfigError(
            f"model.input_features {cfg.model.input_features} != "
            f"{cfg.features.n_features} features produced by {cfg.features.kind}")
    cache = {}
    train_segs = corpus.segments_from_manifest(
        corpus.read_manifest(os.path.join(args.data, "train.jsonl")),
        cfg.data.sample_rate, cache)
    val_segs = corpus.segments_from_manifest(
        corpus.read_manifest(os.path.join(args.data, "val.jsonl")),
        cfg.data.sample_rate, cache)
    model = MarbleNet(cfg.model, seed=cfg.seed)
    model.features = cfg.features
    tlog = training.train(model, train_segs, val_segs, cfg.train,
                          feature=cfg.features, seed=cfg.seed)
    _ensure_parent(args.out)
    marblenet.save(model, args.out)
    log_path = args.log or args.out + ".log.csv"
    tlog.write_csv(log_path)
    print(f"saved checkpoint ({model.param_count()} parameters) -> {args.out}")
    print(f"training log ({len(tlog.steps)} steps, {len(tlog.epochs)} epochs) "
          f"-> {log_path}")
    if tlog.epochs:
        final = tlog.epochs[-1]
        print(f"final val_loss {final['val_loss']:.4f} val_acc {final['val_acc']:.4f}"
              f" (best epoch {tlog.best_epoch}, val_loss {tlog.best_val_loss:.4f})")
    return 0


def cmd_infer(args):
    model = marblenet.load(args.ckpt)
    w = load_wav(args.wav)
    if args.approach == "shift":
        timeline = inference.frames_by_shift(model, w, args.seg_len)
    else:
        scores = inference.sliding_scores(model, w, args.seg_len, args.overlap)
        if args.filter == "median":
            timeline = inference.smooth_median(scores, w.n_samples, w.sample_rate)
        elif args.filter == "mean":
            timeline = inference.smooth_mean(scores, w.n_samples, w.sample_rate)
        else:
            timeline = inference.timeline_from_segments(scores, w.n_samples,
                                                        w.sample_rate)
    _ensure_parent(args.out)
    inference.write_frames_csv(args.out, timeline)
    intervals = inference.decisions_to_intervals(timeline, args.min_duration)
    intervals_path = args.intervals_out or args.out + ".intervals.csv"
    inference.write_intervals_csv(intervals_path, intervals)
    speech_frac = float(timeline.decisions.mean())
    print(f"{timeline.n_frames} frames ({speech_frac:.1%} speech) -> {args.out}")
    print(f"{len(intervals)} intervals -> {intervals_path}")
    return 0


def cmd_eval(args):
    cfg = _run_config(args)
    target = args.target_fpr if args.target_fpr is not None else cfg.eval.target_fpr
    timeline = inference.read_frames_csv(args.scores)
    intervals = evaluation.read_labels_csv(args.labels)
    conditions, _ = evaluation.align_labels(intervals, timeline.n_frames,
                                            timeline.frame_len_s)
    report = evaluation.condition_report(timeline.scores, conditions, target)
    _ensure_parent(args.out)
    evaluation.write_report_csv(args.out, report)
    covered = conditions != None  # noqa: E711
    curve = evaluation.roc_curve(timeline.scores[covered],
                                 conditions[covered] != evaluation.NO_SPEECH)
    roc_path = args.roc_out or args.out + ".roc.csv"
    evaluation.write_roc_csv(roc_path, curve)
    print(evaluation.report_text(report), end="")
    print(f"report -> {args.out}")
    print(f"roc ({curve.n_points} points) -> {roc_path}")
    return 0


def cmd_describe(args):
    print(cfgmod.config_text(_run_config(args)), end="")
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="dotted-key config file")
    common.add_argument("--seed", type=int, default=None,
                        help="root seed (default: config, then $VAD_SEED, then 0)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true",
                        help="log at INFO level")

    p = argparse.ArgumentParser(prog="marblevad",
                                description="Voice activity detection pipeline.")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", parents=[common],
                        help="generate a synthetic labeled corpus")
    ps.add_argument("--out", required=True)
    ps.add_argument("--n-speech", type=int, default=100)
    ps.add_argument("--n-noise", type=int, default=100)
    ps.add_argument("--duration-s", type=float, default=1.0)
    ps.set_defaults(func=cmd_synth)

    pp = sub.add_parser("prepare", parents=[common],
                        help="split a manifest and cut segment manifests")
    pp.add_argument("--manifest", required=True)
    pp.add_argument("--out", required=True)
    pp.set_defaults(func=cmd_prepare)

    pt = sub.add_parser("train", parents=[common],
                        help="train on prepared segment manifests")
    pt.add_argument("--data", required=True, help="directory from prepare")
    pt.add_argument("--out", required=True, help="checkpoint path")
    pt.add_argument("--epochs", type=int, default=None)
    pt.add_argument("--log", default=None, help="training log CSV path")
    pt.set_defaults(func=cmd_train)

    pi = sub.add_parser("infer", parents=[common],
                        help="frame scores and intervals for one WAV")
    pi.add_argument("--ckpt", required=True)
    pi.add_argument("--wav", required=True)
    pi.add_argument("--out", required=True, help="frame CSV path")
    pi.add_argument("--intervals-out", default=None)
    pi.add_argument("--seg-len", type=float, default=0.63)
    pi.add_argument("--overlap", type=float, default=0.875)
    pi.add_argument("--filter", choices=cfgmod.FILTERS, default="median")
    pi.add_argument("--approach", choices=cfgmod.APPROACHES, default="sliding")
    pi.add_argument("--min-duration", type=float, default=0.0)
    pi.set_defaults(func=cmd_infer)

    pe = sub.add_parser("eval", parents=[common],
                        help="frame-level report from scores and labels")
    pe.add_argument("--scores", required=True, help="frame CSV from infer")
    pe.add_argument("--labels", required=True, help="CSV start_s,end_s,condition")
    pe.add_argument("--target-fpr", type=float, default=None)
    pe.add_argument("--out", required=True, help="report CSV path")
    pe.add_argument("--roc-out", default=None)
    pe.set_defaults(func=cmd_eval)

    pd = sub.add_parser("describe", parents=[common],
                        help="print the resolved configuration")
    pd.set_defaults(func=cmd_describe)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ManifestError, SegmentError, WavError, CheckpointError,
            ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
