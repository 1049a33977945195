"""Shared fixtures: a tiny corpus for unit tests and the desk-scale
pipeline artifacts reused across the acceptance suite."""

import time

import pytest

from marblevad import cli, corpus, marblenet

ACC_SEED = 11

_verdicts = []


def record_verdict(num, ok, detail):
    """One pass/fail line per acceptance criterion, echoed in the summary."""
    line = f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'}: {detail}"
    _verdicts.append((num, line))
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_verdicts):
        terminalreporter.write_line(line)


def run_cli(*argv):
    """Invoke the CLI in-process; fail loudly on nonzero exit."""
    code = cli.main([str(a) for a in argv])
    assert code == 0, f"CLI {argv[0]} exited {code}"


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory):
    """12 + 12 file synthetic corpus with its manifest path."""
    root = tmp_path_factory.mktemp("mini_corpus")
    run_cli("synth", "--out", root, "--n-speech", 12, "--n-noise", 12,
            "--seed", 7)
    return root / "manifest.jsonl"


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    """Desk-scale pipeline: 100+100 corpus, prepare, 50-epoch training.

    Returns paths plus the wall-clock seconds the three stages took.
    Augmentation is disabled for this fit-capacity run; the augmentation
    behavior checks train their own models.
    """
    root = tmp_path_factory.mktemp("desk")
    corpus_dir = root / "corpus"
    prep_dir = root / "prep"
    ckpt = root / "model.ckpt"
    t0 = time.time()
    run_cli("synth", "--out", corpus_dir, "--n-speech", 100, "--n-noise", 100,
            "--seed", ACC_SEED)
    run_cli("prepare", "--manifest", corpus_dir / "manifest.jsonl",
            "--out", prep_dir, "--seed", ACC_SEED)
    run_cli("train", "--data", prep_dir, "--out", ckpt, "--seed", ACC_SEED,
            "--epochs", 50, "--set", "train.batch_size=32",
            "--set", "train.augment_enabled=false")
    elapsed = time.time() - t0
    return {"corpus_dir": corpus_dir, "manifest": corpus_dir / "manifest.jsonl",
            "prep_dir": prep_dir, "ckpt": ckpt, "seconds": elapsed}


@pytest.fixture(scope="session")
def desk_model(desk):
    return marblenet.load(desk["ckpt"])


@pytest.fixture(scope="session")
def desk_segments(desk):
    """Materialized segments for each desk split."""
    cache = {}
    out = {}
    for name in ("train", "val", "test"):
        entries = corpus.read_manifest(desk["prep_dir"] / f"{name}.jsonl")
        out[name] = corpus.segments_from_manifest(entries, cache=cache)
    return out
