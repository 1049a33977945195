import numpy as np
import pytest

from marblevad.features import FeatureConfig
from marblevad.marblenet import (CheckpointError, CheckpointMagicError,
                                 CheckpointShapeError,
                                 CheckpointTruncatedError, MarbleNet,
                                 MarbleNetConfig, load, param_count_formula,
                                 save)

TOY = dict(n_blocks=1, n_subblocks=1, channels=4, input_features=4,
           block_kernels=(3,), prologue_kernel=3, prologue_channels=8,
           epilogue1_kernel=3, epilogue1_dilation=1, epilogue1_channels=8,
           epilogue2_channels=8, n_classes=2, dropout_p=0.0)


def toy_model(seed=1, **overrides):
    return MarbleNet(MarbleNetConfig(**{**TOY, **overrides}), seed=seed)


def test_default_param_count():
    model = MarbleNet(MarbleNetConfig())
    assert model.param_count() == 89154


def test_default_param_breakdown():
    model = MarbleNet(MarbleNetConfig())
    assert dict(model.param_breakdown()) == {
        "prologue": 9152,
        "block0": 23360,
        "block1": 14592,
        "block2": 14848,
        "epilogue1": 10304,
        "epilogue2": 16640,
        "classifier": 258,
    }
    assert sum(n for _, n in model.param_breakdown()) == model.param_count()


def test_toy_param_count_hand_oracle():
    model = toy_model()
    # separable layer: in*k (depthwise, k > 1 only) + out*in (pointwise) + 2*out (bn)
    prologue = 4 * 3 + 8 * 4 + 2 * 8
    sub0 = 8 * 3 + 4 * 8 + 2 * 4
    res = 4 * 8 + 2 * 4
    epilogue1 = 4 * 3 + 8 * 4 + 2 * 8
    epilogue2 = 8 * 8 + 2 * 8
    classifier = 8 * 2 + 2
    assert prologue + sub0 + res + epilogue1 + epilogue2 + classifier == 322
    assert model.param_count() == 322


@pytest.mark.parametrize("cfg", [
    MarbleNetConfig(),
    MarbleNetConfig(**TOY),
    MarbleNetConfig(n_blocks=2, n_subblocks=3, channels=32, input_features=20,
                    block_kernels=(5, 7), prologue_channels=48,
                    epilogue1_channels=40, epilogue2_channels=24, n_classes=3),
    MarbleNetConfig(n_blocks=0, block_kernels=()),
])
def test_formula_matches_built_model(cfg):
    assert param_count_formula(cfg) == MarbleNet(cfg).param_count()


def test_forward_shapes():
    model = MarbleNet(MarbleNetConfig())
    rng = np.random.default_rng(0)
    assert model.forward(rng.standard_normal((64, 64))).data.shape == (1, 2)
    assert model.forward(rng.standard_normal((3, 64, 25))).data.shape == (3, 2)
    assert model.forward(rng.standard_normal((2, 64, 1))).data.shape == (2, 2)


def test_forward_rejects_bad_shapes():
    model = toy_model()
    with pytest.raises(ValueError):
        model.forward(np.zeros((5, 10)))  # 5 features, config wants 4
    with pytest.raises(ValueError):
        model.forward(np.zeros((1, 1, 4, 10)))


def test_train_forward_needs_rng():
    model = toy_model(dropout_p=0.2)
    x = np.zeros((2, 4, 10))
    with pytest.raises(ValueError):
        model.forward(x, train=True)
    model.forward(x, train=True, rng=np.random.default_rng(0))
    toy_model().forward(x, train=True)  # dropout_p=0 needs no rng


def test_predict_proba_rows_sum_to_one():
    model = toy_model()
    p = model.predict_proba(np.random.default_rng(1).standard_normal((5, 4, 12)))
    assert p.shape == (5, 2)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(p >= 0)


def test_eval_forward_deterministic():
    model = toy_model()
    x = np.random.default_rng(2).standard_normal((3, 4, 9))
    a = model.forward(x).data
    b = model.forward(x).data
    assert np.array_equal(a, b)


def test_init_seed_controls_weights():
    w0 = toy_model(seed=0).prologue.pw.data
    w0b = toy_model(seed=0).prologue.pw.data
    w1 = toy_model(seed=1).prologue.pw.data
    assert np.array_equal(w0, w0b)
    assert not np.array_equal(w0, w1)


def test_train_dropout_varies_with_rng():
    model = toy_model(dropout_p=0.5)
    x = np.random.default_rng(3).standard_normal((2, 4, 20))
    a = model.forward(x, train=True, rng=np.random.default_rng(0)).data
    b = model.forward(x, train=True, rng=np.random.default_rng(99)).data
    assert not np.array_equal(a, b)


def test_residual_path_carries_signal():
    # zero the sub-block so the block output is relu(residual branch) alone
    model = toy_model()
    blk = model.blocks[0]
    sub = blk.subs[0]
    sub.pw.data[...] = 0.0
    sub.bn.gamma.data[...] = 0.0
    sub.bn.beta.data[...] = 0.0
    sub.bn.running_var[...] = 1.0
    blk.res.bn.running_var[...] = 1.0
    x = np.random.default_rng(4).standard_normal((2, 4, 16)).astype(np.float32)
    from marblevad import nn
    h = nn.relu(model.prologue.forward(nn.Tensor(x), False))
    expect = nn.relu(blk.res.forward(h, False)).data
    got = blk.forward(h, False, None).data
    assert np.allclose(got, expect, atol=1e-6)


def test_zero_block_model():
    cfg = MarbleNetConfig(n_blocks=0, block_kernels=(), input_features=4,
                          prologue_channels=6, epilogue1_channels=6,
                          epilogue2_channels=6)
    model = MarbleNet(cfg)
    assert model.forward(np.zeros((1, 4, 8))).data.shape == (1, 2)


@pytest.mark.parametrize("bad", [
    dict(n_blocks=2),                      # kernels tuple has length 3
    dict(prologue_kernel=10),              # even kernel
    dict(block_kernels=(13, 15, -1)),
    dict(dropout_p=1.0),
    dict(n_subblocks=0),
    dict(channels=0),
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        MarbleNetConfig(**bad)


def test_config_round_trip():
    cfg = MarbleNetConfig(**TOY)
    again = MarbleNetConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert isinstance(again.block_kernels, tuple)


# ---- checkpoints ----

def test_checkpoint_round_trip(tmp_path):
    model = toy_model(seed=7)
    for bn in model.batchnorms():
        bn.running_mean[...] = np.random.default_rng(8).standard_normal(bn.running_mean.shape)
        bn.running_var[...] = 0.5
        bn.updates = 4
    model.features = FeatureConfig(kind="log_mel", n_mels=40)
    path = tmp_path / "m.ckpt"
    save(model, path)
    again = load(path)

    x = np.random.default_rng(9).standard_normal((3, 4, 11))
    assert np.array_equal(model.forward(x).data, again.forward(x).data)
    assert again.cfg == model.cfg
    assert all(bn.updates == 4 for bn in again.batchnorms())
    assert again.features is not None
    assert again.features.kind == "log_mel"
    assert again.features.n_mels == 40


def test_checkpoint_without_features(tmp_path):
    model = toy_model()
    path = tmp_path / "m.ckpt"
    save(model, path)
    assert load(path).features is None


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"NOTAVADFILE" + b"\x00" * 64)
    with pytest.raises(CheckpointMagicError):
        load(path)


def test_checkpoint_truncated(tmp_path):
    model = toy_model()
    path = tmp_path / "m.ckpt"
    save(model, path)
    raw = path.read_bytes()
    short = tmp_path / "short.ckpt"

    short.write_bytes(raw[:4])
    with pytest.raises(CheckpointTruncatedError):
        load(short)
    short.write_bytes(raw[:len(raw) - 10])
    with pytest.raises(CheckpointTruncatedError):
        load(short)


def test_checkpoint_trailing_bytes(tmp_path):
    model = toy_model()
    path = tmp_path / "m.ckpt"
    save(model, path)
    path.write_bytes(path.read_bytes() + b"\x00" * 8)
    with pytest.raises(CheckpointError):
        load(path)


def test_checkpoint_manifest_mismatch(tmp_path):
    # rewrite the header so one declared shape disagrees with the config
    import json
    import struct

    model = toy_model()
    path = tmp_path / "m.ckpt"
    save(model, path)
    raw = path.read_bytes()
    (hlen,) = struct.unpack_from("<I", raw, 6)
    header = json.loads(raw[10:10 + hlen])
    header["arrays"][0]["shape"] = [1, 1]
    hj = json.dumps(header).encode()
    path.write_bytes(raw[:6] + struct.pack("<I", len(hj)) + hj + raw[10 + hlen:])
    with pytest.raises(CheckpointShapeError):
        load(path)
