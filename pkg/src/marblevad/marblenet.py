"""The separable-convolution VAD network: build, count, forward, serialize.

Topology: a prologue separable block, B residual blocks of R sub-blocks
(depthwise then pointwise then batchnorm, with a pointwise+batchnorm
residual added before the final activation), a dilated separable epilogue,
a 1x1 epilogue, global time pooling, and a two-logit classifier. All convs
are bias-free; the classifier keeps its bias.
"""

import json
import math
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import nn
from .features import FeatureConfig
from .rng import substream

CHECKPOINT_MAGIC = b"MBVAD1"


class CheckpointError(Exception):
    """Base error for checkpoint I/O."""


class CheckpointMagicError(CheckpointError):
    """The file does not start with the expected magic."""


class CheckpointShapeError(CheckpointError):
    """The array manifest does not match the configured topology."""


class CheckpointTruncatedError(CheckpointError):
    """The file ends before the declared payload does."""


@dataclass
class MarbleNetConfig:
    n_blocks: int = 3
    n_subblocks: int = 2
    channels: int = 64
    input_features: int = 64
    block_kernels: tuple = (13, 15, 17)
    prologue_kernel: int = 11
    prologue_channels: int = 128
    epilogue1_kernel: int = 29
    epilogue1_dilation: int = 2
    epilogue1_channels: int = 128
    epilogue2_channels: int = 128
    n_classes: int = 2
    dropout_p: float = 0.1

    def __post_init__(self):
        self.block_kernels = tuple(int(k) for k in self.block_kernels)
        self.validate()

    def validate(self):
        if self.n_blocks != len(self.block_kernels):
            raise ValueError(f"n_blocks {self.n_blocks} != len(block_kernels) "
                             f"{len(self.block_kernels)}")
        kernels = self.block_kernels + (self.prologue_kernel, self.epilogue1_kernel)
        if any(k < 1 or k % 2 == 0 for k in kernels):
            raise ValueError(f"all kernels must be odd and positive, got {kernels}")
        if min(self.channels, self.input_features, self.prologue_channels,
               self.epilogue1_channels, self.epilogue2_channels, self.n_classes) < 1:
            raise ValueError("channel counts must be positive")
        if self.n_subblocks < 1:
            raise ValueError("n_subblocks must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")

    def to_dict(self):
        d = asdict(self)
        d["block_kernels"] = list(self.block_kernels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, shape).astype(dtype)


class _SeparableConv:
    """Depthwise (when kernel > 1) plus pointwise convolution with batchnorm."""

    def __init__(self, name, in_ch, out_ch, kernel, dilation, rng, dtype=np.float32):
        self.name = name
        self.kernel = kernel
        self.dilation = dilation
        self.dw = None
        if kernel > 1:
            self.dw = nn.Parameter(f"{name}.dw",
                                   _kaiming_uniform(rng, (in_ch, kernel), kernel, dtype))
        self.pw = nn.Parameter(f"{name}.pw",
                               _kaiming_uniform(rng, (out_ch, in_ch), in_ch, dtype))
        self.bn = nn.BatchNormState(f"{name}.bn", out_ch, dtype=dtype)

    def forward(self, x, train):
        if self.dw is not None:
            x = nn.conv1d_depthwise(x, self.dw.tensor, self.dilation)
        x = nn.conv1d_pointwise(x, self.pw.tensor)
        return nn.batchnorm1d(x, self.bn, train)

    def parameters(self):
        ps = [] if self.dw is None else [self.dw]
        return ps + [self.pw, self.bn.gamma, self.bn.beta]

    def named_arrays(self):
        out = [(p.name, p.data) for p in self.parameters()]
        out.append((f"{self.bn.name}.running_mean", self.bn.running_mean))
        out.append((f"{self.bn.name}.running_var", self.bn.running_var))
        return out


class _Block:
    """R sub-blocks plus a pointwise+batchnorm residual projection."""

    def __init__(self, name, in_ch, out_ch, kernel, n_sub, dropout_p, rng):
        self.name = name
        self.dropout_p = dropout_p
        self.subs = [
            _SeparableConv(f"{name}.sub{i}", in_ch if i == 0 else out_ch, out_ch, kernel, 1, rng)
            for i in range(n_sub)
        ]
        self.res = _SeparableConv(f"{name}.res", in_ch, out_ch, 1, 1, rng)

    def forward(self, x, train, rng):
        res = self.res.forward(x, train)
        h = x
        for i, sub in enumerate(self.subs):
            h = sub.forward(h, train)
            if i == len(self.subs) - 1:
                h = nn.residual_add(h, res)
            h = nn.relu(h)
            h = nn.dropout(h, self.dropout_p, rng, train)
        return h

    def layers(self):
        return self.subs + [self.res]


class MarbleNet:
    """The full network. Exclusive during training; immutable once frozen."""

    def __init__(self, cfg, seed=0):
        cfg.validate()
        self.cfg = cfg
        self.features = None  # optional FeatureConfig carried by checkpoints
        rng = substream(seed, "init")
        self.prologue = _SeparableConv("prologue", cfg.input_features,
                                       cfg.prologue_channels, cfg.prologue_kernel, 1, rng)
        self.blocks = []
        in_ch = cfg.prologue_channels
        for b, k in enumerate(cfg.block_kernels):
            self.blocks.append(_Block(f"block{b}", in_ch, cfg.channels, k,
                                      cfg.n_subblocks, cfg.dropout_p, rng))
            in_ch = cfg.channels
        self.epilogue1 = _SeparableConv("epilogue1", in_ch, cfg.epilogue1_channels,
                                        cfg.epilogue1_kernel, cfg.epilogue1_dilation, rng)
        self.epilogue2 = _SeparableConv("epilogue2", cfg.epilogue1_channels,
                                        cfg.epilogue2_channels, 1, 1, rng)
        self.cls_w = nn.Parameter(
            "classifier.w",
            _kaiming_uniform(rng, (cfg.n_classes, cfg.epilogue2_channels),
                             cfg.epilogue2_channels, np.float32))
        self.cls_b = nn.Parameter("classifier.b", np.zeros(cfg.n_classes, dtype=np.float32))

    def _sep_layers(self):
        layers = [self.prologue]
        for blk in self.blocks:
            layers.extend(blk.layers())
        layers.extend([self.epilogue1, self.epilogue2])
        return layers

    def batchnorms(self):
        return [layer.bn for layer in self._sep_layers()]

    def parameters(self):
        ps = []
        for layer in self._sep_layers():
            ps.extend(layer.parameters())
        ps.extend([self.cls_w, self.cls_b])
        return ps

    def named_arrays(self):
        """Every persistent array (parameters plus BN running stats), in order."""
        out = []
        for layer in self._sep_layers():
            out.extend(layer.named_arrays())
        out.append((self.cls_w.name, self.cls_w.data))
        out.append((self.cls_b.name, self.cls_b.data))
        return out

    def forward(self, x, train=False, rng=None):
        """Feature batch (B, n_features, T) or single (n_features, T) to logits."""
        x = np.asarray(x)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1] != self.cfg.input_features:
            raise ValueError(f"expected (batch, {self.cfg.input_features}, time) input, "
                             f"got shape {x.shape}")
        if train and rng is None and self.cfg.dropout_p > 0.0:
            raise ValueError("train-mode forward needs an rng for dropout")
        h = nn.relu(self.prologue.forward(nn.Tensor(x.astype(np.float32)), train))
        for blk in self.blocks:
            h = blk.forward(h, train, rng)
        h = nn.relu(self.epilogue1.forward(h, train))
        h = nn.relu(self.epilogue2.forward(h, train))
        pooled = nn.global_avg_pool_time(h)
        return nn.linear(pooled, self.cls_w.tensor, self.cls_b.tensor)

    def predict_proba(self, x):
        """Eval-mode class probabilities, rows summing to 1."""
        return nn.softmax(self.forward(x, train=False).data)

    def param_count(self):
        return sum(p.data.size for p in self.parameters())

    def param_breakdown(self):
        """Per-layer trainable parameter counts, in forward order."""
        rows = [(self.prologue.name, _layer_size(self.prologue))]
        for blk in self.blocks:
            rows.append((blk.name, sum(_layer_size(l) for l in blk.layers())))
        rows.append((self.epilogue1.name, _layer_size(self.epilogue1)))
        rows.append((self.epilogue2.name, _layer_size(self.epilogue2)))
        rows.append(("classifier", self.cls_w.data.size + self.cls_b.data.size))
        return rows


def _layer_size(layer):
    return sum(p.data.size for p in layer.parameters())


def _sep_count(in_ch, out_ch, kernel):
    dw = in_ch * kernel if kernel > 1 else 0
    return dw + out_ch * in_ch + 2 * out_ch


def param_count_formula(cfg):
    """Closed-form parameter count, kept independent of the built model."""
    total = _sep_count(cfg.input_features, cfg.prologue_channels, cfg.prologue_kernel)
    in_ch = cfg.prologue_channels
    for k in cfg.block_kernels:
        for i in range(cfg.n_subblocks):
            total += _sep_count(in_ch if i == 0 else cfg.channels, cfg.channels, k)
        total += _sep_count(in_ch, cfg.channels, 1)
        in_ch = cfg.channels
    total += _sep_count(in_ch, cfg.epilogue1_channels, cfg.epilogue1_kernel)
    total += _sep_count(cfg.epilogue1_channels, cfg.epilogue2_channels, 1)
    total += cfg.epilogue2_channels * cfg.n_classes + cfg.n_classes
    return total


def save(model, path):
    """Serialize config, arrays, and BN state; round trips bit-exactly."""
    arrays = model.named_arrays()
    header = {
        "config": model.cfg.to_dict(),
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        "bn_updates": {bn.name: bn.updates for bn in model.batchnorms()},
    }
    if model.features is not None:
        header["features"] = model.features.to_dict()
    hj = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(hj)))
        f.write(hj)
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load(path):
    """Rebuild a model from a checkpoint written by save()."""
    with open(path, "rb") as f:
        raw = f.read()
    n_magic = len(CHECKPOINT_MAGIC)
    if len(raw) < n_magic + 4:
        raise CheckpointTruncatedError(f"{path}: shorter than the fixed header")
    if raw[:n_magic] != CHECKPOINT_MAGIC:
        raise CheckpointMagicError(
            f"{path}: bad magic {raw[:n_magic]!r}, expected {CHECKPOINT_MAGIC!r}")
    (hlen,) = struct.unpack_from("<I", raw, n_magic)
    body = n_magic + 4
    if body + hlen > len(raw):
        raise CheckpointTruncatedError(f"{path}: header overruns the file")
    try:
        header = json.loads(raw[body:body + hlen].decode("utf-8"))
        cfg = MarbleNetConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: invalid header: {exc}") from exc
    model = MarbleNet(cfg, seed=0)
    if "features" in header:
        model.features = FeatureConfig.from_dict(header["features"])
    arrays = model.named_arrays()
    manifest = header.get("arrays", [])
    if len(manifest) != len(arrays):
        raise CheckpointShapeError(
            f"{path}: manifest lists {len(manifest)} arrays, model has {len(arrays)}")
    for (name, arr), spec in zip(arrays, manifest):
        if spec.get("name") != name or tuple(spec.get("shape", ())) != arr.shape:
            raise CheckpointShapeError(
                f"{path}: manifest entry {spec} does not match model array "
                f"{name} {arr.shape}")
    offset = body + hlen
    for name, arr in arrays:
        nbytes = arr.size * 4
        chunk = raw[offset:offset + nbytes]
        if len(chunk) < nbytes:
            raise CheckpointTruncatedError(f"{path}: payload ends inside array {name}")
        arr[...] = np.frombuffer(chunk, dtype="<f4").reshape(arr.shape)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} unexpected trailing bytes")
    for bn in model.batchnorms():
        bn.updates = int(header.get("bn_updates", {}).get(bn.name, 0))
    return model
