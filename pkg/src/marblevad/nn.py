"""Reverse-mode autodiff on numpy arrays, sized to the VAD network.

Tensors wrap arrays and record backward closures; backward() on a scalar
loss walks the graph in reverse topological order. Convolutions follow the
(batch, channels, time) layout and are cross-correlations with "same" zero
padding, so time length is preserved end to end.
"""

import logging

import numpy as np

log = logging.getLogger(__name__)


class Tensor:
    """A numpy array plus gradient plumbing."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._prev = ()

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Backpropagate from a scalar: seed grad 1 and walk the graph."""
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar tensor")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, children_done = stack.pop()
            if children_done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()


def _op(data, parents, backward):
    """Build an op output tensor, wiring the graph only if grads can flow."""
    needed = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needed)
    if needed:
        out._prev = tuple(parents)
        out._backward = backward
    return out


class Parameter:
    """Named trainable tensor with an SGD momentum buffer."""

    def __init__(self, name, data):
        self.name = name
        self.tensor = Tensor(np.asarray(data), requires_grad=True)
        self.momentum = np.zeros_like(self.tensor.data)

    @property
    def data(self):
        return self.tensor.data

    @data.setter
    def data(self, value):
        self.tensor.data = value

    @property
    def grad(self):
        return self.tensor.grad

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.tensor.data.shape})"


class BatchNormState:
    """Per-channel affine batch normalization state for (B, C, T) tensors."""

    def __init__(self, name, channels, eps=1e-5, stats_momentum=0.1, dtype=np.float32):
        self.name = name
        self.gamma = Parameter(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Parameter(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.eps = eps
        self.stats_momentum = stats_momentum
        self.updates = 0
        self._warned = False


def conv1d_depthwise(x, w, dilation=1):
    """Per-channel cross-correlation, x (B, C, T) with kernels w (C, k), k odd."""
    xd, wd = x.data, w.data
    b, c, t = xd.shape
    cw, k = wd.shape
    if cw != c:
        raise ValueError(f"kernel channels {cw} != input channels {c}")
    if k % 2 == 0:
        raise ValueError("depthwise kernel length must be odd")
    pad = dilation * (k - 1) // 2
    xp = np.zeros((b, c, t + 2 * pad), dtype=xd.dtype)
    xp[:, :, pad:pad + t] = xd
    y = np.zeros((b, c, t), dtype=np.result_type(xd, wd))
    for j in range(k):
        y += wd[:, j, None] * xp[:, :, j * dilation:j * dilation + t]

    def backward():
        gy = out.grad
        if x.requires_grad:
            gxp = np.zeros((b, c, t + 2 * pad), dtype=gy.dtype)
            for j in range(k):
                gxp[:, :, j * dilation:j * dilation + t] += wd[:, j, None] * gy
            x.accumulate(gxp[:, :, pad:pad + t])
        if w.requires_grad:
            gw = np.empty_like(wd)
            for j in range(k):
                gw[:, j] = np.einsum("bct,bct->c", xp[:, :, j * dilation:j * dilation + t], gy)
            w.accumulate(gw)

    out = _op(y, (x, w), backward)
    return out


def conv1d_pointwise(x, w):
    """1x1 convolution: per-time-step linear map, w (C_out, C_in), no bias."""
    xd, wd = x.data, w.data
    if xd.shape[1] != wd.shape[1]:
        raise ValueError(f"input channels {xd.shape[1]} != weight columns {wd.shape[1]}")
    y = np.matmul(wd, xd)  # (O, C) @ (B, C, T) -> (B, O, T)

    def backward():
        gy = out.grad
        if x.requires_grad:
            x.accumulate(np.matmul(wd.T, gy))
        if w.requires_grad:
            w.accumulate(np.tensordot(gy, xd, axes=([0, 2], [0, 2])))

    out = _op(y, (x, w), backward)
    return out


def batchnorm1d(x, bn, train):
    """Normalize per channel over (batch, time), then scale/shift.

    Train mode uses biased batch variance and folds unbiased-corrected
    stats into the running estimates; eval mode applies the running stats.
    """
    xd = x.data
    gamma, beta = bn.gamma.tensor, bn.beta.tensor
    if train:
        n = xd.shape[0] * xd.shape[2]
        if n < 2:
            raise ValueError("train-mode batchnorm needs batch*time >= 2 per channel")
        mean = xd.mean(axis=(0, 2))
        var = xd.var(axis=(0, 2))
        m = bn.stats_momentum
        bn.running_mean[...] = (1.0 - m) * bn.running_mean + m * mean
        bn.running_var[...] = (1.0 - m) * bn.running_var + m * var * (n / (n - 1.0))
        bn.updates += 1
    else:
        if bn.updates == 0 and not bn._warned:
            log.warning("%s: eval-mode batchnorm before any update, using init stats", bn.name)
            bn._warned = True
        mean, var = bn.running_mean, bn.running_var
    inv = 1.0 / np.sqrt(var + bn.eps)
    xhat = (xd - mean[None, :, None]) * inv[None, :, None]
    y = gamma.data[None, :, None] * xhat + beta.data[None, :, None]

    def backward():
        gy = out.grad
        if beta.requires_grad:
            beta.accumulate(gy.sum(axis=(0, 2)))
        if gamma.requires_grad:
            gamma.accumulate((gy * xhat).sum(axis=(0, 2)))
        if x.requires_grad:
            if train:
                n = xd.shape[0] * xd.shape[2]
                dxhat = gy * gamma.data[None, :, None]
                s1 = dxhat.sum(axis=(0, 2))
                s2 = (dxhat * xhat).sum(axis=(0, 2))
                x.accumulate((inv[None, :, None] / n)
                             * (n * dxhat - s1[None, :, None] - xhat * s2[None, :, None]))
            else:
                x.accumulate(gy * (gamma.data * inv)[None, :, None])

    out = _op(y, (x, gamma, beta), backward)
    return out


def relu(x):
    mask = x.data > 0

    def backward():
        x.accumulate(out.grad * mask)

    out = _op(np.maximum(x.data, 0), (x,), backward)
    return out


def dropout(x, p, rng, train):
    """Zero activations with probability p and scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must be in [0, 1)")
    if not train or p == 0.0:
        return x
    keep = rng.random(x.data.shape) >= p
    scale = 1.0 / (1.0 - p)

    def backward():
        x.accumulate(out.grad * keep * scale)

    out = _op(x.data * keep * scale, (x,), backward)
    return out


def residual_add(a, b):
    if a.data.shape != b.data.shape:
        raise ValueError(f"residual shapes differ: {a.data.shape} vs {b.data.shape}")

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad)
        if b.requires_grad:
            b.accumulate(out.grad)

    out = _op(a.data + b.data, (a, b), backward)
    return out


def global_avg_pool_time(x):
    """Mean over the time axis: (B, C, T) -> (B, C)."""
    t = x.data.shape[2]

    def backward():
        x.accumulate(out.grad[:, :, None] / t)

    out = _op(x.data.mean(axis=2), (x,), backward)
    return out


def linear(x, w, b):
    """Affine map on (B, C_in): y = x w^T + b."""
    if x.data.shape[1] != w.data.shape[1]:
        raise ValueError(f"input width {x.data.shape[1]} != weight columns {w.data.shape[1]}")
    y = x.data @ w.data.T + b.data

    def backward():
        gy = out.grad
        if x.requires_grad:
            x.accumulate(gy @ w.data)
        if w.requires_grad:
            w.accumulate(gy.T @ x.data)
        if b.requires_grad:
            b.accumulate(gy.sum(axis=0))

    out = _op(y, (x, w, b), backward)
    return out


def softmax(z):
    """Row softmax of a plain array, numerically stabilized."""
    z = np.asarray(z)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean negative log softmax probability of the labels.

    Returns (loss tensor, probability array). Max-subtraction keeps the
    computation finite for any finite logits; non-finite logits raise.
    """
    z = logits.data
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (z.shape[0],):
        raise ValueError(f"labels shape {y.shape} does not match batch {z.shape[0]}")
    zs = z - z.max(axis=1, keepdims=True)
    logp = zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))
    n = z.shape[0]
    loss_val = -logp[np.arange(n), y].mean()
    probs = np.exp(logp)

    def backward():
        onehot = np.zeros_like(probs)
        onehot[np.arange(n), y] = 1.0
        logits.accumulate((probs - onehot) * (out.grad / n))

    out = _op(np.float64(loss_val), (logits,), backward)
    return out, probs


def tensor_sum(x):
    def backward():
        x.accumulate(out.grad)

    out = _op(np.float64(x.data.sum()), (x,), backward)
    return out


def scale_by(x, c):
    """Elementwise product with a constant array (no gradient through c)."""
    c = np.asarray(c)

    def backward():
        x.accumulate(out.grad * c)

    out = _op(x.data * c, (x,), backward)
    return out


def sgd_step(params, lr, momentum=0.9, weight_decay=0.001):
    """Classic momentum SGD with coupled L2: g += wd*theta; v = m*v + g; theta -= lr*v."""
    for p in params:
        g = p.tensor.grad
        if g is None:
            continue
        g = g + weight_decay * p.data
        p.momentum *= momentum
        p.momentum += g
        p.data -= lr * p.momentum


def grad_check(fn, inputs, eps=1e-5, n_probes=10, seed=0):
    """Max relative error between analytic and central-difference derivatives.

    fn maps the given Tensors to an output tensor and must be deterministic
    across calls. The output is scalarized with a fixed random projection;
    each probe compares the analytic directional derivative to a central
    difference along a random direction over all inputs with requires_grad.
    """
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(fn(*inputs).data.shape)

    def scalar():
        return float((fn(*inputs).data * u).sum())

    for t in inputs:
        t.zero_grad()
    loss = tensor_sum(scale_by(fn(*inputs), u))
    loss.backward()
    grads = [t.grad.copy() if t.requires_grad else None for t in inputs]

    worst = 0.0
    for _ in range(n_probes):
        dirs = [rng.standard_normal(t.data.shape) if t.requires_grad else None
                for t in inputs]
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs) if g is not None)
        for t, d in zip(inputs, dirs):
            if d is not None:
                t.data += eps * d
        f_plus = scalar()
        for t, d in zip(inputs, dirs):
            if d is not None:
                t.data -= 2 * eps * d
        f_minus = scalar()
        for t, d in zip(inputs, dirs):
            if d is not None:
                t.data += eps * d
        numeric = (f_plus - f_minus) / (2 * eps)
        scale = max(abs(analytic), abs(numeric))
        err = abs(analytic - numeric) if scale < 1e-8 else abs(analytic - numeric) / scale
        worst = max(worst, err)
    return worst
