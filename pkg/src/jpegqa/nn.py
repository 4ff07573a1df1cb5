"""Minimal reverse-mode autodiff: tensors, the comparator's layer set, Adam.

Ops are dtype-neutral (float32 in production, float64 for gradient checks).
Graph recording can be switched off with :func:`no_grad` for pure inference.
"""

from __future__ import annotations

import base64
import contextlib
import contextvars
import json
from pathlib import Path

import numpy as np

from .rng import SplitMix64

_grad_enabled = contextvars.ContextVar("jpegqa_grad_enabled", default=True)

BCE_EPS = 1e-7


@contextlib.contextmanager
def no_grad():
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    """Shaped float array plus an optional gradient buffer and tape linkage."""

    __slots__ = ("data", "grad", "_parents", "_backward_fn")

    def __init__(self, data, parents=(), backward_fn=None):
        self.data = np.asarray(data)
        self.grad = None
        if _grad_enabled.get():
            self._parents = tuple(parents)
            self._backward_fn = backward_fn
        else:
            self._parents = ()
            self._backward_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)


class Parameter(Tensor):
    __slots__ = ("name", "trainable")

    def __init__(self, data, name: str, trainable: bool = True):
        super().__init__(data)
        self.name = name
        self.trainable = trainable


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if t.grad is None:
        # copy: grad may be a view that a later accumulation would corrupt
        t.grad = np.array(grad, dtype=t.data.dtype, copy=True)
    else:
        t.grad += grad


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss; populates .grad on the graph."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is not None:
            node._backward_fn(node.grad)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

def _conv_geometry(size: int, k: int, stride: int, padding: str) -> tuple[int, int]:
    """Output size and total pad for one spatial dimension."""
    if padding == "same":
        out = -(-size // stride)
        return out, max((out - 1) * stride + k - size, 0)
    if padding == "valid":
        return (size - k) // stride + 1, 0
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1,
           padding: str = "same") -> Tensor:
    """Cross-correlation; x is NHWC, w is (K, K, Cin, Cout)."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    n, h, ww, cin = x.data.shape
    k, k2, wcin, cout = w.data.shape
    if k != k2 or wcin != cin:
        raise ValueError(f"weight shape {w.data.shape} incompatible with input {x.data.shape}")
    ho, pad_h = _conv_geometry(h, k, stride, padding)
    wo, pad_w = _conv_geometry(ww, k, stride, padding)
    pt, pl = pad_h // 2, pad_w // 2
    if pad_h or pad_w:
        xp = np.pad(x.data, ((0, 0), (pt, pad_h - pt), (pl, pad_w - pl), (0, 0)))
    else:
        xp = x.data

    pointwise = k == 1 and stride == 1  # 1x1 convs skip the patch gather
    if pointwise:
        cols = xp.reshape(-1, cin)
    else:
        # im2col: windows reordered so columns follow the (kh, kw, cin)
        # layout of the flattened weight matrix
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
        win = win[:, ::stride, ::stride][:, :ho, :wo]
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * cin)
    wmat = w.data.reshape(k * k * cin, cout)
    out = (cols @ wmat).reshape(n, ho, wo, cout)
    if b is not None:
        out += b.data

    def backward_fn(gy):
        g2 = gy.reshape(-1, cout)
        _accumulate(w, (cols.T @ g2).reshape(k, k, cin, cout))
        if b is not None:
            _accumulate(b, gy.sum(axis=(0, 1, 2)))
        gcols = g2 @ wmat.T
        if pointwise:
            gx = gcols.reshape(n, h, ww, cin)
        else:
            gcols = gcols.reshape(n, ho, wo, k, k, cin)
            gxp = np.zeros_like(xp)
            for a in range(k):
                for c in range(k):
                    gxp[:, a : a + stride * (ho - 1) + 1 : stride,
                        c : c + stride * (wo - 1) + 1 : stride, :] += gcols[:, :, :, a, c, :]
            gx = gxp[:, pt : pt + h, pl : pl + ww, :] if (pad_h or pad_w) else gxp
        _accumulate(x, gx)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, parents, backward_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = x.data * mask

    def backward_fn(gy):
        _accumulate(x, gy * mask)

    return Tensor(out, (x,), backward_fn)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                   np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d)))).astype(d.dtype)

    def backward_fn(gy):
        _accumulate(x, gy * out * (1.0 - out))

    return Tensor(out, (x,), backward_fn)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b on (N, Din)."""
    out = x.data @ w.data + b.data

    def backward_fn(gy):
        _accumulate(w, x.data.T @ gy)
        _accumulate(b, gy.sum(axis=0))
        _accumulate(x, gy @ w.data.T)

    return Tensor(out, (x, w, b), backward_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    """NHWC -> (N, C) spatial mean."""
    n, h, w, c = x.data.shape
    out = x.data.mean(axis=(1, 2))

    def backward_fn(gy):
        _accumulate(x, np.broadcast_to(gy[:, None, None, :] / (h * w), x.data.shape))

    return Tensor(out, (x,), backward_fn)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Channel concatenation of two NHWC tensors; a's maps come first."""
    if a.data.shape[:3] != b.data.shape[:3]:
        raise ValueError(f"concat shapes differ: {a.data.shape} vs {b.data.shape}")
    ca = a.data.shape[3]
    out = np.concatenate([a.data, b.data], axis=3)

    def backward_fn(gy):
        _accumulate(a, gy[:, :, :, :ca])
        _accumulate(b, gy[:, :, :, ca:])

    return Tensor(out, (a, b), backward_fn)


def stack_batch(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the batch axis so twin branches share one pass."""
    if a.data.shape[1:] != b.data.shape[1:] or a.data.shape[0] != b.data.shape[0]:
        raise ValueError(f"stack shapes differ: {a.data.shape} vs {b.data.shape}")
    na = a.data.shape[0]
    out = np.concatenate([a.data, b.data], axis=0)

    def backward_fn(gy):
        _accumulate(a, gy[:na])
        _accumulate(b, gy[na:])

    return Tensor(out, (a, b), backward_fn)


def pair_concat(x: Tensor) -> Tensor:
    """Inverse of stack_batch at the channel level: (2N, H, W, C) becomes
    (N, H, W, 2C) with the first batch half's maps first."""
    n2, h, w, c = x.data.shape
    if n2 % 2:
        raise ValueError(f"pair_concat needs an even batch, got {n2}")
    n = n2 // 2
    out = np.concatenate([x.data[:n], x.data[n:]], axis=3)

    def backward_fn(gy):
        gx = np.empty_like(x.data)
        gx[:n] = gy[:, :, :, :c]
        gx[n:] = gy[:, :, :, c:]
        _accumulate(x, gx)

    return Tensor(out, (x,), backward_fn)


def tsum(x: Tensor) -> Tensor:
    out = x.data.sum()

    def backward_fn(gy):
        _accumulate(x, np.broadcast_to(gy, x.data.shape).astype(x.data.dtype))

    return Tensor(out, (x,), backward_fn)


def bce_soft(pred: Tensor, target: np.ndarray) -> Tensor:
    """Soft-target binary cross entropy, meaned over elements.

    Predictions are clamped to [eps, 1-eps]; the gradient uses the clamped
    value so saturated sigmoids early in training stay finite.
    """
    t = np.asarray(target, dtype=pred.data.dtype)
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    n = p.size
    out = np.asarray(-(t * np.log(p) + (1.0 - t) * np.log1p(-p)).sum() / n)

    def backward_fn(gy):
        _accumulate(pred, gy * (p - t) / (p * (1.0 - p)) / n)

    return Tensor(out, (pred,), backward_fn)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Adam with bias correction; state buffers shape-match their parameters."""

    def __init__(self, params: list[Parameter], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            update = (self.m[i] / b1c) / (np.sqrt(self.v[i] / b2c) + self.eps)
            p.data = p.data - (self.lr * update).astype(p.data.dtype)


# ---------------------------------------------------------------------------
# Init and checkpoints
# ---------------------------------------------------------------------------

def uniform_fan_in(shape: tuple[int, ...], fan_in: int, rng: SplitMix64,
                   gain: float = 1.0) -> np.ndarray:
    """Centered uniform with variance gain^2/fan_in, float32.

    gain sqrt(2) (He) compensates the variance halving of a following ReLU.
    """
    bound = gain * np.sqrt(3.0 / fan_in)
    size = int(np.prod(shape))
    vals = (rng.fill_uniform(size) * 2.0 - 1.0) * bound
    return vals.reshape(shape).astype(np.float32)


CHECKPOINT_FORMAT = "jpegqa-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray],
                    config: dict) -> None:
    """Versioned JSON container; byte-stable for identical inputs."""
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config,
        "params": {
            name: {
                "shape": list(arr.shape),
                "dtype": "float32",
                "data": base64.b64encode(
                    np.ascontiguousarray(arr, dtype="<f4").tobytes()
                ).decode("ascii"),
            }
            for name, arr in sorted(params.items())
        },
    }
    Path(path).write_text(json.dumps(blob, sort_keys=True, separators=(",", ":")))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    blob = json.loads(Path(path).read_text())
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {blob.get('version')}")
    params = {}
    for name, entry in blob["params"].items():
        shape = tuple(entry["shape"])
        raw = base64.b64decode(entry["data"])
        arr = np.frombuffer(raw, dtype="<f4")
        if arr.size != int(np.prod(shape)):
            raise ValueError(f"{path}: parameter {name} has {arr.size} values, "
                             f"expected shape {shape}")
        params[name] = arr.reshape(shape).astype(np.float32)
    return params, blob.get("config", {})
