"""Small dense float64 kernel: forward ops, their analytic backward, and a
central-difference gradient checker.

Token matrices are plain 2-D ``np.ndarray`` of shape (T, D). Backward functions
take the upstream gradient and whatever the forward returned as cache.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import NonFiniteLoss, ShapeMismatch

LN_EPS = 1e-5


def as_token_matrix(x, checked: bool = True) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch(f"token matrix must be 2-D, got shape {x.shape}")
    if checked and not np.all(np.isfinite(x)):
        raise ValueError("token matrix contains NaN or Inf")
    return x


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeMismatch(msg)


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(repr=False)

    def __init__(self, name: str, value):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


@dataclass(frozen=True)
class InitSpec:
    """Seeded initialization; weight matrices use uniform in +-sqrt(6/(fan_in+fan_out))."""

    seed: int
    scheme: str = "uniform-scaled"  # or "zeros" / "ones"

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def weight(self, rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
        if self.scheme == "zeros":
            return np.zeros(shape)
        if self.scheme == "ones":
            return np.ones(shape)
        if self.scheme != "uniform-scaled":
            raise ValueError(f"unknown init scheme {self.scheme!r}")
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------- linear


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Row-wise ``x @ w + b``."""
    x = np.asarray(x, dtype=np.float64)
    _require(x.ndim == 2 and w.ndim == 2 and x.shape[1] == w.shape[0], f"linear: {x.shape} @ {w.shape}")
    y = x @ w
    if b is not None:
        _require(b.shape == (w.shape[1],), f"linear: bias {b.shape} vs {w.shape[1]}")
        y = y + b
    return y


def linear_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Returns (dx, dw, db)."""
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


# ---------------------------------------------------------------- layer norm


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = LN_EPS):
    """Per-row normalization then affine. Accepts (D,) or (T, D).

    Returns ``(y, cache)``; pass ``cache`` to :func:`layer_norm_backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    _require(d >= 2, "layer_norm needs at least 2 channels")
    _require(gamma.shape == (d,) and beta.shape == (d,), f"layer_norm: affine shape vs width {d}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return xhat * gamma + beta, (xhat, inv_std, gamma)


def layer_norm_backward(dy: np.ndarray, cache):
    """Returns (dx, dgamma, dbeta)."""
    xhat, inv_std, gamma = cache
    lead = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=lead)
    dbeta = dy.sum(axis=lead)
    g = dy * gamma
    dx = inv_std * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


# ---------------------------------------------------------------- conv1d


def _shifted(x: np.ndarray, offset: int) -> np.ndarray:
    """Rows ``x[t + offset]`` with zeros outside the sequence."""
    t = x.shape[0]
    out = np.zeros_like(x)
    if offset >= 0:
        if offset < t:
            out[: t - offset] = x[offset:]
    elif -offset < t:
        out[-offset:] = x[: t + offset]
    return out


def conv1d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """'Same' 1-D cross-correlation over time: ``y[t] = sum_j x[t + j - k//2] @ kernel[j] + bias``.

    ``kernel`` is (k, Din, Dout) with odd k; sequence edges are zero padded.
    """
    x = np.asarray(x, dtype=np.float64)
    _require(kernel.ndim == 3 and kernel.shape[0] % 2 == 1, f"conv1d: kernel shape {kernel.shape}")
    _require(x.ndim == 2 and x.shape[1] == kernel.shape[1], f"conv1d: input {x.shape} vs kernel {kernel.shape}")
    half = kernel.shape[0] // 2
    y = np.zeros((x.shape[0], kernel.shape[2]))
    for j in range(kernel.shape[0]):
        y += _shifted(x, j - half) @ kernel[j]
    if bias is not None:
        _require(bias.shape == (kernel.shape[2],), f"conv1d: bias {bias.shape}")
        y += bias
    return y


def conv1d_backward(dy: np.ndarray, x: np.ndarray, kernel: np.ndarray):
    """Returns (dx, dkernel, dbias)."""
    half = kernel.shape[0] // 2
    dx = np.zeros_like(x)
    dk = np.zeros_like(kernel)
    for j in range(kernel.shape[0]):
        off = j - half
        dk[j] = _shifted(x, off).T @ dy
        dx += _shifted(dy @ kernel[j].T, -off)
    return dx, dk, dy.sum(axis=0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


# ---------------------------------------------------------------- positional encoding


def sinusoid_table(length: int, width: int) -> np.ndarray:
    """Unscaled table: sin on even channels, cos on odd, wavelengths 2*pi .. 10000*2*pi."""
    if width % 2:
        raise ShapeMismatch("positional encoding width must be even")
    pos = np.arange(length, dtype=np.float64)[:, None]
    rate = 1.0 / 10000.0 ** (np.arange(0, width, 2, dtype=np.float64) / width)
    table = np.empty((length, width))
    table[:, 0::2] = np.sin(pos * rate)
    table[:, 1::2] = np.cos(pos * rate)
    return table


def positional_encoding(length: int, width: int, scale: float = 1.0) -> np.ndarray:
    return float(scale) * sinusoid_table(length, width)


# ---------------------------------------------------------------- gradient check


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float]
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def worst(self) -> str:
        return max(self.per_param, key=self.per_param.get) if self.per_param else ""


def rel_error(a, n):
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(
    loss_and_grads: Callable[[], tuple[float, Mapping[str, np.ndarray]]],
    params: Mapping[str, np.ndarray],
    h: float = 1e-4,
    tolerance: float = 1e-3,
    max_entries: int | None = None,
    seed: int = 0,
    loss_fn: Callable[[], float] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_and_grads`` evaluates the loss at the *current* contents of the
    arrays in ``params`` (they are perturbed in place and restored). With
    ``max_entries`` only a seeded random subset of each array is probed.
    ``loss_fn``, when given, is used for the probes instead of re-running the
    backward pass.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    loss0, grads = loss_and_grads()
    probe = loss_fn or (lambda: loss_and_grads()[0])
    if not np.isfinite(loss0):
        raise NonFiniteLoss(f"loss is {loss0}")
    analytic = {k: np.array(grads[k], dtype=np.float64, copy=True) for k in params}
    rng = np.random.default_rng(seed)
    per_param: dict[str, float] = {}
    n_checked = 0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise ValueError(f"parameter {name} must be contiguous for in-place probing")
        _require(analytic[name].shape == arr.shape, f"gradient shape for {name}")
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        a_flat = analytic[name].reshape(-1)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            lp = probe()
            flat[i] = orig - h
            lm = probe()
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NonFiniteLoss(f"non-finite loss probing {name}[{i}]")
            num = (lp - lm) / (2.0 * h)
            worst = max(worst, float(rel_error(a_flat[i], num)))
        per_param[name] = worst
        n_checked += len(idx)
    return GradCheckReport(max(per_param.values(), default=0.0), per_param, n_checked, tolerance)
