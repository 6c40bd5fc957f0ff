"""Dense numerical kernels with paired forward/backward passes.

Everything operates on plain row-major numpy arrays. 64-bit floats are the
default; 32-bit can be switched on globally via :func:`set_precision` when
speed matters more than finite-difference checkability. Masked softmax
guarantees *exact* zeros at masked positions and all-zero rows when a row is
fully masked, so downstream residual paths carry inert tokens unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionError, NumericalError

# Large negative logit sentinel; exp(sentinel - rowmax) underflows to 0, and
# masked outputs are additionally zeroed post hoc so the contract does not
# depend on underflow behaviour.
MASK_SENTINEL = -1e30

_PRECISION = {"dtype": np.dtype(np.float64)}


def set_precision(mode: str) -> None:
    """Select the global floating-point mode: "float64" (default) or "float32"."""
    if mode not in ("float64", "float32"):
        raise ValueError(f"unknown precision mode {mode!r}")
    _PRECISION["dtype"] = np.dtype(mode)


def active_dtype() -> np.dtype:
    return _PRECISION["dtype"]


def asarray(x) -> np.ndarray:
    return np.asarray(x, dtype=active_dtype())


@dataclass
class LinearWeights:
    """Affine map y = x W^T + b with W of shape (out, in) and b of shape (out,)."""

    w: np.ndarray
    b: np.ndarray

    @property
    def out_dim(self) -> int:
        return self.w.shape[0]

    @property
    def in_dim(self) -> int:
        return self.w.shape[1]


@dataclass
class MlpSpec:
    """Stack of linear layers; activation applied after every layer.

    channels[0] is the input width (for grouped point features this already
    includes the 3 appended relative coordinates). `normalize` inserts a
    parameterless per-row standardization before each activation.
    """

    channels: list[int]
    activation: str = "relu"
    normalize: bool = False

    def __post_init__(self):
        if len(self.channels) < 2:
            raise ValueError("MlpSpec needs at least input and output widths")
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")


def linear_forward(x: np.ndarray, weights: LinearWeights) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != weights.in_dim:
        raise DimensionError(
            f"linear_forward: input width {x.shape[-1]} != weight in_dim {weights.in_dim}"
        )
    return x @ weights.w.T + weights.b


def linear_backward(
    d_y: np.ndarray, x: np.ndarray, weights: LinearWeights,
    d_w: np.ndarray, d_b: np.ndarray,
) -> np.ndarray:
    """Accumulate weight grads in place; return grad wrt x."""
    d_w += d_y.reshape(-1, weights.out_dim).T @ x.reshape(-1, weights.in_dim)
    d_b += d_y.reshape(-1, weights.out_dim).sum(axis=0)
    return d_y @ weights.w


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(d_y: np.ndarray, x: np.ndarray) -> np.ndarray:
    return d_y * (x > 0)


def softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x), linearized for large x to stay finite.
    return np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))


def softplus_backward(d_y: np.ndarray, x: np.ndarray) -> np.ndarray:
    return d_y / (1.0 + np.exp(-x))


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis restricted to `mask`-kept entries.

    Masked entries get weight exactly 0.0. A fully masked row returns all
    zeros instead of NaN so dropped tokens stay inert.
    """
    logits = np.asarray(logits)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    shifted = np.where(mask, logits, MASK_SENTINEL)
    row_max = shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted - row_max)
    e = np.where(mask, e, 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    out = np.zeros_like(e)
    np.divide(e, denom, out=out, where=denom > 0)
    return out


def masked_softmax_backward(d_p: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Grad wrt logits given grad wrt probabilities; zero rows stay zero."""
    inner = (p * d_p).sum(axis=-1, keepdims=True)
    return p * (d_p - inner)


def layer_norm(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    y, _ = layer_norm_forward(x, gamma, beta, eps)
    return y


def layer_norm_forward(x, gamma, beta, eps: float = 1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * gamma + beta, (xhat, inv, gamma)


def layer_norm_backward(d_y, cache, d_gamma, d_beta):
    xhat, inv, gamma = cache
    flat_dy = d_y.reshape(-1, d_y.shape[-1])
    flat_xh = xhat.reshape(-1, xhat.shape[-1])
    d_gamma += (flat_dy * flat_xh).sum(axis=0)
    d_beta += flat_dy.sum(axis=0)
    d_xhat = d_y * gamma
    m1 = d_xhat.mean(axis=-1, keepdims=True)
    m2 = (d_xhat * xhat).mean(axis=-1, keepdims=True)
    return inv * (d_xhat - m1 - xhat * m2)


def _maybe_normalize(h: np.ndarray) -> np.ndarray:
    mu = h.mean(axis=-1, keepdims=True)
    sd = np.sqrt(((h - mu) ** 2).mean(axis=-1, keepdims=True) + 1e-5)
    return (h - mu) / sd


def mlp_forward(
    x: np.ndarray, spec: MlpSpec, weights: list[LinearWeights]
) -> np.ndarray:
    y, _ = mlp_forward_cached(x, spec, weights)
    return y


def mlp_forward_cached(x, spec: MlpSpec, weights: list[LinearWeights]):
    if x.shape[-1] != spec.channels[0]:
        raise DimensionError(
            f"mlp_forward: input width {x.shape[-1]} != channels[0]={spec.channels[0]}"
        )
    if len(weights) != len(spec.channels) - 1:
        raise DimensionError("mlp_forward: weight count does not match channel list")
    caches = []
    h = x
    for lw in weights:
        pre = linear_forward(h, lw)
        if spec.normalize:
            post = _maybe_normalize(pre)
        else:
            post = pre
        out = relu(post) if spec.activation == "relu" else post
        caches.append((h, pre))
        h = out
    return h, caches


def mlp_backward(d_y, spec: MlpSpec, weights, caches, d_weights):
    """d_weights is a list of (d_w, d_b) arrays accumulated in place."""
    if spec.normalize:
        raise NotImplementedError("backward for normalized MLP layers is unused")
    d_h = d_y
    for lw, (h_in, pre), (d_w, d_b) in zip(
        reversed(weights), reversed(caches), reversed(d_weights)
    ):
        if spec.activation == "relu":
            d_h = relu_backward(d_h, pre)
        d_h = linear_backward(d_h, h_in, lw, d_w, d_b)
    return d_h


def central_difference_jacobian(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Entry-wise central differences of a scalar function; O(2 * x.size) calls."""
    if h <= 0:
        raise ValueError("step size h must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite evaluation at entry {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


# ---------------------------------------------------------------------------
# Gradient-check harness. Modules register named toy cases; each builder maps
# a seed to (loss_fn over a parameter dict, initial params, analytic grads).
# ---------------------------------------------------------------------------

GradCaseBuilder = Callable[[int], tuple]

_GRAD_CASES: dict[str, GradCaseBuilder] = {}


def register_grad_case(name: str, builder: GradCaseBuilder) -> None:
    _GRAD_CASES[name] = builder


def registered_grad_cases() -> list[str]:
    return sorted(_GRAD_CASES)


def relative_grad_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.abs(numeric), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check(
    op_name: str,
    seed: int = 0,
    h: float | None = None,
    sample_per_tensor: int | None = None,
) -> float:
    """Run the registered finite-difference check; returns the max relative error.

    `sample_per_tensor` limits the number of coordinates checked per parameter
    tensor (seeded choice); None checks every coordinate. The step is scaled
    by each coordinate's magnitude to keep truncation and roundoff balanced.
    """
    if op_name not in _GRAD_CASES:
        raise LookupError(f"no registered grad case named {op_name!r}")
    loss_fn, params, analytic = _GRAD_CASES[op_name](seed)
    base_h = 1e-6 if h is None else h
    rng = np.random.default_rng(seed + 7919)
    worst = 0.0
    for name in sorted(params):
        p = params[name]
        a = analytic[name]
        flat = p.reshape(-1)
        aflat = np.asarray(a).reshape(-1)
        idx = np.arange(flat.size)
        if sample_per_tensor is not None and flat.size > sample_per_tensor:
            idx = rng.choice(flat.size, size=sample_per_tensor, replace=False)
        for i in idx:
            orig = flat[i]
            step = base_h * max(1.0, abs(orig))
            flat[i] = orig + step
            fp = loss_fn(params)
            flat[i] = orig - step
            fm = loss_fn(params)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericalError(f"non-finite loss while checking {name}[{i}]")
            numeric = (fp - fm) / (2.0 * step)
            err = abs(aflat[i] - numeric) / max(abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def assert_finite(x: np.ndarray, what: str = "tensor") -> None:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"{what} contains non-finite values")
