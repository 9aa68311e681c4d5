"""Attention-derived feature maps over prompt matrices.

Two maps take a prompt A (query label zeroed) to features of the same shape:

  * the linear map (AA')A, whose bottom-right element is the unnormalized
    one-step-of-gradient-descent estimate x_q' X' y,
  * the kernel map Khat(X, X) A, where Khat holds row-normalized kernel
    weights; its bottom-right element is a kernel-smoother estimate of the
    query label.

Kernel weights are computed in log space where the kernel is positive
(exponential, inverse-distance), so nothing overflows; the normalization is
then algebraically a row softmax. Everything here is plain numpy and pure;
differentiable mirrors of these maps live in the model graphs, and tests hold
the two routes together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np

from .taskgen import PromptMatrix

EXACT_MATCH_DIST = 1e-12
# below this, a smoother row falls back to uniform weights (mean of labels)
DENOM_FLOOR = 1e-300
_LOG_DENOM_FLOOR = math.log(DENOM_FLOOR)


class MaskMode(str, Enum):
    """Which kernel-matrix entries are allowed to carry weight.

    EXCLUDE_SELF drops the diagonal (a point never smooths itself) and is the
    default; STRICT_CAUSAL additionally drops j > i; NONE keeps everything.
    """

    NONE = "none"
    EXCLUDE_SELF = "exclude_self"
    STRICT_CAUSAL = "strict_causal"


@dataclass(frozen=True)
class LinearKernel:
    """K(x, x') = x'x (inner product; may be negative)."""


@dataclass(frozen=True)
class ExponentialKernel:
    """K(x, x') = exp(x'x); row normalization makes this softmax attention."""


@dataclass(frozen=True)
class HilbertKernel:
    """K(x, x') = 1 / ||x - x'||^d with the ambient dimension as exponent."""

    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"Hilbert kernel dimension must be >= 1, got {self.d}")


KernelSpec = Union[LinearKernel, ExponentialKernel, HilbertKernel]

_KERNEL_KINDS = {
    "linear": LinearKernel,
    "exponential": ExponentialKernel,
    "hilbert": HilbertKernel,
}


def kernel_from_config(kind: str, d: Optional[int] = None) -> KernelSpec:
    if kind not in _KERNEL_KINDS:
        raise ValueError(f"unknown kernel kind {kind!r}; choose from {sorted(_KERNEL_KINDS)}")
    if kind == "hilbert":
        if d is None:
            raise ValueError("hilbert kernel needs the ambient dimension d")
        return HilbertKernel(d=d)
    return _KERNEL_KINDS[kind]()


def hilbert_kernel(x: np.ndarray, x2: np.ndarray) -> float:
    """Inverse-distance kernel value; +inf flags an exact match."""
    x, x2 = np.asarray(x, dtype=np.float64), np.asarray(x2, dtype=np.float64)
    dist = float(np.linalg.norm(x - x2))
    if dist < EXACT_MATCH_DIST:
        return np.inf
    return dist ** (-x.shape[0])


def _allowed_mask(N: int, mask: MaskMode) -> np.ndarray:
    allowed = np.ones((N, N), dtype=bool)
    if mask is MaskMode.NONE:
        return allowed
    np.fill_diagonal(allowed, False)
    if mask is MaskMode.STRICT_CAUSAL:
        allowed &= np.tri(N, k=-1, dtype=bool)
    return allowed


def _normalize_log_weights(logk: np.ndarray, allowed: np.ndarray,
                           exact: Optional[np.ndarray] = None) -> np.ndarray:
    """Row-normalize exp(logk) over the allowed set without ever forming it.

    Rows whose true denominator would underflow DENOM_FLOOR get uniform
    weights over the allowed set (the smoother then returns the mean of the
    context labels); rows with no allowed entries are all-zero. ``exact``
    marks pairs flagged as exact matches, which absorb the whole row.
    """
    N = logk.shape[0]
    out = np.zeros((N, N))
    any_allowed = allowed.any(axis=1)
    uniform = np.divide(
        allowed.astype(np.float64),
        np.maximum(allowed.sum(axis=1, keepdims=True), 1),
    )
    if exact is not None:
        exact = exact & allowed
        hit = exact.any(axis=1)
        with np.errstate(invalid="ignore"):
            out[hit] = exact[hit] / exact[hit].sum(axis=1, keepdims=True)
    else:
        hit = np.zeros(N, dtype=bool)

    rest = any_allowed & ~hit
    if rest.any():
        masked = np.where(allowed, logk, -np.inf)
        shift = masked.max(axis=1, keepdims=True)
        shift = np.where(np.isfinite(shift), shift, 0.0)
        w = np.exp(masked - shift)
        w[~allowed] = 0.0
        s = w.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore"):
            log_denom = shift[:, 0] + np.log(s[:, 0])
        normal = rest & (log_denom >= _LOG_DENOM_FLOOR)
        fallback = rest & ~normal
        out[normal] = w[normal] / s[normal]
        out[fallback] = uniform[fallback]
    return out


def khat(X: np.ndarray, kernel: KernelSpec, mask: MaskMode = MaskMode.EXCLUDE_SELF) -> np.ndarray:
    """Row-stochastic kernel weights over the mask-allowed entries.

    Entry (i, j) is K(x_i, x_j) / sum over allowed j' of K(x_i, x_j');
    masked entries are exactly 0.
    """
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    allowed = _allowed_mask(N, mask)

    if isinstance(kernel, LinearKernel):
        K = np.where(allowed, X @ X.T, 0.0)
        denom = K.sum(axis=1, keepdims=True)
        out = np.divide(K, denom, out=np.zeros_like(K), where=np.abs(denom) >= DENOM_FLOOR)
        small = (np.abs(denom[:, 0]) < DENOM_FLOOR) & allowed.any(axis=1)
        if small.any():
            out[small] = allowed[small] / allowed[small].sum(axis=1, keepdims=True)
        return out

    if isinstance(kernel, ExponentialKernel):
        return _normalize_log_weights(X @ X.T, allowed)

    if isinstance(kernel, HilbertKernel):
        diff = X[:, None, :] - X[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        exact = dist < EXACT_MATCH_DIST
        with np.errstate(divide="ignore"):
            logk = -kernel.d * np.log(dist)
        return _normalize_log_weights(logk, allowed, exact=exact)

    raise TypeError(f"unknown kernel {type(kernel).__name__}")


def psi_L(A: PromptMatrix) -> np.ndarray:
    """(AA')A, the feature map realized by one linear attention layer."""
    if not A.query_label_zeroed:
        raise ValueError("psi_L expects the query label to be zeroed (use make_prefix)")
    M = A.rows
    return (M @ M.T) @ M


def psi_K(A: PromptMatrix, kernel: KernelSpec, mask: MaskMode = MaskMode.EXCLUDE_SELF) -> np.ndarray:
    """Khat(X, X) A: every row becomes a kernel-smoothed (x, y) pair."""
    if not A.query_label_zeroed:
        raise ValueError("psi_K expects the query label to be zeroed (use make_prefix)")
    X = A.rows[:, :-1]
    return khat(X, kernel, mask) @ A.rows


def last_row(M: np.ndarray) -> np.ndarray:
    return M[-1, :]


def last_element(M: np.ndarray) -> float:
    return float(M[-1, -1])


def query_weights(X_context: np.ndarray, x_query: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """Smoother weights of one query against its context (the khat query row,
    without paying for the full N x N matrix)."""
    Xq = np.concatenate([np.asarray(X_context), np.asarray(x_query)[None, :]], axis=0)
    return khat(Xq, kernel, MaskMode.EXCLUDE_SELF)[-1, :-1]


def batch_query_weights(X_context: np.ndarray, x_query: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """query_weights over a batch: (B, n, d) contexts, (B, d) queries -> (B, n).

    Same conventions as khat (exact-match absorption, underflow fallback to
    uniform weights); kept vectorized because evaluation sweeps call this for
    thousands of prompts.
    """
    Xc = np.asarray(X_context, dtype=np.float64)
    q = np.asarray(x_query, dtype=np.float64)
    B, n, _ = Xc.shape

    if isinstance(kernel, LinearKernel):
        K = np.einsum("bnd,bd->bn", Xc, q)
        denom = K.sum(axis=1, keepdims=True)
        out = np.divide(K, denom, out=np.zeros_like(K), where=np.abs(denom) >= DENOM_FLOOR)
        small = np.abs(denom[:, 0]) < DENOM_FLOOR
        out[small] = 1.0 / n
        return out

    if isinstance(kernel, ExponentialKernel):
        logk = np.einsum("bnd,bd->bn", Xc, q)
        exact = None
    elif isinstance(kernel, HilbertKernel):
        diff = Xc - q[:, None, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        exact = dist < EXACT_MATCH_DIST
        with np.errstate(divide="ignore"):
            logk = -kernel.d * np.log(dist)
    else:
        raise TypeError(f"unknown kernel {type(kernel).__name__}")

    with np.errstate(invalid="ignore", divide="ignore"):
        # rows with exact matches go nan here and are overwritten below
        shift = logk.max(axis=1, keepdims=True)
        w = np.exp(logk - shift)
        s = w.sum(axis=1, keepdims=True)
        out = w / s
        log_denom = shift[:, 0] + np.log(s[:, 0])
    out[log_denom < _LOG_DENOM_FLOOR] = 1.0 / n
    if exact is not None and exact.any():
        hit = exact.any(axis=1)
        out[hit] = exact[hit] / exact[hit].sum(axis=1, keepdims=True)
    return out
