"""Classical per-prompt estimators: least squares, ridge, lasso, smoothers.

Each fit sees one prompt's context (X, y) and predicts the query label; no
estimator carries state across prompts except the two calibrated scalars
(the one-step-of-GD gain and a grid-tuned lambda), which are fitted on
held-out prompts drawn from the training stream.

No intercepts anywhere: every task family is zero-mean by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import featmap as fm
from .taskgen import PromptMatrix

LASSO_TOL = 1e-8
LASSO_MAX_ITER = 10_000


@dataclass(frozen=True)
class FitResult:
    coefficients: np.ndarray
    intercept: float = 0.0
    lam: Optional[float] = None
    converged: bool = True
    n_iter: int = 0

    def __post_init__(self):
        if not np.isfinite(self.coefficients).all():
            raise ValueError("fit produced non-finite coefficients")

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X) @ self.coefficients + self.intercept


def split_prompt(A: PromptMatrix):
    """(X_context, y_context, x_query, query_label) of a fully labeled prompt."""
    rows = A.rows
    return rows[:-1, :-1], rows[:-1, -1], rows[-1, :-1], float(rows[-1, -1])


def ols(X: np.ndarray, y: np.ndarray) -> FitResult:
    """Minimum-norm least squares (well-defined for n < d too)."""
    w, *_ = np.linalg.lstsq(np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64),
                            rcond=None)
    return FitResult(w)


def ridge(X: np.ndarray, y: np.ndarray, lam: float) -> FitResult:
    """(X'X + lam I)^{-1} X'y; lam = 0 routes through the pseudoinverse."""
    if lam < 0:
        raise ValueError(f"ridge penalty must be >= 0, got {lam}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if lam == 0.0:
        w, *_ = np.linalg.lstsq(X, y, rcond=None)
        return FitResult(w, lam=0.0)
    d = X.shape[1]
    w = np.linalg.solve(X.T @ X + lam * np.eye(d), X.T @ y)
    return FitResult(w, lam=lam)


def bayes_ridge_lambda(sigma: float, d: int) -> float:
    """The posterior-mean penalty sigma^2 d under the beta ~ N(0, I_d/d) prior."""
    return sigma * sigma * d


def _soft_threshold(rho: float, lam: float) -> float:
    if rho > lam:
        return rho - lam
    if rho < -lam:
        return rho + lam
    return 0.0


def lasso_cd(X: np.ndarray, y: np.ndarray, lam: float,
             tol: float = LASSO_TOL, max_iter: int = LASSO_MAX_ITER,
             w0: Optional[np.ndarray] = None) -> FitResult:
    """Cyclic coordinate descent on 0.5 ||y - Xw||^2 + lam ||w||_1.

    Converged when no coordinate moves more than tol in a sweep; hitting
    max_iter flags the result as unconverged instead of raising. ``w0`` warm
    starts the solve, which makes descending penalty sweeps cheap.
    """
    if lam <= 0:
        raise ValueError(f"lasso penalty must be > 0, got {lam}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = X.shape[1]
    w = np.zeros(d) if w0 is None else np.array(w0, dtype=np.float64)
    col_sq = np.einsum("nj,nj->j", X, X)
    resid = y - X @ w if w0 is not None else y.copy()
    prev_obj = 0.5 * (resid @ resid) + lam * np.abs(w).sum()
    converged = False
    sweep = 0
    for sweep in range(1, max_iter + 1):
        max_delta = 0.0
        for j in range(d):
            if col_sq[j] == 0.0:
                continue
            rho = X[:, j] @ resid + col_sq[j] * w[j]
            new_wj = _soft_threshold(rho, lam) / col_sq[j]
            delta = new_wj - w[j]
            if delta != 0.0:
                resid -= delta * X[:, j]
                w[j] = new_wj
                max_delta = max(max_delta, abs(delta))
        obj = 0.5 * (resid @ resid) + lam * np.abs(w).sum()
        assert obj <= prev_obj + 1e-9 * max(1.0, prev_obj), \
            f"lasso objective increased: {prev_obj} -> {obj}"
        prev_obj = obj
        if max_delta < tol:
            converged = True
            break
    return FitResult(w, lam=lam, converged=converged, n_iter=sweep)


def one_step_gd_predict(A: PromptMatrix, c: float) -> float:
    """c * x_q' X' y: a linear predictor after one gradient step from zero,
    with c playing the step-size role."""
    if not A.query_label_zeroed:
        raise ValueError("one_step_gd_predict expects the query label zeroed")
    X, y, xq, _ = split_prompt(A)
    return float(c * (xq @ (X.T @ y)))


def fit_scalar_gain(features: np.ndarray, targets: np.ndarray) -> float:
    """1-D least squares: the c minimizing sum (c*u_t - y_t)^2."""
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    denom = features @ features
    if denom == 0.0:
        return 0.0
    return float((features @ targets) / denom)


def smoother_predict(A: PromptMatrix, kernel: fm.KernelSpec) -> float:
    """Kernel-smoother estimate of the query label from the context rows."""
    if A.n < 2:
        raise ValueError("smoother needs at least one context example")
    X, y, xq, _ = split_prompt(A)
    return float(fm.query_weights(X, xq, kernel) @ y)


def lambda_grid(lo: float = 1e-4, hi: float = 1e2, num: int = 13) -> np.ndarray:
    return np.logspace(np.log10(lo), np.log10(hi), num)


def tune_lambda(fit: Callable[[np.ndarray, np.ndarray, float], FitResult],
                prompts: Sequence[PromptMatrix],
                grid: Optional[np.ndarray] = None) -> float:
    """Pick the grid lambda with the lowest mean squared query error on
    held-out prompts (fully labeled, so the true query label is available)."""
    if grid is None:
        grid = lambda_grid()
    splits = [split_prompt(A) for A in prompts]
    best_lam, best_err = None, np.inf
    for lam in grid:
        err = 0.0
        for X, y, xq, target in splits:
            pred = float(fit(X, y, lam).predict(xq[None, :])[0])
            err += (pred - target) ** 2
        if err < best_err:
            best_lam, best_err = float(lam), err
    return best_lam
