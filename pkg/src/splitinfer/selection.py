"""Model selectors run on the first half of the split.

Each selector returns the chosen index set, coefficients fitted on the same
half, and for every chosen j the refit obtained after deleting column j from
the data and re-running the whole procedure (needed by the leave-out
importance parameters).  Selectors are pure functions of (data, spec, seed).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .core import Dataset, SeededRng
from .projection import ols

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn

__all__ = [
    "SelectorSpec",
    "SelectedModel",
    "select",
    "select_topk",
    "select_stepwise",
    "select_lasso_cv",
    "register_selector",
    "lasso_path",
    "lasso_kkt_violation",
]

METHODS = ("topk_correlation", "forward_stepwise", "lasso_cv")


@dataclass(frozen=True)
class SelectorSpec:
    """Configuration of a model-selection procedure."""

    method: str
    k: int
    lasso_grid_size: int = 100
    lasso_grid_span: float = 1e-3
    folds: int = 10
    tie_break: str = "lowest_index"

    def __post_init__(self) -> None:
        if self.method not in METHODS and self.method not in _SELECTOR_REGISTRY:
            raise ValueError(f"unknown selector method {self.method!r}")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.method == "lasso_cv" and self.folds < 2:
            raise ValueError("lasso_cv needs at least 2 folds")
        if not 0.0 < self.lasso_grid_span < 1.0:
            raise ValueError("lasso_grid_span must be in (0, 1)")
        if self.tie_break != "lowest_index":
            raise ValueError("only lowest_index tie breaking is supported")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "k": self.k,
            "lasso_grid_size": self.lasso_grid_size,
            "lasso_grid_span": self.lasso_grid_span,
            "folds": self.folds,
            "tie_break": self.tie_break,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelectorSpec":
        return cls(
            method=str(d["method"]),
            k=int(d["k"]),
            lasso_grid_size=int(d.get("lasso_grid_size", 100)),
            lasso_grid_span=float(d.get("lasso_grid_span", 1e-3)),
            folds=int(d.get("folds", 10)),
            tie_break=str(d.get("tie_break", "lowest_index")),
        )


@dataclass(frozen=True)
class SelectedModel:
    """Selected index set, fitted coefficients, and per-j leave-out refits."""

    selected: tuple[int, ...]
    coefficients: np.ndarray
    leaveout: dict[int, tuple[tuple[int, ...], np.ndarray]] = field(repr=False)
    k_max: int = 0

    def __post_init__(self) -> None:
        if not 0 < len(self.selected) <= self.k_max:
            raise ValueError("selected set size must be in (0, k_max]")
        if len(self.coefficients) != len(self.selected):
            raise ValueError("coefficients misaligned with selected set")
        for j, (subset, coefs) in self.leaveout.items():
            if j in subset:
                raise AssertionError(f"leave-out set for {j} still contains {j}")
            if not 0 < len(subset) <= self.k_max:
                raise ValueError(f"leave-out set for {j} has invalid size")
            if len(coefs) != len(subset):
                raise ValueError(f"leave-out coefficients for {j} misaligned")

    @property
    def k(self) -> int:
        return len(self.selected)


def _nonzero_variance_columns(x: np.ndarray) -> np.ndarray:
    spread = x.max(axis=0) - x.min(axis=0)
    return spread > 0.0


def _abs_correlations(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """|corr(X_j, Y)| per column, with a usable-column mask.

    Zero-variance columns are excluded with a warning; a constant response
    makes every correlation zero (ranking falls back to column order).
    """
    x, y = data.x, data.y
    usable = _nonzero_variance_columns(x)
    if not usable.any():
        raise ValueError("all columns have zero variance; nothing to select")
    if not usable.all():
        dropped = np.flatnonzero(~usable).tolist()
        warnings.warn(
            f"zero-variance columns excluded from selection: {dropped}",
            RuntimeWarning,
            stacklevel=3,
        )
    xc = x - x.mean(axis=0)
    yc = y - y.mean()
    sx = np.sqrt((xc**2).sum(axis=0))
    sy = np.sqrt((yc**2).sum())
    corr = np.zeros(x.shape[1])
    if sy > 0.0:
        np.divide(np.abs(xc.T @ yc), sx * sy, out=corr, where=usable & (sx > 0))
    return corr, usable


def _rank_topk(corr: np.ndarray, usable: np.ndarray, k: int,
               exclude: int | None = None) -> tuple[int, ...]:
    mask = usable.copy()
    if exclude is not None:
        mask[exclude] = False
    candidates = np.flatnonzero(mask)
    # sort by descending |corr|, ties by lowest column index
    order = candidates[np.lexsort((candidates, -corr[candidates]))]
    take = min(k, order.size)
    if take == 0:
        raise ValueError("no usable columns left to select")
    return tuple(int(j) for j in order[:take])


def select_topk(data: Dataset, k: int) -> SelectedModel:
    """The k columns most correlated (absolutely) with the response."""
    if not 1 <= k <= data.n_cols:
        raise ValueError("k must be in [1, d]")
    corr, usable = _abs_correlations(data)
    selected = _rank_topk(corr, usable, k)
    leaveout = {}
    for j in selected:
        sub = _rank_topk(corr, usable, k, exclude=j)
        leaveout[j] = (sub, ols(data, sub))
    return SelectedModel(
        selected=selected,
        coefficients=ols(data, selected),
        leaveout=leaveout,
        k_max=k,
    )


def _stepwise_path(x: np.ndarray, y: np.ndarray, k: int,
                   exclude: int | None = None) -> tuple[int, ...]:
    """Greedy RSS-minimizing forward selection via Gram-Schmidt updates."""
    n, d = x.shape
    resid_x = x.copy()
    if exclude is not None:
        resid_x[:, exclude] = 0.0
    r = y.astype(np.float64).copy()
    base_norm2 = (resid_x**2).sum(axis=0)
    tol_col = 1e-12 * np.maximum(base_norm2, 1.0)
    tol_rss = 1e-12 * max(float(y @ y), 1.0)
    chosen: list[int] = []
    for _ in range(k):
        norm2 = (resid_x**2).sum(axis=0)
        alive = norm2 > tol_col
        if not alive.any():
            break
        gain = np.zeros(d)
        proj = resid_x.T @ r
        np.divide(proj**2, norm2, out=gain, where=alive)
        best = float(gain.max())
        if best <= tol_rss:
            break
        j = int(np.flatnonzero(gain == best).min())
        q = resid_x[:, j] / np.sqrt(norm2[j])
        r = r - q * (q @ r)
        resid_x = resid_x - np.outer(q, q @ resid_x)
        resid_x[:, j] = 0.0
        chosen.append(j)
    if not chosen:
        raise ValueError("stepwise selection found no usable column")
    return tuple(chosen)


def select_stepwise(data: Dataset, k: int) -> SelectedModel:
    """Forward stepwise selection, exactly k steps unless RSS gains vanish."""
    if not 1 <= k <= min(data.n_cols, data.n_rows - 1):
        raise ValueError("k must be in [1, min(d, n-1)]")
    selected = _stepwise_path(data.x, data.y, k)
    leaveout = {}
    for j in selected:
        sub = _stepwise_path(data.x, data.y, k, exclude=j)
        leaveout[j] = (sub, ols(data, sub))
    return SelectedModel(
        selected=selected,
        coefficients=ols(data, selected),
        leaveout=leaveout,
        k_max=k,
    )


@njit(cache=True)
def _cd_path_kernel(xs, y, lambdas, max_sweeps, tol):  # pragma: no cover - jit
    n, d = xs.shape
    norm2 = np.zeros(d)
    for j in range(d):
        acc = 0.0
        for i in range(n):
            acc += xs[i, j] * xs[i, j]
        norm2[j] = acc / n
    betas = np.zeros((lambdas.size, d))
    beta = np.zeros(d)
    r = y.copy()
    for li in range(lambdas.size):
        lam = lambdas[li]
        for _ in range(max_sweeps):
            max_change = 0.0
            for j in range(d):
                if norm2[j] <= 0.0:
                    continue
                old = beta[j]
                rho = 0.0
                for i in range(n):
                    rho += xs[i, j] * r[i]
                rho = rho / n + norm2[j] * old
                if rho > lam:
                    new = (rho - lam) / norm2[j]
                elif rho < -lam:
                    new = (rho + lam) / norm2[j]
                else:
                    new = 0.0
                if new != old:
                    diff = old - new
                    for i in range(n):
                        r[i] += xs[i, j] * diff
                    beta[j] = new
                    if abs(diff) > max_change:
                        max_change = abs(diff)
            if max_change < tol:
                break
        betas[li] = beta
    return betas


def _cd_path_python(xs, y, lambdas, max_sweeps, tol, check_objective=False):
    """Reference implementation of the coordinate-descent path."""
    n, d = xs.shape
    norm2 = (xs**2).sum(axis=0) / n
    betas = np.zeros((lambdas.size, d))
    beta = np.zeros(d)
    r = y.copy()
    for li, lam in enumerate(lambdas):
        prev_obj = np.inf
        for _ in range(max_sweeps):
            max_change = 0.0
            for j in range(d):
                if norm2[j] <= 0.0:
                    continue
                old = beta[j]
                rho = (xs[:, j] @ r) / n + norm2[j] * old
                new = np.sign(rho) * max(abs(rho) - lam, 0.0) / norm2[j]
                if new != old:
                    r += xs[:, j] * (old - new)
                    beta[j] = new
                    max_change = max(max_change, abs(new - old))
            if check_objective:
                obj = 0.5 * (r @ r) / n + lam * np.abs(beta).sum()
                assert obj <= prev_obj + 1e-12 * max(prev_obj, 1.0)
                prev_obj = obj
            if max_change < tol:
                break
        betas[li] = beta
    return betas


MAX_SWEEPS = 10_000
SWEEP_TOL = 1e-8


def lasso_path(
    x: np.ndarray,
    y: np.ndarray,
    lambdas: np.ndarray,
    use_python: bool = False,
) -> np.ndarray:
    """Coordinate-descent solutions along a decreasing penalty grid.

    Columns are assumed pre-scaled by the caller; warm starts run the grid
    from its largest penalty down.
    """
    xs = np.ascontiguousarray(x, dtype=np.float64)
    ys = np.ascontiguousarray(y, dtype=np.float64)
    lam = np.ascontiguousarray(lambdas, dtype=np.float64)
    if use_python:
        return _cd_path_python(xs, ys, lam, MAX_SWEEPS, SWEEP_TOL)
    return _cd_path_kernel(xs, ys, lam, MAX_SWEEPS, SWEEP_TOL)


def lasso_kkt_violation(x, y, beta, lam) -> float:
    """Worst subgradient violation of the lasso optimality conditions."""
    n = x.shape[0]
    grad = x.T @ (y - x @ beta) / n
    active = beta != 0
    worst = 0.0
    if active.any():
        worst = np.abs(grad[active] - lam * np.sign(beta[active])).max()
    if (~active).any():
        worst = max(worst, float(np.clip(np.abs(grad[~active]) - lam, 0.0, None).max()))
    return float(worst)


def _column_scales(x: np.ndarray) -> np.ndarray:
    """Unit root-mean-square scaling; keeps the no-intercept estimand."""
    scale = np.sqrt((x**2).mean(axis=0))
    return np.where(scale > 0.0, scale, 1.0)


def _lasso_grid(xs: np.ndarray, y: np.ndarray, spec: SelectorSpec) -> np.ndarray:
    lam_max = np.abs(xs.T @ y).max() / xs.shape[0]
    if lam_max <= 0.0:
        lam_max = 1.0
    return np.geomspace(lam_max, lam_max * spec.lasso_grid_span, spec.lasso_grid_size)


def _lasso_cv_fit(data: Dataset, spec: SelectorSpec, rng: SeededRng,
                  exclude: int | None = None) -> tuple[tuple[int, ...], np.ndarray]:
    """CV-tuned lasso; returns (support truncated to k, coefficients on it)."""
    x = data.x.copy()
    if exclude is not None:
        x[:, exclude] = 0.0
    y = data.y
    n = x.shape[0]
    if n < spec.folds:
        raise ValueError("need at least as many rows as folds")

    scale = _column_scales(x)
    xs_full = x / scale
    lambdas = _lasso_grid(xs_full, y, spec)

    perm = rng.generator().permutation(n)
    fold_ids = np.array_split(perm, spec.folds)
    cv_sse = np.zeros(lambdas.size)
    for holdout in fold_ids:
        mask = np.ones(n, dtype=bool)
        mask[holdout] = False
        x_tr = x[mask]
        tr_scale = _column_scales(x_tr)
        betas = lasso_path(x_tr / tr_scale, y[mask], lambdas)
        preds = (x[holdout] / tr_scale) @ betas.T
        cv_sse += ((preds - y[holdout][:, None]) ** 2).sum(axis=0)
    best = int(np.argmin(cv_sse / n))

    beta_std = lasso_path(xs_full, y, lambdas[: best + 1])[-1]
    beta = beta_std / scale
    support = np.flatnonzero(beta)
    if support.size == 0:
        warnings.warn(
            "lasso support empty at every penalty; falling back to the single "
            "most correlated column",
            RuntimeWarning,
            stacklevel=3,
        )
        corr, usable = _abs_correlations(data)
        return _rank_topk(corr, usable, 1, exclude=exclude), None
    if support.size > spec.k:
        keep = np.argsort(-np.abs(beta[support]), kind="stable")[: spec.k]
        support = np.sort(support[keep])
    return tuple(int(j) for j in support), beta[support]


def select_lasso_cv(data: Dataset, spec: SelectorSpec,
                    rng: SeededRng) -> SelectedModel:
    """Lasso with the penalty chosen by cross-validated squared error."""
    if spec.method != "lasso_cv":
        raise ValueError("spec.method must be lasso_cv")
    selected, coefs = _lasso_cv_fit(data, spec, rng.derive(0))
    if coefs is None:
        coefs = ols(data, selected)
    leaveout = {}
    for j in selected:
        sub, sub_coefs = _lasso_cv_fit(data, spec, rng.derive(1 + j), exclude=j)
        if sub_coefs is None:
            sub_coefs = ols(data, sub)
        leaveout[j] = (sub, sub_coefs)
    return SelectedModel(
        selected=selected,
        coefficients=np.asarray(coefs, dtype=np.float64),
        leaveout=leaveout,
        k_max=spec.k,
    )


_SELECTOR_REGISTRY: dict[str, Callable[[Dataset, SelectorSpec, SeededRng], SelectedModel]] = {}


def register_selector(name: str, fn) -> None:
    """Register a custom selector callable (data, spec, rng) -> SelectedModel."""
    if name in METHODS:
        raise ValueError(f"{name!r} is a built-in selector")
    _SELECTOR_REGISTRY[name] = fn


def select(data: Dataset, spec: SelectorSpec, rng: SeededRng) -> SelectedModel:
    """Dispatch on spec.method; custom registered selectors take (data, spec, rng)."""
    if spec.method == "topk_correlation":
        return select_topk(data, spec.k)
    if spec.method == "forward_stepwise":
        return select_stepwise(data, spec.k)
    if spec.method == "lasso_cv":
        return select_lasso_cv(data, spec, rng)
    return _SELECTOR_REGISTRY[spec.method](data, spec, rng)
