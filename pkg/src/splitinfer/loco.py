"""Leave-one-covariate-out importance, its median variant, and prediction error.

All three parameters compare absolute prediction errors of fits made on the
first half, evaluated on the second half.  The mean version is stabilized by
hard-thresholding predictions and adding small uniform noise so that its
Normal and bootstrap approximations stay well behaved; the median version
needs neither and is covered by distribution-free order statistics.
"""

from __future__ import annotations

import math as pymath
from dataclasses import dataclass

import numpy as np

from .bootstrap import BootstrapConfig, BootstrapDraws, rectangles_from_draws
from .core import Dataset, SeededRng
from .projection import (
    ConfidenceRectangle,
    gaussian_sup_quantile,
    normal_upper_quantile,
)
from .selection import SelectedModel

__all__ = [
    "LocoConfig",
    "DeltaMatrix",
    "default_tau",
    "hard_threshold",
    "delta_matrix",
    "loco_estimate",
    "loco_ci_normal",
    "loco_ci_boot",
    "loco_boot_from_deltas",
    "median_interval_indices",
    "median_loco_ci",
    "prediction_ci",
]


def default_tau(y_first_half: np.ndarray) -> float:
    """Threshold level 10 * max |response| seen by the selection half."""
    peak = float(np.abs(y_first_half).max())
    return 10.0 * peak if peak > 0 else 1.0


def hard_threshold(values: np.ndarray, tau: float) -> np.ndarray:
    """Clip to [-tau, tau] preserving sign."""
    return np.clip(values, -tau, tau)


@dataclass(frozen=True)
class LocoConfig:
    """Noise and truncation settings for the mean-LOCO machinery.

    Both stabilizers default on, as the confidence-set theory wants; turn
    them off for plain point estimates.
    """

    rng: SeededRng
    epsilon: float = 0.05
    tau: float = 1.0
    include_noise: bool = True
    truncate: bool = True

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if not self.tau > 0:
            raise ValueError("tau must be positive")


@dataclass(frozen=True)
class DeltaMatrix:
    """Per-row, per-selected-column error differences delta_i(j).

    Rows follow the second-half dataset; columns follow `selected`.  Noise
    realizations are baked into `values`, so resampling rows of this matrix
    is exactly the triplet (x, y, xi) bootstrap.
    """

    values: np.ndarray
    selected: tuple[int, ...]
    truncated: bool
    noise_applied: bool

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[1] != len(self.selected):
            raise ValueError("delta matrix misaligned with selected set")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]


def _predictions(model: SelectedModel, data2: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """(full-model, per-j leave-out) linear predictions on the second half."""
    full = data2.x[:, list(model.selected)] @ model.coefficients
    missing = [j for j in model.selected if j not in model.leaveout]
    if missing:
        raise ValueError(f"leave-out refit missing for columns {missing}")
    per_j = np.empty((data2.n_rows, model.k))
    for col, j in enumerate(model.selected):
        sub, coefs = model.leaveout[j]
        per_j[:, col] = data2.x[:, list(sub)] @ coefs
    return full, per_j


def delta_matrix(model: SelectedModel, data2: Dataset, cfg: LocoConfig) -> DeltaMatrix:
    """delta_i(j) = |y_i - t(pred without j)| - |y_i - t(pred with j)| + eps*xi."""
    pred_full, pred_loo = _predictions(model, data2)
    if cfg.truncate:
        pred_full = hard_threshold(pred_full, cfg.tau)
        pred_loo = hard_threshold(pred_loo, cfg.tau)
    y = data2.y
    values = np.abs(y[:, None] - pred_loo) - np.abs(y - pred_full)[:, None]
    if cfg.include_noise and cfg.epsilon > 0:
        xi = cfg.rng.generator().uniform(-1.0, 1.0, size=values.shape)
        values = values + cfg.epsilon * xi
    if cfg.truncate and cfg.include_noise:
        observed_peak = max(np.abs(data2.x).max(), np.abs(y).max())
        bound = 2.0 * (observed_peak + cfg.tau) + cfg.epsilon
        assert np.abs(values).max() <= bound
    return DeltaMatrix(
        values=values,
        selected=model.selected,
        truncated=cfg.truncate,
        noise_applied=cfg.include_noise and cfg.epsilon > 0,
    )


def loco_estimate(deltas: DeltaMatrix) -> np.ndarray:
    if deltas.n == 0:
        raise ValueError("empty delta matrix")
    return deltas.values.mean(axis=0)


def delta_covariance(deltas: DeltaMatrix) -> np.ndarray:
    centered = deltas.values - deltas.values.mean(axis=0)
    cov = centered.T @ centered / deltas.n
    return (cov + cov.T) / 2.0


def loco_ci_normal(
    deltas: DeltaMatrix,
    alpha: float,
    mc_draws: int = 100_000,
    rng: SeededRng = SeededRng(0),
) -> tuple[ConfidenceRectangle, ConfidenceRectangle]:
    """Gaussian sup-norm cube and Bonferroni rectangle around the column means."""
    if deltas.n < 2:
        raise ValueError("need at least 2 rows for a normal interval")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    gamma_hat = loco_estimate(deltas)
    cov = delta_covariance(deltas)
    n, k = deltas.n, deltas.k
    level = 1.0 - alpha

    radius = gaussian_sup_quantile(cov, alpha, mc_draws, rng) / np.sqrt(n)
    cube = ConfidenceRectangle(
        lower=gamma_hat - radius,
        upper=gamma_hat + radius,
        level=level,
        method="normal_cube",
    )
    z = normal_upper_quantile(alpha / (2.0 * k))
    radii = z * np.sqrt(np.clip(np.diag(cov), 0.0, None) / n)
    rect = ConfidenceRectangle(
        lower=gamma_hat - radii,
        upper=gamma_hat + radii,
        level=level,
        method="normal_bonferroni",
    )
    return cube, rect


def loco_boot_from_deltas(
    deltas: DeltaMatrix, bcfg: BootstrapConfig
) -> tuple[ConfidenceRectangle, ConfidenceRectangle]:
    """Triplet bootstrap: resample delta rows (x, y and noise move together)."""
    gamma_hat = loco_estimate(deltas)
    n = deltas.n
    guard = bcfg.guard(1)
    stats = np.empty((bcfg.replicates, deltas.k))
    from .bootstrap import resample_indices

    for b in range(bcfg.replicates):
        idx, _ = resample_indices(n, bcfg.rng.derive(b), guard, bcfg.max_redraws)
        stats[b] = np.sqrt(n) * (deltas.values[idx].mean(axis=0) - gamma_hat)
    draws = BootstrapDraws(stats=stats)
    return rectangles_from_draws(
        gamma_hat, draws, n, bcfg.alpha, "boot_cube", "boot_rect"
    )


def loco_ci_boot(
    model: SelectedModel,
    data2: Dataset,
    cfg: LocoConfig,
    bcfg: BootstrapConfig,
) -> tuple[ConfidenceRectangle, ConfidenceRectangle]:
    """Bootstrap cube and rectangle for the mean-LOCO parameter."""
    return loco_boot_from_deltas(delta_matrix(model, data2, cfg), bcfg)


def median_interval_indices(n: int, k: int, alpha: float) -> tuple[int, int]:
    """1-based order-statistic ranks (l, u) for joint median coverage 1 - alpha."""
    if n < 1:
        raise ValueError("need at least one observation")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    radical = pymath.sqrt(n / 2.0 * pymath.log(2.0 * k / alpha))
    lo = max(pymath.ceil(n / 2.0 - radical), 1)
    hi = min(pymath.floor(n / 2.0 + radical), n)
    if lo > hi:
        raise ValueError(
            f"sample too small for median interval at alpha={alpha} and k={k}"
        )
    return lo, hi


def median_loco_ci(
    model: SelectedModel, data2: Dataset, alpha: float
) -> ConfidenceRectangle:
    """Order-statistic rectangle for the median-LOCO parameter.

    Uses the raw (untruncated, noiseless) error differences; validity is
    distribution-free, so no stabilization is needed.
    """
    cfg = LocoConfig(rng=SeededRng(0), include_noise=False, truncate=False)
    deltas = delta_matrix(model, data2, cfg)
    lo, hi = median_interval_indices(deltas.n, deltas.k, alpha)
    ordered = np.sort(deltas.values, axis=0)
    return ConfidenceRectangle(
        lower=ordered[lo - 1],
        upper=ordered[hi - 1],
        level=1.0 - alpha,
        method="median_order",
    )


def prediction_ci(
    model: SelectedModel,
    data2: Dataset,
    alpha: float,
    robust: LocoConfig | None = None,
) -> ConfidenceRectangle:
    """z-interval for the expected absolute prediction error.

    With a robust config the per-row errors are |y - t_tau(pred)| + eps*xi,
    matching the stabilized target.
    """
    if data2.n_rows < 2:
        raise ValueError("need at least 2 rows for a prediction interval")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    pred = data2.x[:, list(model.selected)] @ model.coefficients
    if robust is not None and robust.truncate:
        pred = hard_threshold(pred, robust.tau)
    errors = np.abs(data2.y - pred)
    if robust is not None and robust.include_noise and robust.epsilon > 0:
        xi = robust.rng.generator().uniform(-1.0, 1.0, size=errors.shape)
        errors = errors + robust.epsilon * xi
    n = errors.size
    rho_hat = errors.mean()
    s = np.sqrt(((errors - rho_hat) ** 2).mean())
    radius = normal_upper_quantile(alpha / 2.0) * s / np.sqrt(n)
    return ConfidenceRectangle(
        lower=np.array([rho_hat - radius]),
        upper=np.array([rho_hat + radius]),
        level=1.0 - alpha,
        method="prediction",
    )
