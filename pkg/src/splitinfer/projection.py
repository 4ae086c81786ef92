"""Projection-parameter estimation and Normal-approximation confidence sets.

The selected-model coefficients are written as a smooth function g of the
stacked moment vector psi = [vech(second-moment matrix); cross moments], so
that the estimator is g(psi_hat) and its sampling covariance follows from
the delta method: Gamma = G V G^T with G the Jacobian of g and V the
covariance of the per-row moment contributions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import ndtri

from .core import Dataset, SeededRng, _vech_indices, vech_dim, vech_length

__all__ = [
    "SingularMomentError",
    "PsiVector",
    "PluginCovariance",
    "ConfidenceRectangle",
    "METHOD_TAGS",
    "psi_hat",
    "moment_rows",
    "g",
    "ols",
    "jacobian_g",
    "plugin_covariance",
    "ci_normal_cube",
    "ci_normal_bonferroni",
    "empirical_upper_quantile",
    "gaussian_sup_quantile",
    "normal_upper_quantile",
    "symmetric_sqrt",
]

# Relative eigenvalue threshold below which the moment matrix is treated as
# singular and the projection parameter as undefined.
RCOND = 1e-12

METHOD_TAGS = frozenset(
    {
        "normal_cube",
        "normal_bonferroni",
        "boot_cube",
        "boot_rect",
        "image_boot",
        "median_order",
        "prediction",
    }
)


class SingularMomentError(ValueError):
    """Raised when the selected second-moment matrix is not invertible."""


@dataclass(frozen=True)
class PsiVector:
    """Stacked moment vector [vech(Sigma_hat); alpha_hat] for a size-k model."""

    k: int
    values: np.ndarray

    def __post_init__(self) -> None:
        expected = vech_length(self.k) + self.k
        if self.values.shape != (expected,):
            raise ValueError(
                f"psi vector for k={self.k} must have length {expected}"
            )

    @property
    def sigma_block(self) -> np.ndarray:
        return self.values[: vech_length(self.k)]

    @property
    def alpha_block(self) -> np.ndarray:
        return self.values[vech_length(self.k) :]


@dataclass(frozen=True)
class ConfidenceRectangle:
    """Per-coordinate closed intervals at a nominal level, tagged by method."""

    lower: np.ndarray
    upper: np.ndarray
    level: float
    method: str

    def __post_init__(self) -> None:
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must be in (0, 1)")
        if self.method not in METHOD_TAGS:
            raise ValueError(f"unknown method tag {self.method!r}")
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower/upper shape mismatch")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, point: np.ndarray) -> bool:
        p = np.asarray(point, dtype=np.float64)
        return bool(np.all(self.lower <= p) and np.all(p <= self.upper))


def _check_indices(data: Dataset, s) -> np.ndarray:
    s = np.asarray(s, dtype=np.intp).ravel()
    if s.size == 0:
        raise ValueError("selected index set must be nonempty")
    if s.min() < 0 or s.max() >= data.n_cols:
        raise IndexError(f"column index out of range for d={data.n_cols}")
    if np.unique(s).size != s.size:
        raise ValueError("selected index set contains duplicates")
    return s


def moment_rows(data: Dataset, s) -> np.ndarray:
    """Per-row moment contributions W_i = (vech(x_i x_i^T), y_i x_i), n x b."""
    s = _check_indices(data, s)
    xs = data.x[:, s]
    rows, cols = _vech_indices(s.size)
    return np.hstack([xs[:, rows] * xs[:, cols], data.y[:, None] * xs])


def psi_hat(data: Dataset, s) -> PsiVector:
    """Sample moment vector over the rows of `data` restricted to columns `s`."""
    w = moment_rows(data, s)
    k = np.asarray(s).size
    return PsiVector(k=k, values=w.mean(axis=0))


def _solve_spd(sigma: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve sigma @ x = rhs for symmetric positive-definite sigma."""
    eigs = np.linalg.eigvalsh(sigma)
    if eigs[0] <= RCOND * max(eigs[-1], 0.0) or eigs[-1] <= 0.0:
        raise SingularMomentError(
            "projection parameter undefined: singular moment matrix"
        )
    try:
        factor = cho_factor(sigma, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - eigens guard first
        raise SingularMomentError(
            "projection parameter undefined: singular moment matrix"
        ) from exc
    return cho_solve(factor, rhs, check_finite=False)


def g(psi: PsiVector) -> np.ndarray:
    """Map the moment vector to coefficients: solve math(sigma) beta = alpha."""
    from .core import math as _math

    sigma = _math(psi.sigma_block)
    return _solve_spd(sigma, psi.alpha_block)


def ols(data: Dataset, s) -> np.ndarray:
    """Least-squares coefficients on columns `s`; identical to g(psi_hat)."""
    return g(psi_hat(data, s))


def jacobian_g(psi: PsiVector) -> np.ndarray:
    """Jacobian of g at psi, k x b, columns in PsiVector layout.

    The derivative with respect to the full second-moment matrix is
    d beta / d Sigma_pq = -Omega[:, p] * beta[q]; the vech parameterization
    sums the two symmetric entries for each off-diagonal coordinate.
    """
    from .core import math as _math

    k = psi.k
    sigma = _math(psi.sigma_block)
    omega = _solve_spd(sigma, np.eye(k))
    omega = (omega + omega.T) / 2.0
    beta = omega @ psi.alpha_block

    rows, cols = _vech_indices(k)
    block = -(omega[:, rows] * beta[cols] + omega[:, cols] * beta[rows])
    block[:, rows == cols] /= 2.0
    return np.hstack([block, omega])


@dataclass(frozen=True)
class PluginCovariance:
    """Delta-method covariance Gamma = G V G^T with its factors."""

    gamma: np.ndarray
    jacobian: np.ndarray
    v_hat: np.ndarray

    def __post_init__(self) -> None:
        product = self.jacobian @ self.v_hat @ self.jacobian.T
        product = (product + product.T) / 2.0
        scale = max(np.abs(product).max(), 1.0)
        if np.abs(product - self.gamma).max() > 1e-10 * scale:
            raise ValueError("gamma does not match jacobian @ v_hat @ jacobian.T")
        if np.abs(self.v_hat - self.v_hat.T).max() != 0.0:
            raise ValueError("v_hat must be symmetric")

    @property
    def k(self) -> int:
        return self.gamma.shape[0]


def plugin_covariance(data: Dataset, s) -> PluginCovariance:
    """Plug-in covariance of the coefficient estimator on columns `s`."""
    w = moment_rows(data, s)
    psi = PsiVector(k=np.asarray(s).size, values=w.mean(axis=0))
    centered = w - psi.values
    v_hat = centered.T @ centered / w.shape[0]
    v_hat = (v_hat + v_hat.T) / 2.0
    jac = jacobian_g(psi)
    gamma = jac @ v_hat @ jac.T
    gamma = (gamma + gamma.T) / 2.0
    return PluginCovariance(gamma=gamma, jacobian=jac, v_hat=v_hat)


def empirical_upper_quantile(values: np.ndarray, level: float) -> float:
    """Smallest t with empirical P(value <= t) >= level: order stat ceil(level*n)."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    ordered = np.sort(np.asarray(values, dtype=np.float64).ravel())
    rank = int(np.ceil(level * ordered.size))
    rank = min(max(rank, 1), ordered.size)
    return float(ordered[rank - 1])


def symmetric_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric square root with negative eigenvalues clipped to zero."""
    m = (m + m.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(m)
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


_MC_CHUNK = 1 << 14


def gaussian_sup_quantile(
    cov: np.ndarray,
    alpha: float,
    mc_draws: int,
    rng: SeededRng,
) -> float:
    """(1 - alpha) Monte-Carlo quantile of the sup norm of N(0, cov).

    Draws are generated in fixed-size chunks on derived streams so the
    result does not depend on how the chunks are scheduled.
    """
    if mc_draws < 1_000:
        raise ValueError("mc_draws must be at least 1000")
    root = symmetric_sqrt(cov)
    k = root.shape[0]
    stats = np.empty(mc_draws)
    done = 0
    for chunk_index in range(-(-mc_draws // _MC_CHUNK)):
        m = min(_MC_CHUNK, mc_draws - done)
        q = rng.derive(chunk_index).generator().standard_normal((m, k))
        stats[done : done + m] = np.abs(q @ root.T).max(axis=1)
        done += m
    return empirical_upper_quantile(stats, 1.0 - alpha)


def normal_upper_quantile(p: float) -> float:
    """Upper p-quantile z_p of the standard Normal: P(Z > z_p) = p."""
    if not 0.0 < p < 1.0:
        raise ValueError("quantile level must be in (0, 1)")
    return float(ndtri(1.0 - p))


def ci_normal_cube(
    beta_hat: np.ndarray,
    cov: PluginCovariance,
    n: int,
    alpha: float,
    mc_draws: int = 100_000,
    rng: SeededRng = SeededRng(0),
) -> ConfidenceRectangle:
    """Equal-width box beta_hat +/- t_alpha / sqrt(n).

    The radius is the Monte-Carlo (1 - alpha) quantile of the sup norm of a
    centered Gaussian with the plug-in covariance.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    t_alpha = gaussian_sup_quantile(cov.gamma, alpha, mc_draws, rng)
    radius = t_alpha / np.sqrt(n)
    return ConfidenceRectangle(
        lower=beta_hat - radius,
        upper=beta_hat + radius,
        level=1.0 - alpha,
        method="normal_cube",
    )


def ci_normal_bonferroni(
    beta_hat: np.ndarray,
    cov: PluginCovariance,
    n: int,
    alpha: float,
) -> ConfidenceRectangle:
    """Per-coordinate intervals beta_hat_j +/- z_{alpha/(2k)} sqrt(Gamma_jj / n)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    k = cov.k
    diag = np.diag(cov.gamma).copy()
    if np.any(diag < 0.0):
        warnings.warn(
            "negative plug-in variance clipped to zero", RuntimeWarning, stacklevel=2
        )
        diag = np.clip(diag, 0.0, None)
    z = normal_upper_quantile(alpha / (2.0 * k))
    radius = z * np.sqrt(diag / n)
    return ConfidenceRectangle(
        lower=beta_hat - radius,
        upper=beta_hat + radius,
        level=1.0 - alpha,
        method="normal_bonferroni",
    )
