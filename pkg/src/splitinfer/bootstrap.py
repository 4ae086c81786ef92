"""Pairs-bootstrap engine and bootstrap confidence sets.

Whole (x, y) rows are resampled with replacement, never residuals: the
resampling must stay valid when the regression function is not linear.
Every replicate draws from its own derived random stream, so results are
bitwise reproducible at any worker count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, SeededRng, _vech_indices, vech_length
from .projection import (
    RCOND,
    ConfidenceRectangle,
    PsiVector,
    SingularMomentError,
    empirical_upper_quantile,
    g,
    moment_rows,
    ols,
)

__all__ = [
    "BootstrapConfig",
    "BootstrapDraws",
    "pairs_resample",
    "resample_indices",
    "beta_boot_draws",
    "boot_ci_beta",
    "image_boot_ci",
    "rectangles_from_draws",
]


@dataclass(frozen=True)
class BootstrapConfig:
    """Replication count, level, distinct-row guard and stream for one engine run."""

    rng: SeededRng
    replicates: int = 2000
    alpha: float = 0.05
    min_distinct: int | None = None
    max_redraws: int = 100

    def __post_init__(self) -> None:
        if self.replicates < 100:
            raise ValueError("need at least 100 bootstrap replicates")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.min_distinct is not None and self.min_distinct < 1:
            raise ValueError("min_distinct must be at least 1")
        if self.max_redraws < 0:
            raise ValueError("max_redraws must be nonnegative")

    def guard(self, needed: int) -> int:
        """Effective distinct-row threshold; defaults to `needed`."""
        if self.min_distinct is None:
            return needed
        if self.min_distinct < needed:
            raise ValueError(
                f"min_distinct={self.min_distinct} below the {needed} distinct "
                "rows this statistic needs"
            )
        return self.min_distinct


@dataclass(frozen=True)
class BootstrapDraws:
    """Replicate statistics (rows) plus the number of guard redraws."""

    stats: np.ndarray
    failures: int = 0

    def __post_init__(self) -> None:
        if self.stats.ndim != 2:
            raise ValueError("stats must be a B x k matrix")


def resample_indices(
    n: int,
    rng: SeededRng,
    min_distinct: int = 1,
    max_redraws: int = 100,
) -> tuple[np.ndarray, int]:
    """One with-replacement draw of n row indices, redrawn while too degenerate.

    Returns (indices, redraw count).  Exhausting the redraw budget signals a
    selected-model size too close to n (the no-guard failure probability is
    already exponentially small for min_distinct <= n/2).
    """
    if n < 1:
        raise ValueError("cannot resample an empty dataset")
    if min_distinct > n:
        raise ValueError("min_distinct cannot exceed the number of rows")
    gen = rng.generator()
    redraws = 0
    while True:
        idx = gen.integers(0, n, size=n)
        if np.unique(idx).size >= min_distinct:
            return idx, redraws
        redraws += 1
        if redraws > max_redraws:
            raise RuntimeError(
                "degenerate bootstrap sample: distinct-row guard failed after "
                f"{max_redraws} redraws (min_distinct={min_distinct}, n={n})"
            )


def pairs_resample(
    data: Dataset,
    rng: SeededRng,
    min_distinct: int = 1,
    max_redraws: int = 100,
) -> Dataset:
    """Resample n whole rows uniformly with replacement."""
    idx, _ = resample_indices(data.n_rows, rng, min_distinct, max_redraws)
    return data.take(idx)


def _index_matrix(
    n: int,
    cfg: BootstrapConfig,
    min_distinct: int,
) -> tuple[np.ndarray, int]:
    """B x n resample indices, replicate b drawn from stream derive(b)."""
    indices = np.empty((cfg.replicates, n), dtype=np.intp)
    failures = 0
    for b in range(cfg.replicates):
        indices[b], redrawn = resample_indices(
            n, cfg.rng.derive(b), min_distinct, cfg.max_redraws
        )
        failures += redrawn
    return indices, failures


def beta_boot_draws(data2: Dataset, s, cfg: BootstrapConfig) -> BootstrapDraws:
    """Replicate statistics sqrt(n) * (beta_star - beta_hat) for OLS on `s`."""
    s = np.asarray(s, dtype=np.intp).ravel()
    beta_hat = ols(data2, s)
    n, k = data2.n_rows, s.size
    indices, failures = _index_matrix(n, cfg, cfg.guard(k))

    xs = data2.x[:, s]
    xb = xs[indices]                      # B x n x k
    yb = data2.y[indices]                 # B x n
    sigma = np.einsum("bni,bnj->bij", xb, xb) / n
    alpha = np.einsum("bni,bn->bi", xb, yb) / n
    try:
        betas = np.linalg.solve(sigma, alpha[..., None])[..., 0]
    except np.linalg.LinAlgError:
        # exactly singular replicates are measure-zero for continuous data;
        # solve row by row so only the offending replicate fails loudly
        betas = np.empty((cfg.replicates, k))
        for b in range(cfg.replicates):
            try:
                betas[b] = np.linalg.solve(sigma[b], alpha[b])
            except np.linalg.LinAlgError as exc:
                raise SingularMomentError(
                    "degenerate bootstrap sample: singular resampled moment matrix"
                ) from exc
    stats = np.sqrt(n) * (betas - beta_hat)
    return BootstrapDraws(stats=stats, failures=failures)


def rectangles_from_draws(
    center: np.ndarray,
    draws: BootstrapDraws,
    n: int,
    alpha: float,
    cube_method: str,
    rect_method: str,
) -> tuple[ConfidenceRectangle, ConfidenceRectangle]:
    """Sup-norm cube and per-coordinate (union bound) rectangle around `center`."""
    k = draws.stats.shape[1]
    level = 1.0 - alpha
    sup_stats = np.abs(draws.stats).max(axis=1)
    t_cube = empirical_upper_quantile(sup_stats, level)
    radius = t_cube / np.sqrt(n)
    cube = ConfidenceRectangle(
        lower=center - radius,
        upper=center + radius,
        level=level,
        method=cube_method,
    )
    per_coord_level = 1.0 - alpha / k
    radii = np.array(
        [
            empirical_upper_quantile(np.abs(draws.stats[:, j]), per_coord_level)
            for j in range(k)
        ]
    ) / np.sqrt(n)
    rect = ConfidenceRectangle(
        lower=center - radii,
        upper=center + radii,
        level=level,
        method=rect_method,
    )
    return cube, rect


def boot_ci_beta(
    data2: Dataset, s, cfg: BootstrapConfig
) -> tuple[ConfidenceRectangle, ConfidenceRectangle]:
    """Pairs-bootstrap cube and rectangle for the projection coefficients."""
    beta_hat = ols(data2, s)
    draws = beta_boot_draws(data2, s, cfg)
    return rectangles_from_draws(
        beta_hat, draws, data2.n_rows, cfg.alpha, "boot_cube", "boot_rect"
    )


def _psi_sup_radius(w: np.ndarray, psi_hat_values: np.ndarray,
                    cfg: BootstrapConfig, min_distinct: int) -> float:
    """Bootstrap quantile t* of sqrt(n) * sup-norm deviation of the moment vector."""
    n = w.shape[0]
    indices, _ = _index_matrix(n, cfg, min_distinct)
    boot_means = w[indices].mean(axis=1)
    stats = np.sqrt(n) * np.abs(boot_means - psi_hat_values).max(axis=1)
    return empirical_upper_quantile(stats, 1.0 - cfg.alpha)


_SAMPLE_CHUNK = 1 << 13


def image_boot_ci(
    data2: Dataset,
    s,
    cfg: BootstrapConfig,
    n_samples: int = 4000,
) -> ConfidenceRectangle:
    """Image-bootstrap rectangle: map a bootstrap cube for psi through g.

    Bootstraps the moment vector to get a sup-norm cube, samples uniformly
    inside it (rejecting points whose moment block is not positive
    definite), and spans the per-coordinate range of g over the accepted
    points plus the center.
    """
    if n_samples < 1_000:
        raise ValueError("n_samples must be at least 1000")
    s = np.asarray(s, dtype=np.intp).ravel()
    k = s.size
    w = moment_rows(data2, s)
    psi_values = w.mean(axis=0)
    psi = PsiVector(k=k, values=psi_values)
    beta_hat = g(psi)

    radius = _psi_sup_radius(w, psi_values, cfg, cfg.guard(k)) / np.sqrt(data2.n_rows)
    lo = psi_values - radius
    hi = psi_values + radius

    nv = vech_length(k)
    vr, vc = _vech_indices(k)
    accepted = 0
    drawn = 0
    g_min = np.full(k, np.inf)
    g_max = np.full(k, -np.inf)
    for chunk_index in range(-(-n_samples // _SAMPLE_CHUNK)):
        m = min(_SAMPLE_CHUNK, n_samples - drawn)
        gen = cfg.rng.derive(1_000_000 + chunk_index).generator()
        samples = gen.uniform(lo, hi, size=(m, lo.size))
        drawn += m

        sigmas = np.zeros((m, k, k))
        sigmas[:, vr, vc] = samples[:, :nv]
        sigmas[:, vc, vr] = samples[:, :nv]
        eigs = np.linalg.eigvalsh(sigmas)
        ok = (eigs[:, 0] > RCOND * np.clip(eigs[:, -1], 0.0, None)) & (eigs[:, -1] > 0)
        if not ok.any():
            continue
        accepted += int(ok.sum())
        betas = np.linalg.solve(sigmas[ok], samples[ok, nv:][..., None])[..., 0]
        g_min = np.minimum(g_min, betas.min(axis=0))
        g_max = np.maximum(g_max, betas.max(axis=0))

    if accepted < 0.01 * drawn:
        raise RuntimeError(
            "image bootstrap cube leaves the PD cone: acceptance rate "
            f"{accepted / max(drawn, 1):.4f} < 1% (near-singular moment matrix)"
        )
    g_min = np.minimum(g_min, beta_hat)
    g_max = np.maximum(g_max, beta_hat)
    return ConfidenceRectangle(
        lower=g_min,
        upper=g_max,
        level=1.0 - cfg.alpha,
        method="image_boot",
    )
