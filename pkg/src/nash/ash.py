"""Adaptive-shrinkage mixture prior: a point mass at zero plus zero-mean normals.

This is the covariate-free prior family.  Component variances live on a fixed
ascending grid whose first entry is exactly zero; only the mixture weights are
estimated, by expectation-maximization on the marginal likelihood of the
noisy coefficient estimates.  Posteriors are conjugate and available in
closed form per component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class MixtureGrid:
    """Ascending component variances; the first entry is the point mass at zero."""

    variances: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.variances, dtype=float)
        if v.ndim != 1 or v.size < 1:
            raise ValueError("variance grid must be a non-empty vector")
        if v[0] != 0.0:
            raise ValueError("first grid entry must be exactly 0 (point mass)")
        if not np.isfinite(v).all():
            raise ValueError("grid variances must be finite")
        if v.size > 1 and not np.all(np.diff(v) > 0):
            raise ValueError("grid variances must be strictly ascending")
        object.__setattr__(self, "variances", v)

    @property
    def n_components(self) -> int:
        return self.variances.size


@dataclass(frozen=True)
class MixtureWeights:
    """Simplex vector of mixture proportions."""

    pi: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        if pi.ndim != 1 or np.any(pi < 0):
            raise ValueError("weights must be a non-negative vector")
        if abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {pi.sum()}, not 1")
        object.__setattr__(self, "pi", pi)

    @classmethod
    def uniform(cls, m: int) -> "MixtureWeights":
        return cls(np.full(m, 1.0 / m))


@dataclass(frozen=True)
class PosteriorSummary:
    """Per-coordinate posterior summary under the estimated prior."""

    mean: float
    variance: float
    null_prob: float
    log_marginal: float


@dataclass(frozen=True)
class PosteriorStats:
    """Vectorized posterior summaries for all coordinates."""

    mean: np.ndarray
    variance: np.ndarray
    null_prob: np.ndarray
    log_marginal: np.ndarray

    def summary(self, j: int) -> PosteriorSummary:
        return PosteriorSummary(
            mean=float(self.mean[j]),
            variance=float(self.variance[j]),
            null_prob=float(self.null_prob[j]),
            log_marginal=float(self.log_marginal[j]),
        )


def default_grid(beta_bar: np.ndarray, sigma02: float, n_components: int = 20) -> MixtureGrid:
    """Build the default variance grid: zero plus a geometric ladder.

    The ladder runs from sigma02/100 up to max(4*(max beta^2 - sigma02), sigma02),
    so it always spans at least two decades and covers the observed spread.
    """
    if n_components < 2:
        raise ValueError("need at least two mixture components")
    beta_bar = np.asarray(beta_bar, dtype=float)
    lower = sigma02 / 100.0
    upper = max(4.0 * (float(np.max(beta_bar**2, initial=0.0)) - sigma02), sigma02)
    if n_components == 2:
        ladder = np.array([upper])
    else:
        ladder = np.geomspace(lower, upper, n_components - 1)
    return MixtureGrid(np.concatenate(([0.0], ladder)))


def marginal_loglik_matrix(beta_bar: np.ndarray, sigma02: float, grid: MixtureGrid) -> np.ndarray:
    """log N(beta_j; 0, sigma02 + sigma_m^2) for every coordinate and component."""
    if sigma02 <= 0:
        raise ValueError("sigma02 must be positive")
    beta_bar = np.asarray(beta_bar, dtype=float)
    total_var = sigma02 + grid.variances[None, :]
    return -0.5 * (LOG_2PI + np.log(total_var) + beta_bar[:, None] ** 2 / total_var)


def _log_weights(pi: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(pi > 0, np.log(np.maximum(pi, 1e-300)), -np.inf)


def mixture_objective(log_lik: np.ndarray, pi: np.ndarray) -> float:
    """Marginal log likelihood sum_j log sum_m pi_m exp(L_jm)."""
    return float(logsumexp(log_lik + _log_weights(pi)[None, :], axis=1).sum())


def fit_weights_em(
    log_lik: np.ndarray,
    init: MixtureWeights,
    max_iter: int = 1000,
    tol: float = 1e-8,
) -> MixtureWeights:
    """Estimate mixture weights by EM on the marginal likelihood.

    Each iteration computes posterior component responsibilities and averages
    them; the objective is non-decreasing and the loop stops once its relative
    change drops below ``tol``.
    """
    log_lik = np.asarray(log_lik, dtype=float)
    if not np.isfinite(log_lik).all():
        raise ValueError("log-likelihood matrix must be finite")
    m = log_lik.shape[1]
    if init.pi.size != m:
        raise ValueError("weight length does not match the likelihood matrix")
    if m == 1:
        return MixtureWeights(np.array([1.0]))
    pi = init.pi.copy()
    prev = mixture_objective(log_lik, pi)
    for _ in range(max_iter):
        a = log_lik + _log_weights(pi)[None, :]
        a -= logsumexp(a, axis=1)[:, None]
        pi = np.exp(a).mean(axis=0)
        pi /= pi.sum()
        cur = mixture_objective(log_lik, pi)
        if abs(cur - prev) <= tol * (1.0 + abs(prev)):
            break
        prev = cur
    return MixtureWeights(pi)


def _component_posteriors(beta_bar: np.ndarray, sigma02: float, variances: np.ndarray):
    """Conjugate per-component posterior means and variances (zero-mean components)."""
    shrink = variances[None, :] / (variances[None, :] + sigma02)
    comp_mean = np.asarray(beta_bar, dtype=float)[:, None] * shrink
    comp_var = sigma02 * shrink
    return comp_mean, comp_var


def mixture_posterior_stats(
    beta_bar: np.ndarray,
    sigma02: float,
    grid: MixtureGrid,
    weights: MixtureWeights | np.ndarray,
) -> PosteriorStats:
    """Posterior summaries for every coordinate under mixture weights.

    ``weights`` may be a single simplex (shared prior) or a p x M matrix of
    per-coordinate simplexes (covariate-moderated priors).
    """
    beta_bar = np.asarray(beta_bar, dtype=float)
    pi = weights.pi if isinstance(weights, MixtureWeights) else np.asarray(weights, dtype=float)
    log_lik = marginal_loglik_matrix(beta_bar, sigma02, grid)
    if pi.ndim == 1:
        log_pi = _log_weights(pi)[None, :]
    else:
        log_pi = _log_weights(pi)
    a = log_lik + log_pi
    log_marginal = logsumexp(a, axis=1)
    gamma = np.exp(a - log_marginal[:, None])
    comp_mean, comp_var = _component_posteriors(beta_bar, sigma02, grid.variances)
    mean = (gamma * comp_mean).sum(axis=1)
    second = (gamma * (comp_var + comp_mean**2)).sum(axis=1)
    variance = np.maximum(second - mean**2, 0.0)
    return PosteriorStats(
        mean=mean,
        variance=variance,
        null_prob=gamma[:, 0],
        log_marginal=log_marginal,
    )


def posterior_summary(
    beta_bar_j: float,
    sigma02: float,
    grid: MixtureGrid,
    weights: MixtureWeights,
) -> PosteriorSummary:
    """Posterior summary of a single coordinate under the mixture prior."""
    stats = mixture_posterior_stats(np.array([beta_bar_j]), sigma02, grid, weights)
    return stats.summary(0)


def cebnm_solve(
    beta_bar: np.ndarray,
    sigma02: float,
    n_components: int = 20,
    grid: MixtureGrid | None = None,
    init: MixtureWeights | None = None,
    em_max_iter: int = 1000,
    em_tol: float = 1e-8,
) -> tuple[dict, list[PosteriorSummary]]:
    """Solve the normal-means subproblem end to end for the shared mixture prior.

    Builds the grid, estimates the weights by EM and returns the fitted prior
    parameters with one posterior summary per coordinate.
    """
    beta_bar = np.asarray(beta_bar, dtype=float)
    if grid is None:
        grid = default_grid(beta_bar, sigma02, n_components)
    log_lik = marginal_loglik_matrix(beta_bar, sigma02, grid)
    if init is None:
        init = MixtureWeights.uniform(grid.n_components)
    weights = fit_weights_em(log_lik, init, max_iter=em_max_iter, tol=em_tol)
    stats = mixture_posterior_stats(beta_bar, sigma02, grid, weights)
    params = {
        "variances": grid.variances.tolist(),
        "weights": weights.pi.tolist(),
    }
    return params, [stats.summary(j) for j in range(beta_bar.size)]


class AshPrior:
    """Shared adaptive-shrinkage prior for the coordinate-ascent engine.

    The variance grid is built from the first batch of coefficient estimates
    it sees and then kept fixed; EM weights warm-start from the previous sweep
    so every refit can only improve the marginal likelihood.
    """

    kind = "ash"
    side_kind = "none"

    def __init__(
        self,
        n_components: int = 20,
        grid: MixtureGrid | None = None,
        em_max_iter: int = 1000,
        em_tol: float = 1e-8,
    ):
        self.n_components = n_components if grid is None else grid.n_components
        self.grid = grid
        self.weights: MixtureWeights | None = None
        self.em_max_iter = em_max_iter
        self.em_tol = em_tol

    def update(self, beta_bar: np.ndarray, sigma02: float) -> PosteriorStats:
        if self.grid is None:
            self.grid = default_grid(beta_bar, sigma02, self.n_components)
        log_lik = marginal_loglik_matrix(beta_bar, sigma02, self.grid)
        init = self.weights if self.weights is not None else MixtureWeights.uniform(self.grid.n_components)
        self.weights = fit_weights_em(log_lik, init, max_iter=self.em_max_iter, tol=self.em_tol)
        return mixture_posterior_stats(beta_bar, sigma02, self.grid, self.weights)

    def prior_null_mass(self) -> np.ndarray | None:
        if self.weights is None:
            return None
        return np.array([self.weights.pi[0]])

    def params_dict(self) -> dict:
        if self.grid is None or self.weights is None:
            return {}
        return {
            "variances": self.grid.variances.tolist(),
            "weights": self.weights.pi.tolist(),
        }
