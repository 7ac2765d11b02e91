"""Model comparison: WAIC from whitened pointwise terms, bridge-sampling
marginal likelihoods, and Bayes factors.

After whitening, the joint log-likelihood factorizes as
log f = log|det T| + sum_i ell_i(theta), so WAIC can be computed from the
pointwise matrix ell_i(theta^(s)). The constant log|det T| is excluded from
elpd (it is shared by models on the same data and cancels in differences)
but carried on the report. The evidence estimator is the Meng-Wong
iteration with the optimal bridge between the posterior sample and a
moment-matched multivariate-normal proposal fitted on the first half of
the draws; the second half plus an equal count of fresh proposal draws
enter the iteration. The numerator is the fully normalized unnormalized
posterior (likelihood including log|det T|, prior, transform Jacobian), so
the limit is the marginal likelihood itself.
"""

from __future__ import annotations

import math
import warnings as _warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from . import diagnostics

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class PointwiseLogLik:
    """Per-draw, per-point whitened log-likelihood terms ell_i(theta^(s))."""

    ell: np.ndarray = field(repr=False)  # (S, n)
    log_det_t: float

    def __post_init__(self):
        ell = np.asarray(self.ell, dtype=float)
        object.__setattr__(self, "ell", ell)
        if ell.ndim != 2:
            raise ValueError(f"expected (draws, points), got shape {ell.shape}")
        if not np.all(np.isfinite(ell)):
            raise ValueError("pointwise log-likelihood contains non-finite entries")

    @property
    def n_draws(self) -> int:
        return self.ell.shape[0]

    @property
    def n_points(self) -> int:
        return self.ell.shape[1]


@dataclass(frozen=True)
class WaicReport:
    """WAIC summary for one model; comparison fields are filled by compare_waic."""

    name: str
    elpd: float
    p_eff: float
    se: float
    lppd: float
    n_points: int
    log_det_t: float
    elpd_pointwise: np.ndarray = field(repr=False)
    high_variance_points: tuple[int, ...] = ()
    rank: int | None = None
    elpd_diff: float | None = None
    weight: float | None = None
    dse: float | None = None


@dataclass(frozen=True)
class EvidenceEstimate:
    """Bridge-sampling log marginal likelihood with its error estimate."""

    log_marginal: float
    relative_error: float
    iterations: int
    converged: bool
    n_posterior: int
    n_proposal: int


@dataclass(frozen=True)
class BayesFactor:
    bf: float
    log_bf: float
    degraded: bool  # either evidence estimate failed to converge


def pointwise_loglik(spec, chains) -> PointwiseLogLik:
    """Evaluate ell_i at every retained draw of a ChainSet."""
    values = chains.flat()
    ell = spec.pointwise_batch(values)
    return PointwiseLogLik(ell=ell, log_det_t=spec.factor.log_det_t)


def waic(pl: PointwiseLogLik, name: str = "", min_draws: int = 100) -> WaicReport:
    """WAIC from a pointwise matrix: lppd - p_waic with its standard error."""
    ell = pl.ell
    s, n = ell.shape
    if s < min_draws:
        raise ValueError(f"waic needs at least {min_draws} draws, got {s}")
    lppd_i = logsumexp(ell, axis=0) - math.log(s)
    p_i = ell.var(axis=0, ddof=1)
    high = tuple(int(i) for i in np.nonzero(p_i > 0.4)[0])
    if high:
        _warnings.warn(
            f"p_waic exceeds 0.4 at {len(high)} points (first: {high[:10]}); "
            "WAIC may be unreliable there")
    elpd_i = lppd_i - p_i
    return WaicReport(
        name=name,
        elpd=float(elpd_i.sum()),
        p_eff=float(p_i.sum()),
        se=float(np.sqrt(n * elpd_i.var(ddof=1))),
        lppd=float(lppd_i.sum()),
        n_points=n,
        log_det_t=pl.log_det_t,
        elpd_pointwise=elpd_i,
        high_variance_points=high,
    )


def compare_waic(reports: list[WaicReport]) -> list[WaicReport]:
    """Rank reports by elpd and attach diff/weight/dse columns vs the best.

    Weights are log-sum-exp normalized elpds (pseudo-BMA). All reports must
    describe the same number of data points.
    """
    if not reports:
        raise ValueError("no reports to compare")
    n = reports[0].n_points
    if any(r.n_points != n for r in reports):
        raise ValueError("reports were built on different datasets (n mismatch)")
    order = sorted(range(len(reports)), key=lambda i: -reports[i].elpd)
    elpds = np.array([reports[i].elpd for i in order])
    weights = np.exp(elpds - logsumexp(elpds))
    best = reports[order[0]]
    out = []
    for rank, i in enumerate(order):
        r = reports[i]
        if rank == 0:
            dse = 0.0
        else:
            delta = r.elpd_pointwise - best.elpd_pointwise
            dse = float(np.sqrt(n * delta.var(ddof=1)))
        out.append(replace(
            r, rank=rank, elpd_diff=float(best.elpd - r.elpd),
            weight=float(weights[rank]), dse=dse,
        ))
    return out


# ---------------------------------------------------------------------------
# bridge sampling


def bridge_evidence(spec, chains, rng, cap: int = 1000,
                    rtol: float = 1e-10) -> EvidenceEstimate:
    """Marginal likelihood of a fitted model from its posterior ChainSet."""
    draws = chains.unconstrained
    if draws.shape[0] * draws.shape[1] < 2000:
        raise ValueError("bridge sampling needs at least 2000 retained draws")
    return bridge_from_draws(spec.log_posterior_batch, draws, rng,
                             cap=cap, rtol=rtol)


def bridge_from_draws(log_post_batch, draws: np.ndarray, rng,
                      cap: int = 1000, rtol: float = 1e-10) -> EvidenceEstimate:
    """Meng-Wong bridge estimator from (chains, draws, dim) posterior draws.

    ``log_post_batch`` maps an (S, dim) array to normalized-numerator
    log-posterior values (may contain -inf).
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 2:
        draws = draws[None, :, :]
    n_chains, n_draws, dim = draws.shape
    half = n_draws // 2
    fit = draws[:, :half].reshape(-1, dim)
    iter_draws = draws[:, half:].reshape(-1, dim)
    n_post = iter_draws.shape[0]
    n_prop = n_post

    mean = fit.mean(axis=0)
    cov = np.cov(fit, rowvar=False).reshape(dim, dim)
    cov[np.diag_indices_from(cov)] += 1e-12
    l_q = np.linalg.cholesky(cov)
    log_norm_q = -0.5 * dim * LOG_2PI - float(np.sum(np.log(np.diag(l_q))))

    def log_q(x):
        z = solve_triangular(l_q, (x - mean).T, lower=True, check_finite=False)
        return log_norm_q - 0.5 * np.sum(z * z, axis=0)

    prop = mean + rng.standard_normal((n_prop, dim)) @ l_q.T

    l1 = log_post_batch(iter_draws) - log_q(iter_draws)
    l2 = log_post_batch(prop) - log_q(prop)
    bad = ~np.isfinite(l2)
    if bad.mean() > 0.10:
        _warnings.warn(
            f"{bad.mean():.0%} of proposal draws fall where the posterior "
            "is -inf; the bridge estimate may be unstable")

    lstar = float(np.median(l1))
    s1 = n_post / (n_post + n_prop)
    s2 = n_prop / (n_post + n_prop)
    e1 = np.exp(l1 - lstar)
    e2 = np.exp(l2 - lstar)  # -inf -> 0: zero numerator weight

    r = 1.0
    converged = False
    iterations = 0
    for iterations in range(1, cap + 1):
        r_old = r
        numerator = np.sum(e2 / (s1 * e2 + s2 * r))
        denominator = np.sum(1.0 / (s1 * e1 + s2 * r))
        r = (n_post / n_prop) * numerator / denominator
        if not np.isfinite(r) or r <= 0:
            break
        if abs(r - r_old) / r < rtol:
            converged = True
            break
    log_ml = math.log(r) + lstar if (np.isfinite(r) and r > 0) else float("nan")

    rel_err = _bridge_relative_error(
        l1, l2, log_ml, lstar, s1, s2, n_chains) if np.isfinite(log_ml) else float("inf")
    return EvidenceEstimate(
        log_marginal=float(log_ml),
        relative_error=float(rel_err),
        iterations=iterations,
        converged=converged,
        n_posterior=n_post,
        n_proposal=n_prop,
    )


def _bridge_relative_error(l1, l2, log_ml, lstar, s1, s2, n_chains) -> float:
    """Asymptotic relative error of the evidence estimate.

    f1 is evaluated at proposal draws, f2 at posterior draws; the posterior
    term is inflated by the autocorrelation of the f2 sequence via its
    effective sample size.
    """
    # f1 = p/(s1 p + s2 q) at proposal draws, with p normalized by the estimate
    with np.errstate(over="ignore", under="ignore"):
        f1 = 1.0 / (s1 + s2 * np.exp(log_ml - l2))
        f2 = 1.0 / (s1 * np.exp(l1 - log_ml) + s2)
    f1 = np.where(np.isfinite(f1), f1, 0.0)
    m1, m2 = f1.mean(), f2.mean()
    if m1 <= 0 or m2 <= 0:
        return float("inf")
    n_eff = _sequence_ess(f2, n_chains)
    term1 = f1.var(ddof=1) / (f1.size * m1 * m1)
    term2 = f2.var(ddof=1) / (n_eff * m2 * m2)
    return math.sqrt(term1 + term2)


def _sequence_ess(values: np.ndarray, n_chains: int) -> float:
    """Geyer ESS of a statistic computed along the posterior draw sequence."""
    values = np.asarray(values, dtype=float)
    if values.std() == 0:
        return float(values.size)
    rows = n_chains if n_chains > 1 else 2
    usable = (values.size // rows) * rows
    if usable < 8:
        return float(values.size)
    stacked = values[:usable].reshape(rows, -1)
    out = diagnostics.ess(stacked, mode="bulk")
    return float(out) if np.isfinite(out) else float(values.size)


def bayes_factor(e1: EvidenceEstimate, e2: EvidenceEstimate) -> BayesFactor:
    """BF_12 from two evidence estimates; the log form is primary."""
    log_bf = e1.log_marginal - e2.log_marginal
    with np.errstate(over="ignore"):
        bf = float(np.exp(log_bf))
    return BayesFactor(bf=bf, log_bf=float(log_bf),
                       degraded=not (e1.converged and e2.converged))
