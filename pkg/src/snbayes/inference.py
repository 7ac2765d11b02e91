"""Priors, unconstrained reparameterization, and the target log-posterior.

Sampling happens in unconstrained coordinates xi = (ln H0, logit Omega_m,
equation-of-state parameters). The log-posterior is

    log prior(theta(xi)) + log |d theta / d xi| + whitened log-likelihood,

including the constant log|det L^{-1}| so that evidence estimates refer to
the properly normalized likelihood. Gradients differentiate the same
quadrature discretization used for the distance moduli, so they match
finite differences of the implemented log-posterior rather than of the
exact integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import whitening
from .cosmology import (
    CosmologyDomainError,
    CosmoParams,
    ModelKind,
    QuadraturePlan,
    RedshiftGrid,
    build_plan,
    mu_and_gradient,
    mu_batch,
    mu_with_plan,
    resolve_plan,
)
from .dataset import SupernovaCatalog
from .whitening import LOG_2PI, CholeskyFactor

_HALF_LOG_2PI = 0.5 * LOG_2PI
NEG_INF = float("-inf")


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters of the weakly informative priors.

    Defaults: H0 ~ LogNormal(ln 70, 0.5), Omega_m ~ Beta(3, 7),
    w and w0 ~ Normal(-1, 2), wa ~ Normal(0, 4).
    """

    h0_location: float = math.log(70.0)
    h0_scale: float = 0.5
    omega_m_a: float = 3.0
    omega_m_b: float = 7.0
    w_mean: float = -1.0
    w_sd: float = 2.0
    w0_mean: float = -1.0
    w0_sd: float = 2.0
    wa_mean: float = 0.0
    wa_sd: float = 4.0

    def __post_init__(self):
        for name in ("h0_scale", "omega_m_a", "omega_m_b", "w_sd", "w0_sd", "wa_sd"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")

    # --- per-parameter marginals -------------------------------------------------

    def moments(self, kind: ModelKind) -> np.ndarray:
        """(mean, sd) rows for each parameter of the model, prior marginals."""
        a, b = self.omega_m_a, self.omega_m_b
        h0_mean = math.exp(self.h0_location + 0.5 * self.h0_scale ** 2)
        h0_sd = h0_mean * math.sqrt(math.expm1(self.h0_scale ** 2))
        om_mean = a / (a + b)
        om_sd = math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1.0)))
        rows = [(h0_mean, h0_sd), (om_mean, om_sd)]
        if kind is ModelKind.WCDM:
            rows.append((self.w_mean, self.w_sd))
        elif kind is ModelKind.CPL:
            rows.append((self.w0_mean, self.w0_sd))
            rows.append((self.wa_mean, self.wa_sd))
        return np.array(rows)

    def marginal_pdf(self, kind: ModelKind, index: int):
        """Vectorized prior density of the index-th parameter of the model."""
        if index == 0:
            loc, s = self.h0_location, self.h0_scale

            def pdf(x):
                x = np.asarray(x, dtype=float)
                out = np.zeros_like(x)
                pos = x > 0
                lx = np.log(x[pos])
                out[pos] = np.exp(
                    -0.5 * ((lx - loc) / s) ** 2 - lx - math.log(s) - _HALF_LOG_2PI
                )
                return out

            return pdf
        if index == 1:
            a, b = self.omega_m_a, self.omega_m_b
            lognorm = gammaln(a + b) - gammaln(a) - gammaln(b)

            def pdf(x):
                x = np.asarray(x, dtype=float)
                out = np.zeros_like(x)
                inside = (x > 0) & (x < 1)
                xi = x[inside]
                out[inside] = np.exp(
                    lognorm + (a - 1.0) * np.log(xi) + (b - 1.0) * np.log1p(-xi)
                )
                return out

            return pdf
        mean, sd = self._eos_hyper(kind, index)

        def pdf(x):
            x = np.asarray(x, dtype=float)
            return np.exp(-0.5 * ((x - mean) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))

        return pdf

    def _eos_hyper(self, kind: ModelKind, index: int) -> tuple[float, float]:
        if kind is ModelKind.WCDM and index == 2:
            return self.w_mean, self.w_sd
        if kind is ModelKind.CPL and index == 2:
            return self.w0_mean, self.w0_sd
        if kind is ModelKind.CPL and index == 3:
            return self.wa_mean, self.wa_sd
        raise IndexError(f"no parameter {index} for {kind}")


def log_prior(p: CosmoParams, priors: PriorSpec, kind: ModelKind) -> float:
    """Sum of the log prior densities in constrained space."""
    loc, s = priors.h0_location, priors.h0_scale
    lh = math.log(p.h0)
    total = -0.5 * ((lh - loc) / s) ** 2 - lh - math.log(s) - _HALF_LOG_2PI
    a, b = priors.omega_m_a, priors.omega_m_b
    total += (
        gammaln(a + b) - gammaln(a) - gammaln(b)
        + (a - 1.0) * math.log(p.omega_m)
        + (b - 1.0) * math.log1p(-p.omega_m)
    )
    if kind is ModelKind.WCDM:
        total += _normal_logpdf(p.w, priors.w_mean, priors.w_sd)
    elif kind is ModelKind.CPL:
        total += _normal_logpdf(p.w0, priors.w0_mean, priors.w0_sd)
        total += _normal_logpdf(p.wa, priors.wa_mean, priors.wa_sd)
    return total


def _normal_logpdf(x: float, mean: float, sd: float) -> float:
    return -0.5 * ((x - mean) / sd) ** 2 - math.log(sd) - _HALF_LOG_2PI


def _grad_log_prior(values: np.ndarray, priors: PriorSpec, kind: ModelKind) -> np.ndarray:
    """d log prior / d theta in constrained order."""
    h0, om = values[0], values[1]
    g = np.empty_like(values)
    g[0] = (-(math.log(h0) - priors.h0_location) / priors.h0_scale ** 2 - 1.0) / h0
    g[1] = (priors.omega_m_a - 1.0) / om - (priors.omega_m_b - 1.0) / (1.0 - om)
    if kind is ModelKind.WCDM:
        g[2] = -(values[2] - priors.w_mean) / priors.w_sd ** 2
    elif kind is ModelKind.CPL:
        g[2] = -(values[2] - priors.w0_mean) / priors.w0_sd ** 2
        g[3] = -(values[3] - priors.wa_mean) / priors.wa_sd ** 2
    return g


def sample_prior(priors: PriorSpec, kind: ModelKind, rng: np.random.Generator) -> CosmoParams:
    """One independent draw from the prior in constrained space."""
    h0 = rng.lognormal(mean=priors.h0_location, sigma=priors.h0_scale)
    om = rng.beta(priors.omega_m_a, priors.omega_m_b)
    if kind is ModelKind.LCDM:
        return CosmoParams(h0=h0, omega_m=om)
    if kind is ModelKind.WCDM:
        return CosmoParams(h0=h0, omega_m=om, w=rng.normal(priors.w_mean, priors.w_sd))
    return CosmoParams(
        h0=h0, omega_m=om,
        w0=rng.normal(priors.w0_mean, priors.w0_sd),
        wa=rng.normal(priors.wa_mean, priors.wa_sd),
    )


# ---------------------------------------------------------------------------
# constrained <-> unconstrained transforms


@dataclass(frozen=True)
class UnconstrainedPoint:
    """Sampling coordinates: (ln H0, logit Omega_m, raw eos parameters)."""

    kind: ModelKind
    xi: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        object.__setattr__(self, "xi", xi)
        if xi.shape != (self.kind.ndim,):
            raise ValueError(f"{self.kind} expects dim {self.kind.ndim}, got {xi.shape}")
        if not np.all(np.isfinite(xi)):
            raise ValueError("unconstrained point must be finite")


def transform(kind: ModelKind, p: CosmoParams) -> UnconstrainedPoint:
    """Map valid constrained parameters to unconstrained coordinates."""
    vals = p.values(kind)
    xi = vals.copy()
    xi[0] = math.log(vals[0])
    xi[1] = math.log(vals[1] / (1.0 - vals[1]))
    return UnconstrainedPoint(kind=kind, xi=xi)


def inverse_transform(point: UnconstrainedPoint) -> CosmoParams:
    """Inverse map; raises ValueError when exp/logistic saturate the domain."""
    vals = _constrain_values(point.kind, point.xi)
    return CosmoParams.from_values(point.kind, vals)


def _constrain_values(kind: ModelKind, xi: np.ndarray) -> np.ndarray:
    vals = np.array(xi, dtype=float)
    with np.errstate(over="ignore"):
        vals[0] = math.exp(xi[0]) if xi[0] < 709 else math.inf
        vals[1] = _logistic(xi[1])
    return vals


def _logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _log_jacobian(xi: np.ndarray) -> float:
    """log |d theta / d xi| for the exp/logistic block (eos coords are raw)."""
    # d H0/d xi0 = exp(xi0); d Om/d xi1 = sigma(xi1) (1 - sigma(xi1))
    x1 = xi[1]
    return float(xi[0] - np.logaddexp(0.0, x1) - np.logaddexp(0.0, -x1))


# ---------------------------------------------------------------------------
# the posterior model


class PosteriorSpec:
    """Differentiable log-posterior of one model given a whitened catalog.

    Immutable after construction; `logpost_and_grad` is pure and reentrant,
    so many chains may share one instance.
    """

    def __init__(self, kind: ModelKind, priors: PriorSpec,
                 data: SupernovaCatalog, factor: CholeskyFactor,
                 plan: QuadraturePlan | None = None):
        if data.n != factor.n:
            raise ValueError(f"catalog n={data.n} does not match factor n={factor.n}")
        self.kind = kind
        self.priors = priors
        self.data = data
        self.factor = factor
        self.grid = RedshiftGrid(data.z) if plan is None else plan.grid
        if plan is None:
            # settle the panel level at the prior centre, then add one safety
            # doubling; the layout is frozen so every evaluation shares it
            center = self._prior_center()
            plan = resolve_plan(kind, center, self.grid)
            plan = build_plan(self.grid, plan.panels * 2)
        self.plan = plan
        self._loglik_const = -0.5 * data.n * LOG_2PI + factor.log_det_t

    def _prior_center(self) -> CosmoParams:
        m = self.priors.moments(self.kind)
        eos = m[2:, 0]
        if self.kind is ModelKind.LCDM:
            return CosmoParams(h0=m[0, 0], omega_m=m[1, 0])
        if self.kind is ModelKind.WCDM:
            return CosmoParams(h0=m[0, 0], omega_m=m[1, 0], w=eos[0])
        return CosmoParams(h0=m[0, 0], omega_m=m[1, 0], w0=eos[0], wa=eos[1])

    # --- sampler model protocol --------------------------------------------------

    @property
    def dim(self) -> int:
        return self.kind.ndim

    @property
    def param_names(self) -> tuple[str, ...]:
        return self.kind.param_names

    def constrain(self, xi: np.ndarray) -> np.ndarray:
        return _constrain_values(self.kind, xi)

    def unconstrain(self, values: np.ndarray) -> np.ndarray:
        xi = np.array(values, dtype=float)
        xi[0] = math.log(values[0])
        xi[1] = math.log(values[1] / (1.0 - values[1]))
        return xi

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        for _ in range(100):
            p = sample_prior(self.priors, self.kind, rng)
            xi = transform(self.kind, p).xi
            if np.isfinite(self.log_posterior(xi)):
                return xi
        raise RuntimeError("could not find a finite starting point in 100 prior draws")

    def log_posterior(self, xi: np.ndarray) -> float:
        return self._evaluate(xi, want_grad=False)[0]

    def logpost_and_grad(self, xi: np.ndarray) -> tuple[float, np.ndarray]:
        return self._evaluate(xi, want_grad=True)

    # --- evaluation ---------------------------------------------------------------

    def _evaluate(self, xi, want_grad: bool) -> tuple[float, np.ndarray]:
        xi = np.asarray(xi, dtype=float)
        zeros = np.zeros(self.dim)
        try:
            p = inverse_transform(UnconstrainedPoint(self.kind, xi))
        except ValueError:
            return NEG_INF, zeros
        try:
            if want_grad:
                mu, dmu = mu_and_gradient(self.kind, p, self.plan)
            else:
                mu = mu_with_plan(self.kind, p, self.plan)
        except CosmologyDomainError:
            return NEG_INF, zeros
        y = whitening.whiten(self.factor, self.data.mu_obs - mu)
        loglik = self._loglik_const - 0.5 * float(y @ y)
        lp = loglik + log_prior(p, self.priors, self.kind) + _log_jacobian(xi)
        if not np.isfinite(lp):
            return NEG_INF, zeros
        if not want_grad:
            return lp, zeros
        vals = p.values(self.kind)
        u = whitening.solve_lt(self.factor, y)
        grad_theta = dmu.T @ u + _grad_log_prior(vals, self.priors, self.kind)
        grad = np.array(grad_theta)
        sig = vals[1]
        grad[0] = grad_theta[0] * vals[0] + 1.0
        grad[1] = grad_theta[1] * sig * (1.0 - sig) + (1.0 - 2.0 * sig)
        return lp, grad

    def log_likelihood(self, xi: np.ndarray) -> float:
        """Whitened log-likelihood alone (with the log|det T| constant)."""
        p = inverse_transform(UnconstrainedPoint(self.kind, xi))
        mu = mu_with_plan(self.kind, p, self.plan)
        y = whitening.whiten(self.factor, self.data.mu_obs - mu)
        return self._loglik_const - 0.5 * float(y @ y)

    def loglik_batch(self, values: np.ndarray) -> np.ndarray:
        """Log-likelihood for many constrained parameter rows at once."""
        mu = mu_batch(self.kind, values, self.plan)
        resid = self.data.mu_obs[None, :] - mu
        y = whitening.whiten(self.factor, resid.T)
        return self._loglik_const - 0.5 * np.sum(y * y, axis=0)

    def pointwise_batch(self, values: np.ndarray, block: int = 512) -> np.ndarray:
        """Matrix of per-point whitened log-likelihood terms, (S, n).

        Row sums plus factor.log_det_t equal loglik_batch minus nothing:
        each entry is log phi(y_i) for that draw.
        """
        values = np.asarray(values, dtype=float)
        out = np.empty((values.shape[0], self.data.n))
        for start in range(0, values.shape[0], block):
            stop = min(start + block, values.shape[0])
            mu = mu_batch(self.kind, values[start:stop], self.plan)
            resid = self.data.mu_obs[None, :] - mu
            y = whitening.whiten(self.factor, resid.T)
            out[start:stop] = -0.5 * (LOG_2PI + y.T ** 2)
        return out

    def mu_model(self, values: np.ndarray) -> np.ndarray:
        """Model distance moduli on the data grid for one constrained vector."""
        p = CosmoParams.from_values(self.kind, np.asarray(values, dtype=float))
        return mu_with_plan(self.kind, p, self.plan)

    def log_posterior_batch(self, xis: np.ndarray, block: int = 1024) -> np.ndarray:
        """Log-posterior for many unconstrained rows; -inf rows handled.

        Falls back to per-row evaluation within a block if the vectorized
        cosmology evaluation overflows for some extreme draw.
        """
        xis = np.asarray(xis, dtype=float)
        n = xis.shape[0]
        out = np.full(n, NEG_INF)
        vals, valid = _constrain_batch(self.kind, xis)
        for start in range(0, n, block):
            stop = min(start + block, n)
            idx = np.nonzero(valid[start:stop])[0] + start
            if idx.size == 0:
                continue
            try:
                loglik = self.loglik_batch(vals[idx])
                out[idx] = (
                    loglik
                    + _log_prior_batch(vals[idx], self.priors, self.kind)
                    + _log_jacobian_batch(xis[idx])
                )
            except CosmologyDomainError:
                for i in idx:
                    out[i] = self.log_posterior(xis[i])
        out[~np.isfinite(out)] = NEG_INF
        return out


def _constrain_batch(kind: ModelKind, xis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized inverse transform; flags rows that saturate the domain."""
    from scipy.special import expit

    vals = np.array(xis, dtype=float)
    with np.errstate(over="ignore"):
        vals[:, 0] = np.exp(np.minimum(xis[:, 0], 709.0))
        vals[:, 1] = expit(xis[:, 1])
    valid = (
        np.isfinite(vals).all(axis=1)
        & (vals[:, 0] > 0)
        & (vals[:, 1] > 0)
        & (vals[:, 1] < 1)
    )
    return vals, valid


def _log_prior_batch(vals: np.ndarray, priors: PriorSpec, kind: ModelKind) -> np.ndarray:
    lh = np.log(vals[:, 0])
    out = (
        -0.5 * ((lh - priors.h0_location) / priors.h0_scale) ** 2
        - lh - math.log(priors.h0_scale) - _HALF_LOG_2PI
    )
    a, b = priors.omega_m_a, priors.omega_m_b
    out += (
        gammaln(a + b) - gammaln(a) - gammaln(b)
        + (a - 1.0) * np.log(vals[:, 1])
        + (b - 1.0) * np.log1p(-vals[:, 1])
    )
    if kind is ModelKind.WCDM:
        out += -0.5 * ((vals[:, 2] - priors.w_mean) / priors.w_sd) ** 2 \
            - math.log(priors.w_sd) - _HALF_LOG_2PI
    elif kind is ModelKind.CPL:
        out += -0.5 * ((vals[:, 2] - priors.w0_mean) / priors.w0_sd) ** 2 \
            - math.log(priors.w0_sd) - _HALF_LOG_2PI
        out += -0.5 * ((vals[:, 3] - priors.wa_mean) / priors.wa_sd) ** 2 \
            - math.log(priors.wa_sd) - _HALF_LOG_2PI
    return out


def _log_jacobian_batch(xis: np.ndarray) -> np.ndarray:
    x1 = xis[:, 1]
    return xis[:, 0] - np.logaddexp(0.0, x1) - np.logaddexp(0.0, -x1)


def log_posterior(spec: PosteriorSpec, xi) -> float:
    """Module-level alias for the spec's log-posterior in xi coordinates."""
    return spec.log_posterior(np.asarray(xi, dtype=float))


def grad_log_posterior(spec: PosteriorSpec, xi) -> np.ndarray:
    """Gradient of the log-posterior; zeros when the value is -inf."""
    return spec.logpost_and_grad(np.asarray(xi, dtype=float))[1]
