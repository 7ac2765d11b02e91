"""Hamiltonian samplers: leapfrog, fixed-length HMC, and slice-based NUTS.

The NUTS transition doubles a binary tree of leapfrog states in a random
direction per doubling, keeps the leaves that fall inside a slice
u ~ Uniform(0, exp(-H_start)), and stops when either trajectory end starts
moving back toward the other (the U-turn test), when a doubling would
exceed the depth cap, or when the Hamiltonian error explodes (divergence,
|Delta H| > 1000). Step size is tuned by dual averaging toward a target
acceptance statistic; the diagonal mass matrix is set to the marginal
posterior variances estimated over the middle warmup window.

Conventions: samples are positions theta in unconstrained space; momenta
phi are drawn from N(0, C) with kinetic energy K(phi) = 0.5 phi^T C^{-1} phi.
``MassMatrix.diag`` stores the *variance scale* of each coordinate, i.e. the
diagonal of C^{-1}; with a whitened (unit-scale) target it is all ones and
C is the identity. A plain random-walk Metropolis stepper is included as a
fixture for the whitening-invariance checks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

DIVERGENCE_DELTA_H = 1000.0
_DA_GAMMA = 0.05
_DA_T0 = 10.0
_DA_KAPPA = 0.75


@dataclass(frozen=True)
class PhasePoint:
    """Position/momentum pair in unconstrained coordinates."""

    theta: np.ndarray
    phi: np.ndarray
    divergent: bool = False

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)
        if theta.shape != phi.shape:
            raise ValueError("theta and phi must have equal shapes")


@dataclass(frozen=True)
class MassMatrix:
    """Diagonal kinetic metric. ``diag`` holds per-coordinate variance scales.

    Momenta are drawn from N(0, C) with C = diag(1/diag); the kinetic energy
    0.5 phi^T C^{-1} phi = 0.5 sum(diag * phi^2). Adaptation sets ``diag`` to
    the estimated marginal posterior variances, which makes the induced
    dynamics isotropic; diag of ones reproduces the identity-mass sampler.
    """

    diag: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.diag, dtype=float)
        object.__setattr__(self, "diag", d)
        if d.ndim != 1 or np.any(d <= 0) or not np.all(np.isfinite(d)):
            raise ValueError("mass diagonal must be 1-d, finite, and positive")

    @classmethod
    def identity(cls, dim: int) -> "MassMatrix":
        return cls(diag=np.ones(dim))

    def draw_momentum(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.diag.size) / np.sqrt(self.diag)

    def kinetic(self, phi: np.ndarray) -> float:
        return 0.5 * float(self.diag @ (phi * phi))

    def velocity(self, phi: np.ndarray) -> np.ndarray:
        return self.diag * phi


@dataclass(frozen=True)
class SamplerConfig:
    """Run settings. ``n_leapfrog`` only applies to the fixed-length HMC."""

    step_size: float = 0.1
    target_accept: float = 0.8
    max_tree_depth: int = 10
    warmup: int = 1000
    draws: int = 9000
    chains: int = 4
    seed: int = 0
    n_leapfrog: int = 10

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 0 or self.draws <= 0 or self.chains <= 0:
            raise ValueError("max_tree_depth >= 0, draws > 0, chains > 0 required")
        if self.warmup < 0:
            raise ValueError("warmup must be nonnegative")
        if self.n_leapfrog <= 0:
            raise ValueError("n_leapfrog must be positive")


@dataclass
class FunctionModel:
    """Adapter turning a (logp, grad) callable into a sampler target."""

    dim: int
    f: Callable[[np.ndarray], tuple[float, np.ndarray]]
    x0: np.ndarray | None = None
    names: tuple[str, ...] | None = None

    @property
    def param_names(self) -> tuple[str, ...]:
        return self.names or tuple(f"x{i}" for i in range(self.dim))

    def logpost_and_grad(self, xi):
        lp, grad = self.f(np.asarray(xi, dtype=float))
        return float(lp), np.asarray(grad, dtype=float)

    def log_posterior(self, xi):
        return self.logpost_and_grad(xi)[0]

    def constrain(self, xi):
        return np.asarray(xi, dtype=float)

    def initial_point(self, rng):
        if self.x0 is not None:
            return np.array(self.x0, dtype=float)
        return rng.standard_normal(self.dim)


# ---------------------------------------------------------------------------
# leapfrog


def _metric_of(mass) -> np.ndarray:
    if isinstance(mass, MassMatrix):
        return mass.diag
    return np.asarray(mass, dtype=float)


def _velocity(metric: np.ndarray, phi: np.ndarray) -> np.ndarray:
    if metric.ndim == 2:
        return metric @ phi
    return metric * phi


def leapfrog(point: PhasePoint, eps: float, mass, grad_u) -> PhasePoint:
    """One half-kick / drift / half-kick step of the potential-energy flow.

    ``grad_u`` returns the gradient of the potential U = -log target.
    ``mass`` may be a MassMatrix, a 1-d diagonal, or a 2-d kinetic metric
    (K = 0.5 phi^T V phi for metric V); the 2-d form exists so affine
    reparameterizations of the dynamics can be expressed directly.
    """
    metric = _metric_of(mass)
    phi = point.phi - 0.5 * eps * np.asarray(grad_u(point.theta), dtype=float)
    theta = point.theta + eps * _velocity(metric, phi)
    phi = phi - 0.5 * eps * np.asarray(grad_u(theta), dtype=float)
    ok = bool(np.all(np.isfinite(theta)) and np.all(np.isfinite(phi)))
    return PhasePoint(theta=theta, phi=phi, divergent=not ok)


class _State(NamedTuple):
    theta: np.ndarray
    phi: np.ndarray
    grad: np.ndarray
    lp: float


def _leapfrog_raw(model, state: _State, eps: float, metric: np.ndarray) -> _State:
    """Internal log-density-convention step (grad of log posterior)."""
    phi = state.phi + 0.5 * eps * state.grad
    theta = state.theta + eps * _velocity(metric, phi)
    lp, grad = model.logpost_and_grad(theta)
    phi = phi + 0.5 * eps * grad
    return _State(theta, phi, grad, lp)


# ---------------------------------------------------------------------------
# fixed-length HMC and random-walk Metropolis (fixtures/tests)


def hmc_step(theta, config: SamplerConfig, mass: MassMatrix, model, rng,
             lp: float | None = None, grad: np.ndarray | None = None):
    """One fixed-length HMC transition.

    Returns (theta, lp, grad, accepted, rho). Non-finite proposals
    auto-reject.
    """
    theta = np.asarray(theta, dtype=float)
    if lp is None or grad is None:
        lp, grad = model.logpost_and_grad(theta)
    phi0 = mass.draw_momentum(rng)
    h_start = -lp + mass.kinetic(phi0)
    state = _State(theta, phi0, grad, lp)
    for _ in range(config.n_leapfrog):
        state = _leapfrog_raw(model, state, config.step_size, mass.diag)
    phi = -state.phi  # negation keeps the proposal an involution
    h_prop = -state.lp + mass.kinetic(phi)
    if not np.isfinite(h_prop):
        return theta, lp, grad, False, 0.0
    rho = min(1.0, math.exp(min(0.0, h_start - h_prop)))
    if rng.uniform() < rho:
        return state.theta, state.lp, state.grad, True, rho
    return theta, lp, grad, False, rho


def mh_step(theta, scale: float, log_density, rng, lp: float | None = None):
    """Gaussian random-walk Metropolis transition.

    Returns (theta, lp, accepted). The proposal draw always precedes the
    acceptance uniform, so two targets differing by a constant consume the
    stream identically and make identical decisions.
    """
    theta = np.asarray(theta, dtype=float)
    if lp is None:
        lp = float(log_density(theta))
    prop = theta + scale * rng.standard_normal(theta.size)
    lp_prop = float(log_density(prop))
    if math.log(rng.uniform()) < lp_prop - lp:
        return prop, lp_prop, True
    return theta, lp, False


# ---------------------------------------------------------------------------
# NUTS


@dataclass(frozen=True)
class TreeStats:
    depth: int
    n_leapfrog: int
    divergent: bool
    accept_stat: float
    energy: float
    step_size: float


def _uturn(left: _State, right: _State, metric: np.ndarray) -> bool:
    delta = right.theta - left.theta
    return (delta @ _velocity(metric, left.phi) < 0.0) or (
        delta @ _velocity(metric, right.phi) < 0.0
    )


def _build_tree(model, rng, state: _State, log_u: float, v: int, j: int,
                eps: float, metric: np.ndarray, h0: float):
    """Doubling recursion. Returns
    (left, right, candidate, n_valid, keep_going, alpha_sum, n_alpha,
    divergent, n_leapfrog)."""
    if j == 0:
        new = _leapfrog_raw(model, state, v * eps, metric)
        if np.isfinite(new.lp) and np.all(np.isfinite(new.phi)):
            h = -new.lp + 0.5 * float(metric @ (new.phi * new.phi))
        else:
            h = math.inf
        n = 1 if log_u <= -h else 0
        divergent = (log_u - DIVERGENCE_DELTA_H) > -h
        alpha = math.exp(min(0.0, h0 - h)) if np.isfinite(h) else 0.0
        cand = (new.theta, new.lp, new.grad) if n else None
        return new, new, cand, n, not divergent, alpha, 1, divergent, 1

    left, right, cand, n1, s1, a1, na1, div1, nl1 = _build_tree(
        model, rng, state, log_u, v, j - 1, eps, metric, h0)
    if s1:
        if v == -1:
            left, _, cand2, n2, s2, a2, na2, div2, nl2 = _build_tree(
                model, rng, left, log_u, v, j - 1, eps, metric, h0)
        else:
            _, right, cand2, n2, s2, a2, na2, div2, nl2 = _build_tree(
                model, rng, right, log_u, v, j - 1, eps, metric, h0)
        if n2 > 0 and cand2 is not None and rng.uniform() < n2 / (n1 + n2):
            cand = cand2
        s1 = s2 and not _uturn(left, right, metric)
        n1 += n2
        a1 += a2
        na1 += na2
        div1 = div1 or div2
        nl1 += nl2
    return left, right, cand, n1, s1, a1, na1, div1, nl1


def nuts_step(theta, config: SamplerConfig, mass: MassMatrix, model, rng,
              lp: float | None = None, grad: np.ndarray | None = None,
              step_size: float | None = None):
    """One NUTS transition from ``theta``; returns (theta, lp, grad, TreeStats).

    ``max_tree_depth`` counts completed doublings: depth 0 degenerates to a
    single-leapfrog proposal.
    """
    theta = np.asarray(theta, dtype=float)
    if lp is None or grad is None:
        lp, grad = model.logpost_and_grad(theta)
    eps = config.step_size if step_size is None else step_size
    metric = mass.diag
    phi0 = mass.draw_momentum(rng)
    h0 = -lp + mass.kinetic(phi0)
    log_u = math.log(rng.uniform()) - h0

    left = right = _State(theta, phi0, grad, lp)
    chosen = (theta, lp, grad)
    n = 1
    depth = 0
    alpha_sum = 0.0
    n_alpha = 0
    divergent = False
    n_leap = 0
    while True:
        v = 1 if rng.uniform() < 0.5 else -1
        if v == -1:
            left, _, cand, n2, s2, a2, na2, div2, nl2 = _build_tree(
                model, rng, left, log_u, v, depth, eps, metric, h0)
        else:
            _, right, cand, n2, s2, a2, na2, div2, nl2 = _build_tree(
                model, rng, right, log_u, v, depth, eps, metric, h0)
        alpha_sum += a2
        n_alpha += na2
        divergent = divergent or div2
        n_leap += nl2
        if s2 and cand is not None and n2 > 0 and rng.uniform() < n2 / n:
            chosen = cand
        n += n2
        depth += 1
        if not (s2 and not _uturn(left, right, metric)):
            break
        if depth > config.max_tree_depth:
            break
    stats = TreeStats(
        depth=depth, n_leapfrog=n_leap, divergent=divergent,
        accept_stat=alpha_sum / max(n_alpha, 1), energy=h0, step_size=eps,
    )
    return chosen[0], chosen[1], chosen[2], stats


# ---------------------------------------------------------------------------
# adaptation


def find_reasonable_epsilon(model, theta, lp, grad, mass: MassMatrix,
                            rng, eps: float = 1.0) -> float:
    """Double/halve eps until one leapfrog step crosses 50% joint density."""
    metric = mass.diag
    phi = mass.draw_momentum(rng)
    state = _State(np.asarray(theta, dtype=float), phi, grad, lp)
    h = -lp + mass.kinetic(phi)

    def joint_delta(e):
        new = _leapfrog_raw(model, state, e, metric)
        if not (np.isfinite(new.lp) and np.all(np.isfinite(new.phi))):
            return -math.inf
        return h - (-new.lp + mass.kinetic(new.phi))

    delta = joint_delta(eps)
    a = 1.0 if delta > math.log(0.5) else -1.0
    while a * delta > -a * math.log(2.0):
        eps *= 2.0 ** a
        if eps > 1e7 or eps < 1e-10:
            break
        delta = joint_delta(eps)
    return eps


class _DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, eps0: float, target: float):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.m = 0

    def update(self, alpha: float) -> float:
        self.m += 1
        frac = 1.0 / (self.m + _DA_T0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - alpha)
        self.log_eps = self.mu - math.sqrt(self.m) / _DA_GAMMA * self.h_bar
        eta = self.m ** (-_DA_KAPPA)
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def adapted(self) -> float:
        return math.exp(self.log_eps_bar)


@dataclass
class AdaptResult:
    step_size: float
    mass: MassMatrix
    theta: np.ndarray
    lp: float
    grad: np.ndarray
    eps_trace: np.ndarray
    warnings: tuple[str, ...] = ()


def adapt(model, config: SamplerConfig, rng, theta0=None) -> AdaptResult:
    """Warmup: dual-averaged step size plus variance-matched diagonal mass.

    The mass diagonal is the per-coordinate sample variance of the draws
    from the middle warmup window (25%..75%); dual averaging restarts after
    the mass update and both are frozen at the end of warmup.
    """
    if config.warmup < 100:
        raise ValueError("adaptation requires warmup >= 100 iterations")
    theta = (np.asarray(theta0, dtype=float) if theta0 is not None
             else model.initial_point(rng))
    lp, grad = model.logpost_and_grad(theta)
    if not np.isfinite(lp):
        raise ValueError("warmup started at a point with -inf log posterior")
    dim = theta.size
    mass = MassMatrix.identity(dim)
    eps = find_reasonable_epsilon(model, theta, lp, grad, mass, rng,
                                  eps=config.step_size)
    da = _DualAveraging(eps, config.target_accept)

    win_lo = int(0.25 * config.warmup)
    win_hi = int(0.75 * config.warmup)
    window: list[np.ndarray] = []
    eps_trace = np.empty(config.warmup)
    tail_alphas: list[float] = []
    tail_start = int(0.9 * config.warmup)

    for m in range(config.warmup):
        theta, lp, grad, stats = nuts_step(
            theta, config, mass, model, rng, lp=lp, grad=grad, step_size=eps)
        eps = da.update(stats.accept_stat)
        eps_trace[m] = stats.step_size
        if win_lo <= m < win_hi:
            window.append(theta)
        if m >= tail_start:
            tail_alphas.append(stats.accept_stat)
        if m == win_hi - 1 and window:
            draws = np.asarray(window)
            var = draws.var(axis=0, ddof=1) if draws.shape[0] > 1 else np.ones(dim)
            var = np.where(np.isfinite(var) & (var > 0), var, 1.0)
            mass = MassMatrix(diag=np.maximum(var, 1e-12))
            eps = find_reasonable_epsilon(model, theta, lp, grad, mass, rng,
                                          eps=da.adapted)
            da = _DualAveraging(eps, config.target_accept)

    warnings = ()
    mean_tail = float(np.mean(tail_alphas)) if tail_alphas else 0.0
    if mean_tail < 0.1:
        warnings = (
            f"tuning failure: mean acceptance {mean_tail:.3f} over the final "
            "warmup window is below 0.1",
        )
    return AdaptResult(step_size=da.adapted, mass=mass, theta=theta, lp=lp,
                       grad=grad, eps_trace=eps_trace, warnings=warnings)


# ---------------------------------------------------------------------------
# multi-chain driver


@dataclass
class ChainSet:
    """Retained draws of all chains plus per-draw sampler records."""

    param_names: tuple[str, ...]
    constrained: np.ndarray       # (chains, draws, d)
    unconstrained: np.ndarray     # (chains, draws, d)
    log_posterior: np.ndarray     # (chains, draws)
    log_likelihood: np.ndarray    # (chains, draws); NaN when model has none
    energy: np.ndarray            # (chains, draws)
    accept_stat: np.ndarray       # (chains, draws)
    divergent: np.ndarray         # (chains, draws) bool
    tree_depth: np.ndarray        # (chains, draws) int
    step_size: np.ndarray         # (chains,)
    mass_diag: np.ndarray         # (chains, d)
    eps_trace: np.ndarray         # (chains, warmup) adaptation history
    warnings: tuple[tuple[str, ...], ...]
    config: SamplerConfig = field(repr=False, default=None)

    @property
    def n_chains(self) -> int:
        return self.constrained.shape[0]

    @property
    def n_draws(self) -> int:
        return self.constrained.shape[1]

    @property
    def dim(self) -> int:
        return self.constrained.shape[2]

    def parameter(self, index: int) -> np.ndarray:
        """(chains, draws) view of one constrained parameter."""
        return self.constrained[:, :, index]

    def flat(self) -> np.ndarray:
        """All constrained draws pooled, (chains*draws, d)."""
        return self.constrained.reshape(-1, self.dim)

    def flat_unconstrained(self) -> np.ndarray:
        return self.unconstrained.reshape(-1, self.dim)

    @property
    def has_warnings(self) -> bool:
        return any(w for w in self.warnings)


def _run_single_chain(model, config: SamplerConfig, seed_seq) -> dict:
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    result = adapt(model, config, rng)
    theta, lp, grad = result.theta, result.lp, result.grad
    mass, eps = result.mass, result.step_size
    dim = theta.size
    out = {
        "unconstrained": np.empty((config.draws, dim)),
        "log_posterior": np.empty(config.draws),
        "energy": np.empty(config.draws),
        "accept_stat": np.empty(config.draws),
        "divergent": np.zeros(config.draws, dtype=bool),
        "tree_depth": np.zeros(config.draws, dtype=np.int16),
        "step_size": eps,
        "mass_diag": mass.diag,
        "eps_trace": result.eps_trace,
        "warnings": result.warnings,
    }
    for i in range(config.draws):
        theta, lp, grad, stats = nuts_step(
            theta, config, mass, model, rng, lp=lp, grad=grad, step_size=eps)
        out["unconstrained"][i] = theta
        out["log_posterior"][i] = lp
        out["energy"][i] = stats.energy
        out["accept_stat"][i] = stats.accept_stat
        out["divergent"][i] = stats.divergent
        out["tree_depth"][i] = stats.depth
    return out


def run_chains(model, config: SamplerConfig, parallel: bool = True) -> ChainSet:
    """Run ``config.chains`` independent NUTS chains.

    Chain c uses the c-th spawn of SeedSequence(config.seed), so results are
    bitwise reproducible for a fixed (seed, config, data) regardless of the
    execution order; ``parallel`` only controls whether chains share a
    thread pool.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    if parallel and config.chains > 1:
        with ThreadPoolExecutor(max_workers=config.chains) as pool:
            results = list(pool.map(
                lambda s: _run_single_chain(model, config, s), seeds))
    else:
        results = [_run_single_chain(model, config, s) for s in seeds]

    unconstrained = np.stack([r["unconstrained"] for r in results])
    chains, draws, dim = unconstrained.shape
    constrained = np.empty_like(unconstrained)
    for c in range(chains):
        for i in range(draws):
            constrained[c, i] = model.constrain(unconstrained[c, i])
    log_likelihood = np.full((chains, draws), np.nan)
    if hasattr(model, "loglik_batch"):
        for c in range(chains):
            log_likelihood[c] = model.loglik_batch(constrained[c])
    return ChainSet(
        param_names=tuple(model.param_names),
        constrained=constrained,
        unconstrained=unconstrained,
        log_posterior=np.stack([r["log_posterior"] for r in results]),
        log_likelihood=log_likelihood,
        energy=np.stack([r["energy"] for r in results]),
        accept_stat=np.stack([r["accept_stat"] for r in results]),
        divergent=np.stack([r["divergent"] for r in results]),
        tree_depth=np.stack([r["tree_depth"] for r in results]),
        step_size=np.array([r["step_size"] for r in results]),
        mass_diag=np.stack([r["mass_diag"] for r in results]),
        eps_trace=np.stack([r["eps_trace"] for r in results]),
        warnings=tuple(tuple(r["warnings"]) for r in results),
        config=config,
    )
