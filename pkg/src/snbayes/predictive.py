"""Prior/posterior predictive simulation and residual diagnostics.

Replicated catalogs are generated through the whitening map:
mu_rep = mu_model(theta) + L y with y ~ N(0, I), which is distributed as
N(mu_model(theta), Sigma) without ever forming Sigma draws directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .cosmology import (
    CosmologyDomainError,
    CosmoParams,
    ModelKind,
    RedshiftGrid,
    mu_batch,
    resolve_plan,
)
from .inference import sample_prior, transform
from .whitening import unwhiten


@dataclass(frozen=True)
class PredictiveDraws:
    """Replicated distance-modulus catalogs, one row per simulated dataset."""

    mu_rep: np.ndarray = field(repr=False)  # (count, n)
    source: str                             # "prior" or "posterior"

    def __post_init__(self):
        m = np.asarray(self.mu_rep, dtype=float)
        object.__setattr__(self, "mu_rep", m)
        if m.ndim != 2:
            raise ValueError(f"expected (count, n), got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("replicated moduli contain non-finite values")
        if self.source not in ("prior", "posterior"):
            raise ValueError(f"source must be 'prior' or 'posterior', got {self.source!r}")

    @property
    def count(self) -> int:
        return self.mu_rep.shape[0]


@dataclass(frozen=True)
class ResidualReport:
    """Raw and whitened residuals at a posterior point estimate."""

    z: np.ndarray
    raw: np.ndarray
    whitened: np.ndarray
    qq_theoretical: np.ndarray
    qq_empirical: np.ndarray
    mean_raw: float
    mean_whitened: float
    var_whitened: float


def _draw_params(spec, source, rng, count: int) -> np.ndarray:
    """Constrained parameter rows: prior draws or a posterior subsample."""
    if source == "prior":
        rows = np.empty((count, spec.kind.ndim))
        for i in range(count):
            for attempt in range(100):
                p = sample_prior(spec.priors, spec.kind, rng)
                xi = transform(spec.kind, p).xi
                if np.isfinite(spec.log_posterior(xi)):
                    rows[i] = p.values(spec.kind)
                    break
            else:
                raise CosmologyDomainError(
                    "100 consecutive prior draws failed the model domain")
        return rows
    flat = source.flat()
    idx = rng.choice(flat.shape[0], size=count, replace=count > flat.shape[0])
    return flat[idx]


def predictive_simulate(spec, source, rng, count: int) -> PredictiveDraws:
    """Simulate ``count`` replicated catalogs.

    ``source`` is the string "prior" (draw parameters from the priors,
    resampling draws whose cosmology evaluation fails) or a ChainSet whose
    draws are subsampled for the posterior predictive.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    kind_label = "prior" if source == "prior" else "posterior"
    params = _draw_params(spec, source, rng, count)
    mu_model = mu_batch(spec.kind, params, spec.plan)
    noise = unwhiten(spec.factor, rng.standard_normal((spec.factor.n, count)))
    return PredictiveDraws(mu_rep=mu_model + noise.T, source=kind_label)


def simulate_catalog(kind: ModelKind, params: CosmoParams, z: np.ndarray,
                     factor, rng, zero_noise: bool = False) -> np.ndarray:
    """Synthetic mu_obs at fixed parameters on an arbitrary grid."""
    grid = RedshiftGrid(np.asarray(z, dtype=float))
    plan = resolve_plan(kind, params, grid)
    mu_model = mu_batch(kind, params.values(kind)[None, :], plan)[0]
    if zero_noise:
        return mu_model
    return mu_model + unwhiten(factor, rng.standard_normal(grid.z.size))


def residual_report(spec, chains, point: str = "mean") -> ResidualReport:
    """Residuals at the posterior mean (or median) parameters, with Q-Q pairs
    of the whitened residuals against standard-normal quantiles."""
    flat = chains.flat()
    if point == "mean":
        values = flat.mean(axis=0)
    elif point == "median":
        values = np.median(flat, axis=0)
    else:
        raise ValueError(f"point must be 'mean' or 'median', got {point!r}")
    mu_model = spec.mu_model(values)
    raw = spec.data.mu_obs - mu_model
    from .whitening import whiten

    y = whiten(spec.factor, raw)
    n = y.size
    order = np.sort(y)
    theo = ndtri((np.arange(1, n + 1) - 0.5) / n)
    return ResidualReport(
        z=spec.data.z,
        raw=raw,
        whitened=y,
        qq_theoretical=theo,
        qq_empirical=order,
        mean_raw=float(raw.mean()),
        mean_whitened=float(y.mean()),
        var_whitened=float(y.var(ddof=1)),
    )


def hubble_bands(spec, chains, grid: RedshiftGrid,
                 levels: tuple[float, ...] = (0.68, 0.95),
                 max_draws: int = 4000, rng=None) -> dict:
    """Pointwise posterior quantile bands of mu(z) plus the mean-point curve.

    Returns {"z", "mean_curve", "bands": {level: (lo, hi)}} with arrays over
    the grid. At most ``max_draws`` posterior draws are used (subsampled
    deterministically unless an rng is given).
    """
    flat = chains.flat()
    if flat.shape[0] == 0:
        raise ValueError("empty chains")
    for level in levels:
        if not 0.0 < level < 1.0:
            raise ValueError(f"levels must lie in (0, 1), got {level}")
    if flat.shape[0] > max_draws:
        if rng is None:
            idx = np.linspace(0, flat.shape[0] - 1, max_draws).astype(int)
        else:
            idx = rng.choice(flat.shape[0], size=max_draws, replace=False)
        flat = flat[idx]
    center = CosmoParams.from_values(spec.kind, chains.flat().mean(axis=0))
    plan = resolve_plan(spec.kind, center, grid)
    curves = mu_batch(spec.kind, flat, plan)
    mean_curve = mu_batch(spec.kind, chains.flat().mean(axis=0)[None, :], plan)[0]
    bands = {}
    for level in levels:
        lo = np.quantile(curves, 0.5 - level / 2.0, axis=0)
        hi = np.quantile(curves, 0.5 + level / 2.0, axis=0)
        bands[level] = (lo, hi)
    return {"z": grid.z, "mean_curve": mean_curve, "bands": bands}
