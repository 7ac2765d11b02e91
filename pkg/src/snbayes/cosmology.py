"""Background cosmology: Hubble rates, luminosity distances, distance moduli.

Three flat dark-energy models are supported. Each has a closed-form
dimensionless expansion rate E(z) = H(z)/H0:

* ``LCDM``: cosmological constant, E^2 = Om*(1+z)^3 + (1-Om)
* ``WCDM``: constant equation of state w,
  E^2 = Om*(1+z)^3 + (1-Om)*(1+z)^(3(1+w))
* ``CPL``: w(z) = w0 + wa*z/(1+z),
  E^2 = Om*(1+z)^3 + (1-Om)*(1+z)^(3(1+w0+wa)) * exp(-3*wa*z/(1+z))

Luminosity distances are cumulative quadratures of c/H over a shared
redshift grid, so the integral up to z_k reuses every segment below z_k.
The quadrature is composite Gauss-Legendre (5 nodes per panel) with panel
doubling until successive cumulative estimates agree to a relative
tolerance.  Parameter derivatives of mu are taken by differentiating that
same discretization, which keeps them consistent with finite differences
of the discretized values.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

# km/s; distances are in Mpc throughout
C_KM_S = 299792.458

# internal relative tolerance for the panel-doubling refinement
QUAD_RTOL = 1e-9
_MAX_REFINEMENTS = 12


class CosmologyDomainError(ValueError):
    """E(z) evaluated to a non-finite value (parameter/redshift overflow)."""

    def __init__(self, message, z=None):
        super().__init__(message)
        self.z = z


class QuadratureError(RuntimeError):
    """The cumulative quadrature failed to converge."""


class ModelKind(Enum):
    """Dark-energy model family; fixes the parameter dimensionality."""

    LCDM = "lcdm"
    WCDM = "wcdm"
    CPL = "cpl"

    @property
    def ndim(self) -> int:
        return {ModelKind.LCDM: 2, ModelKind.WCDM: 3, ModelKind.CPL: 4}[self]

    @property
    def param_names(self) -> tuple[str, ...]:
        return {
            ModelKind.LCDM: ("h0", "omega_m"),
            ModelKind.WCDM: ("h0", "omega_m", "w"),
            ModelKind.CPL: ("h0", "omega_m", "w0", "wa"),
        }[self]


@dataclass(frozen=True)
class CosmoParams:
    """One parameter point. Flatness is assumed: Omega_Lambda = 1 - omega_m.

    ``w`` is only meaningful for WCDM, ``w0``/``wa`` only for CPL; the
    other fields are ignored by the model that does not use them.
    """

    h0: float
    omega_m: float
    w: float | None = None
    w0: float | None = None
    wa: float | None = None

    def __post_init__(self):
        if not (np.isfinite(self.h0) and self.h0 > 0):
            raise ValueError(f"h0 must be positive and finite, got {self.h0}")
        if not (np.isfinite(self.omega_m) and 0.0 < self.omega_m < 1.0):
            raise ValueError(f"omega_m must lie in (0, 1), got {self.omega_m}")

    def values(self, kind: ModelKind) -> np.ndarray:
        """Constrained parameter vector in the order kind.param_names."""
        if kind is ModelKind.LCDM:
            return np.array([self.h0, self.omega_m])
        if kind is ModelKind.WCDM:
            if self.w is None:
                raise ValueError("WCDM requires w")
            return np.array([self.h0, self.omega_m, self.w])
        if self.w0 is None or self.wa is None:
            raise ValueError("CPL requires w0 and wa")
        return np.array([self.h0, self.omega_m, self.w0, self.wa])

    @staticmethod
    def from_values(kind: ModelKind, vec) -> "CosmoParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (kind.ndim,):
            raise ValueError(f"{kind} expects {kind.ndim} values, got shape {vec.shape}")
        if kind is ModelKind.LCDM:
            return CosmoParams(h0=vec[0], omega_m=vec[1])
        if kind is ModelKind.WCDM:
            return CosmoParams(h0=vec[0], omega_m=vec[1], w=vec[2])
        return CosmoParams(h0=vec[0], omega_m=vec[1], w0=vec[2], wa=vec[3])


@dataclass(frozen=True)
class RedshiftGrid:
    """Strictly increasing, positive redshift abscissa (supernova regime)."""

    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        object.__setattr__(self, "z", z)
        if z.ndim != 1 or z.size == 0:
            raise ValueError("redshift grid must be a non-empty 1-d array")
        if not np.all(np.isfinite(z)):
            raise ValueError("redshift grid contains non-finite entries")
        if z[0] <= 0.0:
            raise ValueError("redshifts must be strictly positive (mu is undefined at z=0)")
        if np.any(np.diff(z) <= 0.0):
            raise ValueError("redshift grid must be strictly increasing")
        if z[-1] > 10.0:
            raise ValueError(f"max redshift {z[-1]} exceeds the supernova sanity bound of 10")

    def __len__(self):
        return self.z.size


def cpl_w_of_z(w0: float, wa: float, z):
    """Equation of state w(z) = w0 + wa * z/(1+z); approaches w0+wa as z grows."""
    z = np.asarray(z, dtype=float)
    out = w0 + wa * z / (1.0 + z)
    return float(out) if out.ndim == 0 else out


def _log_de_factor(kind: ModelKind, p: CosmoParams, z):
    """log of the dark-energy density factor g(z) multiplying (1 - omega_m)."""
    zp1 = 1.0 + z
    if kind is ModelKind.LCDM:
        return np.zeros_like(zp1)
    if kind is ModelKind.WCDM:
        return 3.0 * (1.0 + p.w) * np.log(zp1)
    return 3.0 * (1.0 + p.w0 + p.wa) * np.log(zp1) - 3.0 * p.wa * z / zp1


def _e_squared(kind: ModelKind, p: CosmoParams, z):
    """E(z)^2 = omega_m (1+z)^3 + (1 - omega_m) g(z); may overflow to inf."""
    z = np.asarray(z, dtype=float)
    with np.errstate(over="ignore"):
        g = np.exp(_log_de_factor(kind, p, z))
        return p.omega_m * (1.0 + z) ** 3 + (1.0 - p.omega_m) * g


def hubble_rate(kind: ModelKind, p: CosmoParams, z):
    """H(z) in km/s/Mpc for the chosen model. Raises on overflow.

    Accepts a scalar or an array of redshifts (all must be >= 0).
    """
    zarr = np.asarray(z, dtype=float)
    if np.any(zarr < 0.0):
        raise ValueError("hubble_rate requires z >= 0")
    e2 = _e_squared(kind, p, zarr)
    if not np.all(np.isfinite(e2)):
        bad = zarr if zarr.ndim == 0 else zarr[~np.isfinite(np.atleast_1d(e2))][0]
        raise CosmologyDomainError(
            f"H(z) overflowed at z={float(bad)} for params {p}", z=float(bad)
        )
    out = p.h0 * np.sqrt(e2)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# cumulative quadrature machinery

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


@dataclass(frozen=True)
class QuadraturePlan:
    """Fixed Gauss-Legendre node layout for cumulative integration over a grid.

    The plan depends only on the grid geometry and the panel level, never on
    cosmological parameters, so any function evaluated through one plan is a
    smooth function of those parameters.
    """

    grid: RedshiftGrid
    nodes: np.ndarray        # all quadrature abscissae, flattened
    weights: np.ndarray      # matching weights
    seg_edges: np.ndarray    # node-count boundaries of each segment
    inverse: np.ndarray      # maps unique-z integrals back to grid order
    panels: int

    @property
    def n_unique(self) -> int:
        return self.seg_edges.size - 1

    def cumulative(self, f_nodes: np.ndarray) -> np.ndarray:
        """Integrate f over [0, z_i] for every grid point, given f at nodes.

        ``f_nodes`` may carry leading batch dimensions.
        """
        contrib = f_nodes * self.weights
        seg_sums = np.add.reduceat(contrib, self.seg_edges[:-1], axis=-1)
        return np.cumsum(seg_sums, axis=-1)[..., self.inverse]


@lru_cache(maxsize=32)
def _plan_cache(z_key: tuple, panels: int) -> QuadraturePlan:
    grid = RedshiftGrid(np.array(z_key))
    return _make_plan(grid, panels)


def build_plan(grid: RedshiftGrid, panels: int = 1) -> QuadraturePlan:
    """Quadrature plan for a grid with ``panels`` panels per segment."""
    return _plan_cache(tuple(grid.z.tolist()), panels)


def _make_plan(grid: RedshiftGrid, panels: int) -> QuadraturePlan:
    z_unique, inverse = np.unique(grid.z, return_inverse=True)
    m = z_unique.size
    lo = np.concatenate([[0.0], z_unique[:-1]])
    # split every segment into `panels` equal panels of 5 GL nodes each
    width = (z_unique - lo) / panels
    centers = lo[:, None] + width[:, None] * (np.arange(panels) + 0.5)
    half = 0.5 * width
    nodes = (centers[:, :, None] + half[:, None, None] * _GL_NODES).reshape(-1)
    weights = (np.ones((m, panels, 1)) * (half[:, None, None] * _GL_WEIGHTS)).reshape(-1)
    seg_edges = np.arange(m + 1) * (5 * panels)
    return QuadraturePlan(
        grid=grid, nodes=nodes, weights=weights,
        seg_edges=seg_edges, inverse=inverse, panels=panels,
    )


def _inv_e_at_nodes(kind, p, nodes):
    e2 = _e_squared(kind, p, nodes)
    if not np.all(np.isfinite(e2)):
        bad = float(nodes[~np.isfinite(e2)][0])
        raise CosmologyDomainError(f"integrand non-finite at z={bad}", z=bad)
    return 1.0 / np.sqrt(e2)


def comoving_integral(kind: ModelKind, p: CosmoParams, grid: RedshiftGrid,
                      rtol: float = QUAD_RTOL) -> tuple[np.ndarray, QuadraturePlan]:
    """I(z_i) = integral_0^{z_i} dz'/E(z') for every grid point.

    Doubles panels until two successive cumulative estimates agree to
    ``rtol`` relative, then returns the finer estimate and its plan.
    """
    panels = 1
    plan = build_plan(grid, panels)
    est = plan.cumulative(_inv_e_at_nodes(kind, p, plan.nodes))
    for _ in range(_MAX_REFINEMENTS):
        fine_plan = build_plan(grid, 2 * panels)
        fine = fine_plan.cumulative(_inv_e_at_nodes(kind, p, fine_plan.nodes))
        if np.max(np.abs(fine - est) / np.abs(fine)) < rtol:
            return fine, fine_plan
        panels *= 2
        plan, est = fine_plan, fine
    raise QuadratureError(
        f"cumulative quadrature did not converge to rtol={rtol} within "
        f"{_MAX_REFINEMENTS} refinements (last grid point z={grid.z[-1]})"
    )


def resolve_plan(kind: ModelKind, p: CosmoParams, grid: RedshiftGrid,
                 rtol: float = QUAD_RTOL) -> QuadraturePlan:
    """Plan whose panel level satisfies the refinement check at params ``p``."""
    return comoving_integral(kind, p, grid, rtol)[1]


def luminosity_distance(kind: ModelKind, p: CosmoParams, grid: RedshiftGrid) -> np.ndarray:
    """d_L(z_i) = (1+z_i) * c * I(z_i) / H0 in Mpc, cumulatively over the grid."""
    integral, _ = comoving_integral(kind, p, grid)
    return (1.0 + grid.z) * (C_KM_S / p.h0) * integral


def distance_modulus(kind: ModelKind, p: CosmoParams, grid: RedshiftGrid) -> np.ndarray:
    """mu(z_i) = 5 log10(d_L / 1 Mpc) + 25, elementwise over the grid."""
    return 5.0 * np.log10(luminosity_distance(kind, p, grid)) + 25.0


# ---------------------------------------------------------------------------
# plan-based evaluation (fixed discretization; used by the inference path)

_LOG10E_5 = 5.0 / np.log(10.0)


def _e2_and_partials(kind: ModelKind, p: CosmoParams, z: np.ndarray):
    """E^2 and its partials wrt the non-H0 parameters at the given redshifts.

    Returns (e2, list of dE^2/dp arrays) ordered as kind.param_names[1:].
    """
    zp1 = 1.0 + z
    zp1_cubed = zp1 ** 3
    with np.errstate(over="ignore"):
        g = np.exp(_log_de_factor(kind, p, z))
    om = p.omega_m
    e2 = om * zp1_cubed + (1.0 - om) * g
    partials = [zp1_cubed - g]
    log_zp1 = np.log(zp1)
    if kind is ModelKind.WCDM:
        partials.append((1.0 - om) * g * 3.0 * log_zp1)
    elif kind is ModelKind.CPL:
        partials.append((1.0 - om) * g * 3.0 * log_zp1)
        partials.append((1.0 - om) * g * 3.0 * (log_zp1 - z / zp1))
    return e2, partials


def mu_with_plan(kind: ModelKind, p: CosmoParams, plan: QuadraturePlan) -> np.ndarray:
    """Distance modulus over plan.grid using the plan's fixed node layout."""
    integral = plan.cumulative(_inv_e_at_nodes(kind, p, plan.nodes))
    d_l = (1.0 + plan.grid.z) * (C_KM_S / p.h0) * integral
    return 5.0 * np.log10(d_l) + 25.0


def mu_and_gradient(kind: ModelKind, p: CosmoParams, plan: QuadraturePlan):
    """mu and dmu/dtheta (constrained order: h0, omega_m, [w | w0, wa]).

    The derivative differentiates the plan's quadrature sum exactly, so it
    agrees with finite differences of ``mu_with_plan`` up to truncation.
    Shapes: mu (n,), grad (n, ndim).
    """
    z_nodes = plan.nodes
    e2, partials = _e2_and_partials(kind, p, z_nodes)
    if not np.all(np.isfinite(e2)):
        bad = float(z_nodes[~np.isfinite(e2)][0])
        raise CosmologyDomainError(f"integrand non-finite at z={bad}", z=bad)
    inv_e = 1.0 / np.sqrt(e2)
    # d(1/E)/dp = -0.5 * E^-3 * dE^2/dp
    coef = -0.5 * inv_e / e2
    integrands = np.vstack([inv_e] + [coef * dp for dp in partials])
    integrals = plan.cumulative(integrands)
    big_i = integrals[0]
    d_l = (1.0 + plan.grid.z) * (C_KM_S / p.h0) * big_i
    mu = 5.0 * np.log10(d_l) + 25.0
    grad = np.empty((plan.grid.z.size, kind.ndim))
    grad[:, 0] = -_LOG10E_5 / p.h0
    for j in range(1, kind.ndim):
        grad[:, j] = _LOG10E_5 * integrals[j] / big_i
    return mu, grad


def mu_batch(kind: ModelKind, values: np.ndarray, plan: QuadraturePlan,
             block: int = 256) -> np.ndarray:
    """Distance moduli for a batch of constrained parameter vectors.

    ``values`` has shape (S, ndim); the result has shape (S, n). Evaluation
    is vectorized over draws in blocks to bound peak memory.
    """
    values = np.asarray(values, dtype=float)
    n_draws = values.shape[0]
    out = np.empty((n_draws, plan.grid.z.size))
    for start in range(0, n_draws, block):
        stop = min(start + block, n_draws)
        chunk = values[start:stop]
        e2 = _e2_batch(kind, chunk, plan.nodes)
        if not np.all(np.isfinite(e2)):
            s, _ = np.nonzero(~np.isfinite(e2))
            raise CosmologyDomainError(
                f"non-finite expansion rate for draw {start + int(s[0])}"
            )
        integral = plan.cumulative(1.0 / np.sqrt(e2))
        d_l = (1.0 + plan.grid.z) * (C_KM_S / chunk[:, :1]) * integral
        out[start:stop] = 5.0 * np.log10(d_l) + 25.0
    return out


def _e2_batch(kind: ModelKind, values: np.ndarray, z: np.ndarray) -> np.ndarray:
    """E^2 at redshifts ``z`` for each row of constrained parameters."""
    zp1 = 1.0 + z[None, :]
    om = values[:, 1:2]
    with np.errstate(over="ignore"):
        if kind is ModelKind.LCDM:
            g = 1.0
        elif kind is ModelKind.WCDM:
            g = zp1 ** (3.0 * (1.0 + values[:, 2:3]))
        else:
            w0, wa = values[:, 2:3], values[:, 3:4]
            g = np.exp(3.0 * (1.0 + w0 + wa) * np.log(zp1) - 3.0 * wa * z[None, :] / zp1)
        return om * zp1 ** 3 + (1.0 - om) * g
