"""Convergence and information diagnostics for posterior chains.

R-hat is the rank-normalized split statistic (the larger of the bulk and
folded versions); effective sample sizes use per-chain FFT autocovariances
combined across chains with Geyer's initial positive/monotone truncation.
Returns NaN (a "diagnostic undefined" marker, not an exception) when the
draws carry no variance. The KL divergence follows the grid procedure used
for the prior/posterior comparison tables: Gaussian KDE for the posterior,
analytic prior, both renormalized on a 2000-point grid spanning the
posterior mean +- 6 sd, integrated by the trapezoid rule.
"""

from __future__ import annotations

import csv
import io
import warnings as _warnings
from dataclasses import dataclass, fields

import numpy as np
from scipy.special import ndtri
from scipy.stats import gaussian_kde, rankdata


@dataclass(frozen=True)
class SummaryRow:
    """One parameter's posterior summary (Tables 2-4 column order)."""

    parameter: str
    mean: float
    sd: float
    hdi_low: float
    hdi_high: float
    mcse_mean: float
    mcse_sd: float
    ess_bulk: float
    ess_tail: float
    rhat: float


@dataclass(frozen=True)
class InfoRow:
    """Prior/posterior comparison for one parameter (Table 1 column order)."""

    parameter: str
    prior_mean: float
    prior_sd: float
    post_mean: float
    post_sd: float
    shrinkage: float
    kl_nats: float


def _validate(chains: np.ndarray) -> np.ndarray:
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"expected (chains, draws), got shape {x.shape}")
    if x.shape[0] < 2:
        raise ValueError("need at least 2 chains")
    if x.shape[1] < 4:
        raise ValueError("need at least 4 draws per chain")
    return x


def _split(x: np.ndarray) -> np.ndarray:
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, half: 2 * half]], axis=0)


def _z_scale(x: np.ndarray) -> np.ndarray:
    """Rank-normalize pooled draws to standard-normal scores (Blom offsets)."""
    ranks = rankdata(x, method="average").reshape(x.shape)
    return ndtri((ranks - 0.375) / (x.size + 0.25))


def _rhat_core(x: np.ndarray) -> float:
    m, n = x.shape
    within = x.var(axis=1, ddof=1).mean()
    if within <= 0 or not np.isfinite(within):
        return float("nan")
    between = n * x.mean(axis=1).var(ddof=1)
    var_plus = (n - 1.0) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def rhat(chains) -> float:
    """Rank-normalized split R-hat; ~1 for converged, well-mixed chains."""
    x = _split(_validate(chains))
    bulk = _rhat_core(_z_scale(x))
    folded = _rhat_core(_z_scale(np.abs(x - np.median(x))))
    return max(bulk, folded)


def _autocov(x: np.ndarray) -> np.ndarray:
    """Per-chain biased autocovariance (lags 0..n-1) via FFT."""
    n = x.shape[1]
    centered = x - x.mean(axis=1, keepdims=True)
    f = np.fft.rfft(centered, n=2 * n, axis=1)
    return np.fft.irfft(f * np.conj(f), n=2 * n, axis=1)[:, :n] / n


def _ess_core(x: np.ndarray) -> float:
    m, n = x.shape
    acov = _autocov(x)
    mean_var = acov[:, 0].mean() * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus <= 0 or not np.isfinite(var_plus):
        return float("nan")

    rho_hat = np.zeros(n)
    rho_hat[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho_hat[1] = rho_odd
    # Geyer initial positive sequence: stop before the first negative pair
    t = 1
    while t < n - 3 and (rho_even + rho_odd) > 0.0:
        rho_even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if (rho_even + rho_odd) >= 0.0:
            rho_hat[t + 1] = rho_even
            rho_hat[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0.0:
        rho_hat[max_t + 1] = rho_even
    # Geyer initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho_hat[t + 1] + rho_hat[t + 2] > rho_hat[t - 1] + rho_hat[t]:
            rho_hat[t + 1] = 0.5 * (rho_hat[t - 1] + rho_hat[t])
            rho_hat[t + 2] = rho_hat[t + 1]
        t += 2
    size = m * n
    tau_hat = -1.0 + 2.0 * rho_hat[: max_t + 1].sum() + rho_hat[max_t + 1]
    tau_hat = max(tau_hat, 1.0 / np.log10(size))
    return float(size / tau_hat)


def ess(chains, mode: str = "bulk") -> float:
    """Effective sample size; ``mode`` is "bulk" or "tail".

    Bulk uses rank-normalized split chains; tail is the smaller ESS of the
    5% and 95% quantile indicator chains.
    """
    x = _validate(chains)
    if np.allclose(x, x.flat[0]):
        return float("nan")
    if mode == "bulk":
        return _ess_core(_z_scale(_split(x)))
    if mode == "tail":
        out = []
        for q in (0.05, 0.95):
            indicator = (x <= np.quantile(x, q)).astype(float)
            out.append(_ess_core(_split(indicator)))
        return float(np.nanmin(out)) if not all(np.isnan(out)) else float("nan")
    raise ValueError(f"mode must be 'bulk' or 'tail', got {mode!r}")


def mcse(chains, stat: str = "mean") -> float:
    """Monte Carlo standard error of the posterior mean or sd.

    mean: sd/sqrt(ESS_bulk); sd: sd/sqrt(2 ESS_bulk) (Gaussian delta method).
    """
    x = _validate(chains)
    n_eff = ess(x, mode="bulk")
    if not np.isfinite(n_eff):
        return float("nan")
    sd = float(x.std(ddof=1))
    if stat == "mean":
        return sd / np.sqrt(n_eff)
    if stat == "sd":
        return sd / np.sqrt(2.0 * n_eff)
    raise ValueError(f"stat must be 'mean' or 'sd', got {stat!r}")


def hdi(draws, mass: float = 0.94) -> tuple[float, float]:
    """Narrowest contiguous interval holding ``mass`` of the draws."""
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    n = x.size
    if n < 10:
        raise ValueError(f"hdi needs at least 10 draws, got {n}")
    if not 0.0 < mass < 1.0:
        raise ValueError("mass must lie in (0, 1)")
    k = max(1, int(np.floor(mass * n)))
    if k >= n:
        k = n - 1
    widths = x[k:] - x[: n - k]
    lo = int(np.argmin(widths))
    return float(x[lo]), float(x[lo + k])


def kde_density(draws, grid) -> np.ndarray:
    """Gaussian KDE with Scott bandwidth n^(-1/5) * sd, evaluated on ``grid``."""
    x = np.asarray(draws, dtype=float).ravel()
    if x.std() == 0:
        raise ValueError("kde requires draws with nonzero variance")
    return gaussian_kde(x, bw_method="scott")(np.asarray(grid, dtype=float))


def kl_divergence(draws, prior_pdf, n_grid: int = 2000, span: float = 6.0) -> float:
    """Marginal KL(posterior | prior) in nats via the KDE grid procedure.

    Returns +inf (with a warning) when the prior has zero density anywhere
    the posterior carries mass above 1e-12.
    """
    x = np.asarray(draws, dtype=float).ravel()
    mean, sd = x.mean(), x.std(ddof=1)
    if sd == 0:
        raise ValueError("kl_divergence requires draws with nonzero variance")
    grid = np.linspace(mean - span * sd, mean + span * sd, n_grid)
    post = kde_density(x, grid)
    post = post / np.trapezoid(post, grid)
    prior = np.asarray(prior_pdf(grid), dtype=float)
    z_prior = np.trapezoid(prior, grid)
    support = post > 1e-12
    if z_prior <= 0 or np.any(prior[support] <= 0):
        _warnings.warn(
            "prior density vanishes where the posterior has mass; KL is +inf")
        return float("inf")
    prior = prior / z_prior
    integrand = np.zeros_like(grid)
    integrand[support] = post[support] * (
        np.log(post[support]) - np.log(prior[support])
    )
    return float(np.trapezoid(integrand, grid))


def shrinkage(prior_sd: float, post_sd: float) -> float:
    """Fraction of prior uncertainty removed: 1 - post_sd/prior_sd."""
    if prior_sd <= 0:
        raise ValueError("prior_sd must be positive")
    return 1.0 - post_sd / prior_sd


# ---------------------------------------------------------------------------
# table assembly


def summarize(chainset, mass: float = 0.94) -> list[SummaryRow]:
    """SummaryRow per parameter from a ChainSet's constrained draws."""
    rows = []
    for j, name in enumerate(chainset.param_names):
        x = chainset.parameter(j)
        lo, hi = hdi(x.ravel(), mass=mass)
        rows.append(SummaryRow(
            parameter=name,
            mean=float(x.mean()),
            sd=float(x.std(ddof=1)),
            hdi_low=lo,
            hdi_high=hi,
            mcse_mean=mcse(x, "mean"),
            mcse_sd=mcse(x, "sd"),
            ess_bulk=ess(x, "bulk"),
            ess_tail=ess(x, "tail"),
            rhat=rhat(x),
        ))
    return rows


def info_rows(chainset, prior_moments, prior_pdfs) -> list[InfoRow]:
    """InfoRow per parameter given prior (mean, sd) rows and pdf callables."""
    rows = []
    for j, name in enumerate(chainset.param_names):
        x = chainset.parameter(j).ravel()
        p_mean, p_sd = prior_moments[j]
        post_sd = float(x.std(ddof=1))
        rows.append(InfoRow(
            parameter=name,
            prior_mean=float(p_mean),
            prior_sd=float(p_sd),
            post_mean=float(x.mean()),
            post_sd=post_sd,
            shrinkage=shrinkage(p_sd, post_sd),
            kl_nats=kl_divergence(x, prior_pdfs[j]),
        ))
    return rows


def rows_to_csv(rows) -> str:
    """Serialize a list of dataclass rows to CSV with full float precision."""
    out = io.StringIO()
    names = [f.name for f in fields(rows[0])]
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(names)
    for row in rows:
        writer.writerow([_fmt(getattr(row, n)) for n in names])
    return out.getvalue()


def rows_to_text(rows, precision: int = 5) -> str:
    """Aligned plain-text table of dataclass rows."""
    names = [f.name for f in fields(rows[0])]
    table = [names] + [
        [_fmt(getattr(row, n), precision) for n in names] for row in rows
    ]
    widths = [max(len(r[i]) for r in table) for i in range(len(names))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in table]
    return "\n".join(lines) + "\n"


def _fmt(value, precision: int | None = None) -> str:
    if isinstance(value, float):
        if precision is None:
            return repr(value)
        return f"{value:.{precision}f}"
    return str(value)
