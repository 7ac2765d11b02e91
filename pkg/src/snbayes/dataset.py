"""Supernova catalog and covariance ingestion.

The catalog loader reads a CSV with a header; column names are configurable
and default to the DES-SN5YR Hubble-diagram release conventions. The
systematic covariance loader reads the published text-matrix layout: an
integer n on the first line followed by n^2 whitespace-separated values in
row-major order. The total covariance is Sigma = diag(sigma_mu^2) + Sigma_sys.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

# catalog column defaults (DES-SN5YR Hubble diagram release)
DEFAULT_COLUMNS = {
    "z": "zHD",
    "mu": "MU",
    "sigma_mu": "MUERR_FINAL",
    "id": "CID",
}

_SYMMETRY_RTOL = 1e-10


class CatalogParseError(ValueError):
    """Catalog file violates the format or a field invariant."""

    def __init__(self, message, row: int | None = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class CovarianceFormatError(ValueError):
    """Covariance file has the wrong entry count or is too asymmetric."""


@dataclass(frozen=True)
class SupernovaCatalog:
    """Observed supernovae: redshifts, distance moduli, and per-point errors."""

    z: np.ndarray
    mu_obs: np.ndarray
    sigma_mu: np.ndarray
    ids: tuple[str, ...]

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        mu = np.asarray(self.mu_obs, dtype=float)
        sig = np.asarray(self.sigma_mu, dtype=float)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "mu_obs", mu)
        object.__setattr__(self, "sigma_mu", sig)
        n = z.size
        if not (mu.size == n and sig.size == n and len(self.ids) == n):
            raise ValueError("catalog arrays must share one length")
        if not np.all(np.isfinite(z)) or np.any(z <= 0):
            raise ValueError("catalog redshifts must be finite and positive")
        if not np.all(np.isfinite(mu)):
            raise ValueError("catalog moduli must be finite")
        if not np.all(np.isfinite(sig)) or np.any(sig <= 0):
            raise ValueError("catalog sigma_mu must be finite and positive")

    @property
    def n(self) -> int:
        return self.z.size


@dataclass(frozen=True)
class TotalCovariance:
    """Assembled n x n covariance Sigma = Sigma_stat + Sigma_sys (mag^2)."""

    sigma: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=float)
        object.__setattr__(self, "sigma", s)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError(f"covariance must be square, got shape {s.shape}")
        scale = np.max(np.abs(s))
        if scale > 0 and np.max(np.abs(s - s.T)) > _SYMMETRY_RTOL * scale:
            raise ValueError("covariance is not symmetric to 1e-10 relative")

    @property
    def n(self) -> int:
        return self.sigma.shape[0]


def load_catalog(path, columns: dict | None = None) -> SupernovaCatalog:
    """Read a supernova catalog from a CSV file with a header row.

    ``columns`` may override any of the keys in DEFAULT_COLUMNS to match
    other releases' naming. Rows are kept in file order; the row number in
    error messages is 1-based and counts data rows (header excluded).
    """
    colmap = dict(DEFAULT_COLUMNS)
    if columns:
        unknown = set(columns) - set(colmap)
        if unknown:
            raise ValueError(f"unknown column mapping keys: {sorted(unknown)}")
        colmap.update(columns)

    z, mu, sig, ids = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise CatalogParseError("file is empty (no header row)")
        header = [name.strip() for name in reader.fieldnames]
        for role in ("z", "mu", "sigma_mu", "id"):
            if colmap[role] not in header:
                raise CatalogParseError(
                    f"missing column {colmap[role]!r} (for {role}); "
                    f"header has {header}"
                )
        for rownum, row in enumerate(reader, start=1):
            row = {(k.strip() if k else k): v for k, v in row.items()}
            try:
                z_i = float(row[colmap["z"]])
                mu_i = float(row[colmap["mu"]])
                sig_i = float(row[colmap["sigma_mu"]])
            except (TypeError, ValueError) as exc:
                raise CatalogParseError(f"non-numeric cell ({exc})", row=rownum) from None
            if not np.isfinite(z_i) or z_i <= 0:
                raise CatalogParseError(f"redshift must be positive, got {z_i}", row=rownum)
            if not np.isfinite(mu_i):
                raise CatalogParseError(f"non-finite distance modulus {mu_i}", row=rownum)
            if not np.isfinite(sig_i) or sig_i <= 0:
                raise CatalogParseError(f"sigma_mu must be positive, got {sig_i}", row=rownum)
            z.append(z_i)
            mu.append(mu_i)
            sig.append(sig_i)
            ids.append(str(row[colmap["id"]]).strip())
    if not z:
        raise CatalogParseError("catalog has a header but no data rows")
    return SupernovaCatalog(
        z=np.array(z), mu_obs=np.array(mu), sigma_mu=np.array(sig), ids=tuple(ids)
    )


def load_covariance(path) -> np.ndarray:
    """Read an n x n matrix: first token integer n, then n^2 reals, row-major.

    Mild asymmetry (< 1e-10 relative) is removed by averaging with the
    transpose; anything larger is an error.
    """
    with open(path) as fh:
        tokens = fh.read().split()
    if not tokens:
        raise CovarianceFormatError("covariance file is empty")
    try:
        n = int(tokens[0])
    except ValueError:
        raise CovarianceFormatError(
            f"first token must be the integer dimension, got {tokens[0]!r}"
        ) from None
    if n <= 0:
        raise CovarianceFormatError(f"dimension must be positive, got {n}")
    if len(tokens) - 1 != n * n:
        raise CovarianceFormatError(
            f"expected {n * n} entries after the dimension, found {len(tokens) - 1}"
        )
    try:
        mat = np.array(tokens[1:], dtype=float).reshape(n, n)
    except ValueError as exc:
        raise CovarianceFormatError(f"non-numeric entry: {exc}") from None
    scale = np.max(np.abs(mat))
    if scale > 0 and np.max(np.abs(mat - mat.T)) > _SYMMETRY_RTOL * scale:
        raise CovarianceFormatError(
            "matrix asymmetry exceeds 1e-10 relative; refusing to symmetrize"
        )
    return 0.5 * (mat + mat.T)


def assemble_total_covariance(cat: SupernovaCatalog, sys_cov: np.ndarray) -> TotalCovariance:
    """Sigma = diag(sigma_mu^2) + Sigma_sys, verified positive definite."""
    sys_cov = np.asarray(sys_cov, dtype=float)
    if sys_cov.shape != (cat.n, cat.n):
        raise ValueError(
            f"systematic covariance shape {sys_cov.shape} does not match "
            f"catalog n={cat.n}"
        )
    sigma = sys_cov + np.diag(cat.sigma_mu ** 2)
    total = TotalCovariance(sigma=sigma)
    # fail fast if the sum is not positive definite
    from . import whitening

    whitening.cholesky_factorize(total)
    return total
