"""Run-directory persistence.

A run directory is self-describing: a config snapshot (with SHA-256
checksums of the input files), one CSV of per-draw records per chain,
per-chain adaptation traces, the summary/info tables, and the pointwise
log-likelihood matrix. Reloading verifies the data checksums and rebuilds
the PosteriorSpec and ChainSet; everything except timings.txt is
byte-deterministic for a fixed seed, config, and inputs.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import diagnostics
from .cosmology import ModelKind
from .dataset import assemble_total_covariance, load_catalog, load_covariance
from .inference import PosteriorSpec, PriorSpec
from .sampler import ChainSet, SamplerConfig
from .selection import PointwiseLogLik
from .whitening import cholesky_factorize

CONFIG_NAME = "config.json"
CHAIN_META_NAME = "chain_meta.json"
POINTWISE_NAME = "pointwise_loglik.npz"
TIMINGS_NAME = "timings.txt"


class RunDirectoryError(RuntimeError):
    """Missing files, checksum mismatch, or malformed run contents."""


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _chain_csv_name(c: int) -> str:
    return f"chain_{c:02d}.csv"


def _adapt_csv_name(c: int) -> str:
    return f"adaptation_{c:02d}.csv"


def save_run(run_dir, config: dict, chains: ChainSet,
             summary_rows, info_rows, pointwise: PointwiseLogLik | None,
             timings: dict | None = None) -> None:
    """Write a complete run directory (created if needed)."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / CONFIG_NAME, "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")

    names = list(chains.param_names)
    header = (
        names
        + [f"xi_{n}" for n in names]
        + ["log_posterior", "log_likelihood", "energy", "accept_stat",
           "divergent", "tree_depth", "step_size"]
    )
    for c in range(chains.n_chains):
        with open(run_dir / _chain_csv_name(c), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for i in range(chains.n_draws):
                row = (
                    [repr(v) for v in chains.constrained[c, i]]
                    + [repr(v) for v in chains.unconstrained[c, i]]
                    + [repr(float(chains.log_posterior[c, i])),
                       repr(float(chains.log_likelihood[c, i])),
                       repr(float(chains.energy[c, i])),
                       repr(float(chains.accept_stat[c, i])),
                       str(int(chains.divergent[c, i])),
                       str(int(chains.tree_depth[c, i])),
                       repr(float(chains.step_size[c]))]
                )
                writer.writerow(row)
        with open(run_dir / _adapt_csv_name(c), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step_size"])
            for v in chains.eps_trace[c]:
                writer.writerow([repr(float(v))])

    meta = {
        "param_names": names,
        "step_size": [repr(float(v)) for v in chains.step_size],
        "mass_diag": [[repr(float(v)) for v in row] for row in chains.mass_diag],
        "warnings": [list(w) for w in chains.warnings],
    }
    with open(run_dir / CHAIN_META_NAME, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if summary_rows:
        (run_dir / "summary.csv").write_text(diagnostics.rows_to_csv(summary_rows))
        (run_dir / "summary.txt").write_text(diagnostics.rows_to_text(summary_rows))
    if info_rows:
        (run_dir / "info.csv").write_text(diagnostics.rows_to_csv(info_rows))
        (run_dir / "info.txt").write_text(diagnostics.rows_to_text(info_rows))
    if pointwise is not None:
        np.savez_compressed(
            run_dir / POINTWISE_NAME,
            ell=pointwise.ell, log_det_t=np.array(pointwise.log_det_t),
        )
    if timings is not None:
        lines = [f"{k} = {v}" for k, v in sorted(timings.items())]
        (run_dir / TIMINGS_NAME).write_text("\n".join(lines) + "\n")


@dataclass
class LoadedRun:
    """A reloaded run: config snapshot, rebuilt spec, and the ChainSet."""

    path: Path
    config: dict
    spec: PosteriorSpec
    chains: ChainSet

    @property
    def data_sha256(self) -> str:
        return self.config["data_sha256"]

    def pointwise(self) -> PointwiseLogLik:
        f = self.path / POINTWISE_NAME
        if not f.exists():
            raise RunDirectoryError(f"{f} is missing")
        with np.load(f) as archive:
            return PointwiseLogLik(
                ell=archive["ell"], log_det_t=float(archive["log_det_t"]))


def build_spec_from_config(config: dict) -> PosteriorSpec:
    """Reconstruct the PosteriorSpec from a config snapshot, verifying
    the checksums of the referenced data files."""
    kind = ModelKind(config["model"])
    priors = PriorSpec(**config["priors"])
    data_path = config["data_path"]
    if sha256_file(data_path) != config["data_sha256"]:
        raise RunDirectoryError(f"checksum mismatch for data file {data_path}")
    catalog = load_catalog(data_path, columns=config.get("columns") or None)
    cov_path = config.get("cov_path")
    if cov_path:
        if sha256_file(cov_path) != config["cov_sha256"]:
            raise RunDirectoryError(f"checksum mismatch for covariance {cov_path}")
        sys_cov = load_covariance(cov_path)
    else:
        sys_cov = np.zeros((catalog.n, catalog.n))
    total = assemble_total_covariance(catalog, sys_cov)
    factor = cholesky_factorize(total)
    return PosteriorSpec(kind, priors, catalog, factor)


def load_run(run_dir) -> LoadedRun:
    """Reload a run directory, rebuilding spec and ChainSet."""
    run_dir = Path(run_dir)
    config_file = run_dir / CONFIG_NAME
    if not config_file.exists():
        raise RunDirectoryError(f"{run_dir} is not a run directory (no {CONFIG_NAME})")
    config = json.loads(config_file.read_text())
    spec = build_spec_from_config(config)

    meta = json.loads((run_dir / CHAIN_META_NAME).read_text())
    names = meta["param_names"]
    d = len(names)
    sampler_config = SamplerConfig(**config["sampler"])
    chains_data = []
    for c in range(sampler_config.chains):
        f = run_dir / _chain_csv_name(c)
        if not f.exists():
            raise RunDirectoryError(f"missing chain file {f}")
        table = np.genfromtxt(f, delimiter=",", names=True)
        chains_data.append(np.atleast_1d(table))
    draws = chains_data[0].shape[0]

    def column(tab, name):
        return np.asarray(tab[name], dtype=float)

    constrained = np.empty((len(chains_data), draws, d))
    unconstrained = np.empty_like(constrained)
    lp = np.empty((len(chains_data), draws))
    ll = np.empty_like(lp)
    energy = np.empty_like(lp)
    accept = np.empty_like(lp)
    divergent = np.empty(lp.shape, dtype=bool)
    depth = np.empty(lp.shape, dtype=np.int16)
    for c, tab in enumerate(chains_data):
        for j, n in enumerate(names):
            constrained[c, :, j] = column(tab, n)
            unconstrained[c, :, j] = column(tab, f"xi_{n}")
        lp[c] = column(tab, "log_posterior")
        ll[c] = column(tab, "log_likelihood")
        energy[c] = column(tab, "energy")
        accept[c] = column(tab, "accept_stat")
        divergent[c] = column(tab, "divergent").astype(bool)
        depth[c] = column(tab, "tree_depth").astype(np.int16)

    eps_trace = []
    for c in range(len(chains_data)):
        f = run_dir / _adapt_csv_name(c)
        trace = np.genfromtxt(f, delimiter=",", names=True)["step_size"] \
            if f.exists() else np.empty(0)
        eps_trace.append(np.atleast_1d(trace))

    chainset = ChainSet(
        param_names=tuple(names),
        constrained=constrained,
        unconstrained=unconstrained,
        log_posterior=lp,
        log_likelihood=ll,
        energy=energy,
        accept_stat=accept,
        divergent=divergent,
        tree_depth=depth,
        step_size=np.array([float(s) for s in meta["step_size"]]),
        mass_diag=np.array([[float(v) for v in row] for row in meta["mass_diag"]]),
        eps_trace=np.stack(eps_trace) if eps_trace else np.empty((0, 0)),
        warnings=tuple(tuple(w) for w in meta["warnings"]),
        config=sampler_config,
    )
    return LoadedRun(path=run_dir, config=config, spec=spec, chains=chainset)


def config_snapshot(kind: ModelKind, priors: PriorSpec, sampler_config: SamplerConfig,
                    data_path: str, cov_path: str | None,
                    columns: dict | None) -> dict:
    """Deterministic config.json contents for a fit."""
    snap = {
        "model": kind.value,
        "priors": asdict(priors),
        "sampler": asdict(sampler_config),
        "data_path": str(Path(data_path).resolve()),
        "data_sha256": sha256_file(data_path),
        "cov_path": str(Path(cov_path).resolve()) if cov_path else None,
        "cov_sha256": sha256_file(cov_path) if cov_path else None,
        "columns": columns or None,
    }
    return snap
