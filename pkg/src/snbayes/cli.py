"""Command-line interface.

Subcommands: fit, diagnose, compare-waic, evidence, bf, predict, simulate.
Exit codes: 0 success, 1 error, 2 completed with degraded quality (tuning
warnings or an unconverged evidence estimate).
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import diagnostics, predictive, runs, selection
from .cosmology import (
    CosmologyDomainError,
    CosmoParams,
    ModelKind,
    QuadratureError,
    RedshiftGrid,
)
from .dataset import (
    CatalogParseError,
    CovarianceFormatError,
    assemble_total_covariance,
    load_catalog,
    load_covariance,
)
from .inference import PosteriorSpec, PriorSpec
from .runs import RunDirectoryError
from .sampler import SamplerConfig, run_chains
from .whitening import NotPositiveDefiniteError, cholesky_factorize

_MODULE_OF = {
    CatalogParseError: "dataset",
    CovarianceFormatError: "dataset",
    NotPositiveDefiniteError: "whitening",
    CosmologyDomainError: "cosmology",
    QuadratureError: "cosmology",
    RunDirectoryError: "run directory",
}


def _fail(exc: Exception) -> int:
    module = next(
        (name for klass, name in _MODULE_OF.items() if isinstance(exc, klass)),
        exc.__class__.__name__,
    )
    print(f"error [{module}]: {exc}", file=sys.stderr)
    return 1


def _column_overrides(args) -> dict | None:
    mapping = {}
    for role, flag in (("z", "z_col"), ("mu", "mu_col"),
                       ("sigma_mu", "err_col"), ("id", "id_col")):
        value = getattr(args, flag, None)
        if value:
            mapping[role] = value
    return mapping or None


def _load_priors(path: str | None) -> PriorSpec:
    if not path:
        return PriorSpec()
    overrides = json.loads(Path(path).read_text())
    valid = set(PriorSpec.__dataclass_fields__)
    unknown = set(overrides) - valid
    if unknown:
        raise ValueError(
            f"unknown prior override keys {sorted(unknown)}; valid: {sorted(valid)}")
    return PriorSpec(**overrides)


def _default_out(model: str, seed: int) -> Path:
    root = Path(os.environ.get("SNBAYES_RUNS", "runs"))
    return root / f"{model}-seed{seed}"


def _build_spec(args) -> PosteriorSpec:
    priors = _load_priors(getattr(args, "prior_file", None))
    catalog = load_catalog(args.data, columns=_column_overrides(args))
    if args.cov:
        sys_cov = load_covariance(args.cov)
    else:
        sys_cov = np.zeros((catalog.n, catalog.n))
    total = assemble_total_covariance(catalog, sys_cov)
    factor = cholesky_factorize(total)
    return PosteriorSpec(ModelKind(args.model), priors, catalog, factor)


def cmd_fit(args) -> int:
    out_dir = Path(args.out) if args.out else _default_out(args.model, args.seed)
    started = time.time()
    try:
        spec = _build_spec(args)
        config = SamplerConfig(
            target_accept=args.target_accept,
            max_tree_depth=args.max_depth,
            warmup=args.warmup,
            draws=args.draws,
            chains=args.chains,
            seed=args.seed,
        )
        sampling_started = time.time()
        chains = run_chains(spec, config)
        sampling_seconds = time.time() - sampling_started
        summary = diagnostics.summarize(chains)
        moments = spec.priors.moments(spec.kind)
        pdfs = [spec.priors.marginal_pdf(spec.kind, j) for j in range(spec.kind.ndim)]
        info = diagnostics.info_rows(chains, moments, pdfs)
        pointwise = selection.pointwise_loglik(spec, chains)
        snapshot = runs.config_snapshot(
            spec.kind, spec.priors, config, args.data, args.cov,
            _column_overrides(args))
        runs.save_run(
            out_dir, snapshot, chains, summary, info, pointwise,
            timings={
                "total_seconds": f"{time.time() - started:.3f}",
                "sampling_seconds": f"{sampling_seconds:.3f}",
                "finished_unix": f"{time.time():.0f}",
            })
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        if out_dir.exists():
            shutil.rmtree(out_dir, ignore_errors=True)
        if isinstance(exc, (KeyboardInterrupt, SystemExit)):
            raise
        return _fail(exc)
    print(f"run written to {out_dir}")
    print(diagnostics.rows_to_text(summary), end="")
    if chains.has_warnings:
        for c, warns in enumerate(chains.warnings):
            for w in warns:
                print(f"warning [chain {c}]: {w}", file=sys.stderr)
        return 2
    return 0


def cmd_diagnose(args) -> int:
    try:
        run = runs.load_run(args.run)
        chains = run.chains
        summary = diagnostics.summarize(chains)
        spec = run.spec
        moments = spec.priors.moments(spec.kind)
        pdfs = [spec.priors.marginal_pdf(spec.kind, j) for j in range(spec.kind.ndim)]
        info = diagnostics.info_rows(chains, moments, pdfs)
        (run.path / "summary.csv").write_text(diagnostics.rows_to_csv(summary))
        (run.path / "summary.txt").write_text(diagnostics.rows_to_text(summary))
        (run.path / "info.csv").write_text(diagnostics.rows_to_csv(info))
        (run.path / "info.txt").write_text(diagnostics.rows_to_text(info))
    except Exception as exc:  # noqa: BLE001
        if isinstance(exc, (KeyboardInterrupt, SystemExit)):
            raise
        return _fail(exc)
    print(diagnostics.rows_to_text(summary), end="")
    print()
    print(diagnostics.rows_to_text(info), end="")
    return 0


def cmd_compare_waic(args) -> int:
    try:
        loaded = [runs.load_run(r) for r in args.runs]
        checksums = {run.data_sha256 for run in loaded}
        if len(checksums) != 1:
            raise ValueError(
                "runs use different datasets (checksum mismatch); "
                "WAIC comparison requires one shared dataset")
        reports = [
            selection.waic(run.pointwise(), name=run.config["model"])
            for run in loaded
        ]
        ranked = selection.compare_waic(reports)
        rows = [_waic_row(r) for r in ranked]
        text = diagnostics.rows_to_text(rows)
        if args.out:
            Path(args.out).write_text(diagnostics.rows_to_csv(rows))
    except Exception as exc:  # noqa: BLE001
        if isinstance(exc, (KeyboardInterrupt, SystemExit)):
            raise
        return _fail(exc)
    print(text, end="")
    return 0


def _waic_row(r):
    from dataclasses import dataclass, make_dataclass

    row_type = make_dataclass(
        "WaicRow",
        [("model", str), ("rank", int), ("elpd", float), ("p_eff", float),
         ("elpd_diff", float), ("weight", float), ("se", float), ("dse", float)],
        frozen=True,
    )
    return row_type(model=r.name, rank=r.rank, elpd=r.elpd, p_eff=r.p_eff,
                    elpd_diff=r.elpd_diff, weight=r.weight, se=r.se, dse=r.dse)


def _evidence_for(run, seed: int, cap: int, rtol: float,
                  recompute: bool) -> selection.EvidenceEstimate:
    cache = run.path / "evidence.json"
    if cache.exists() and not recompute:
        stored = json.loads(cache.read_text())
        return selection.EvidenceEstimate(**stored)
    rng = np.random.default_rng(seed)
    est = selection.bridge_evidence(run.spec, run.chains, rng, cap=cap, rtol=rtol)
    cache.write_text(json.dumps(est.__dict__, indent=2, sort_keys=True) + "\n")
    return est


def cmd_evidence(args) -> int:
    try:
        run = runs.load_run(args.run)
        est = _evidence_for(run, args.seed, args.cap, args.rtol, args.recompute)
    except Exception as exc:  # noqa: BLE001
        if isinstance(exc, (KeyboardInterrupt, SystemExit)):
            raise
        return _fail(exc)
    print(f"log marginal likelihood = {est.log_marginal:.4f}")
    print(f"relative error          = {est.relative_error:.3e}")
    print(f"iterations              = {est.iterations}")
    print(f"converged               = {est.converged}")
    return 0 if est.converged else 2


def cmd_bf(args) -> int:
    try:
        run1 = runs.load_run(args.run1)
        run2 = runs.load_run(args.run2)
        if run1.data_sha256 != run2.data_sha256:
            raise ValueError("runs use different datasets; Bayes factors require one")
        e1 = _evidence_for(run1, args.seed, args.cap, args.rtol, args.recompute)
        e2 = _evidence_for(run2, args.seed, args.cap, args.rtol, args.recompute)
        result = selection.bayes_factor(e1, e2)
    except Exception as exc:  # noqa: BLE001
        if isinstance(exc, (KeyboardInterrupt, SystemExit)):
            raise
        return _fail(exc)
    m1, m2 = run1.config["model"], run2.config["model"]
    print(f"log P(D|{m1}) = {e1.log_marginal:.4f}")
    print(f"log P(D|{m2}) = {e2.log_marginal:.4f}")
    print(f"log BF({m1},{m2}) = {result.log_bf:.4f}")
    print(f"BF({m1},{m2})     = {result.bf:.4e}")
    if result.degraded:
        print("warning: at least one evidence estimate did not converge",
              file=sys.stderr)
        return 2
    return 0


def cmd_predict(args) -> int:
    try:
        run = runs.load_run(args.run)
        lo, hi, count = args.grid.split(":")
        grid = RedshiftGrid(np.linspace(float(lo), float(hi), int(count)))
        levels = tuple(float(v) for v in args.levels.split(","))
        bands = predictive.hubble_bands(run.spec, run.chains, grid, levels=levels)
        report = predictive.residual_report(run.spec, run.chains)
        out_dir = Path(args.out) if args.out else run.path / "predict"
        out_dir.mkdir(parents=True, exist_ok=True)
        for level in levels:
            lo_band, hi_band = bands["bands"][level]
            _write_csv(
                out_dir / f"band_{level:g}.csv",
                ["z", "lo", "mean", "hi"],
                np.column_stack([bands["z"], lo_band, bands["mean_curve"], hi_band]),
            )
        _write_csv(
            out_dir / "residuals.csv",
            ["z", "raw", "whitened"],
            np.column_stack([report.z, report.raw, report.whitened]),
        )
        _write_csv(
            out_dir / "qq.csv",
            ["theoretical", "empirical"],
            np.column_stack([report.qq_theoretical, report.qq_empirical]),
        )
    except Exception as exc:  # noqa: BLE001
        if isinstance(exc, (KeyboardInterrupt, SystemExit)):
            raise
        return _fail(exc)
    print(f"predictive outputs written to {out_dir}")
    return 0


def _write_csv(path: Path, header: list[str], rows: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in np.atleast_2d(rows):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _parse_params(model: ModelKind, text: str) -> CosmoParams:
    fields = {}
    for item in text.split(","):
        key, _, value = item.partition("=")
        key = key.strip().lower()
        if key not in ("h0", "omega_m", "w", "w0", "wa"):
            raise ValueError(f"unknown parameter {key!r} in --params")
        fields[key] = float(value)
    missing = [n for n in model.param_names if n not in fields]
    if missing:
        raise ValueError(f"{model.value} requires parameters {missing}")
    extra = set(fields) - set(model.param_names)
    if extra:
        raise ValueError(f"{model.value} does not take parameters {sorted(extra)}")
    return CosmoParams(**fields)


def cmd_simulate(args) -> int:
    try:
        model = ModelKind(args.model)
        params = _parse_params(model, args.params)
        template = load_catalog(args.data_template, columns=_column_overrides(args))
        if args.cov:
            sys_cov = load_covariance(args.cov)
        else:
            sys_cov = np.zeros((template.n, template.n))
        total = assemble_total_covariance(template, sys_cov)
        factor = cholesky_factorize(total)
        rng = np.random.default_rng(args.seed)
        mu_obs = predictive.simulate_catalog(
            model, params, template.z, factor, rng, zero_noise=args.zero_noise)
        out = Path(args.out)
        with open(out, "w", newline="") as fh:
            fh.write("CID,zHD,MU,MUERR_FINAL\n")
            for i in range(template.n):
                fh.write(
                    f"{template.ids[i]},{repr(float(template.z[i]))},"
                    f"{repr(float(mu_obs[i]))},{repr(float(template.sigma_mu[i]))}\n")
    except Exception as exc:  # noqa: BLE001
        if isinstance(exc, (KeyboardInterrupt, SystemExit)):
            raise
        return _fail(exc)
    print(f"synthetic catalog written to {out}")
    return 0


def _add_column_flags(parser):
    parser.add_argument("--z-col", help="redshift column name (default zHD)")
    parser.add_argument("--mu-col", help="distance-modulus column (default MU)")
    parser.add_argument("--err-col", help="modulus-error column (default MUERR_FINAL)")
    parser.add_argument("--id-col", help="identifier column (default CID)")


def _add_evidence_flags(parser):
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--cap", type=int, default=1000,
                        help="max bridge iterations")
    parser.add_argument("--rtol", type=float, default=1e-10,
                        help="bridge convergence tolerance")
    parser.add_argument("--recompute", action="store_true",
                        help="ignore any cached evidence.json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snbayes",
        description="Bayesian dark-energy model fits to supernova distance moduli",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="sample a model posterior and persist the run")
    fit.add_argument("--model", required=True, choices=[k.value for k in ModelKind])
    fit.add_argument("--data", required=True, help="catalog CSV path")
    fit.add_argument("--cov", help="systematic covariance path (text matrix)")
    fit.add_argument("--chains", type=int, default=4)
    fit.add_argument("--warmup", type=int, default=1000)
    fit.add_argument("--draws", type=int, default=9000)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--target-accept", type=float, default=0.8)
    fit.add_argument("--max-depth", type=int, default=10)
    fit.add_argument("--out", help="run directory (default $SNBAYES_RUNS/<model>-seed<seed>)")
    fit.add_argument("--prior-file", help="JSON file of prior hyperparameter overrides")
    _add_column_flags(fit)
    fit.set_defaults(func=cmd_fit)

    diag = sub.add_parser("diagnose", help="summary and prior/posterior tables for a run")
    diag.add_argument("run")
    diag.set_defaults(func=cmd_diagnose)

    comp = sub.add_parser("compare-waic", help="ranked WAIC table across runs")
    comp.add_argument("runs", nargs="+")
    comp.add_argument("--out", help="also write the table as CSV here")
    comp.set_defaults(func=cmd_compare_waic)

    evid = sub.add_parser("evidence", help="bridge-sampling marginal likelihood of a run")
    evid.add_argument("run")
    _add_evidence_flags(evid)
    evid.set_defaults(func=cmd_evidence)

    bf = sub.add_parser("bf", help="Bayes factor between two runs")
    bf.add_argument("run1")
    bf.add_argument("run2")
    _add_evidence_flags(bf)
    bf.set_defaults(func=cmd_bf)

    pred = sub.add_parser("predict", help="Hubble-diagram bands and residual tables")
    pred.add_argument("run")
    pred.add_argument("--grid", default="0.01:1.4:200", help="lo:hi:count")
    pred.add_argument("--levels", default="0.68,0.95")
    pred.add_argument("--out", help="output directory (default RUN/predict)")
    pred.set_defaults(func=cmd_predict)

    sim = sub.add_parser("simulate", help="synthetic catalog at fixed parameters")
    sim.add_argument("--model", required=True, choices=[k.value for k in ModelKind])
    sim.add_argument("--params", required=True,
                     help="comma list, e.g. h0=70,omega_m=0.3")
    sim.add_argument("--data-template", required=True,
                     help="catalog whose z grid and errors are reused")
    sim.add_argument("--cov", help="systematic covariance for the noise model")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--zero-noise", action="store_true")
    sim.add_argument("--out", required=True, help="output catalog CSV")
    _add_column_flags(sim)
    sim.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
