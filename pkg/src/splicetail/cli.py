"""Command-line interface.

Exit codes: 0 success, 2 input error, 3 convergence or replicate failure,
4 validation failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .estimate import CensoringSpec, EstimationError, PotThreshold, fit_pot, fit_splice
from .inference import attach_covariance, default_tau_grid, pit_residuals, adm_statistic, select_tau
from .pareto import validate_pareto
from .panel import LinkConfig, PanelError, read_panel_csv, write_panel_csv
from .quantreg import QuantRegError
from .simulate import ArParams, DgpSpec, McConfig, default_workers, generate, replicate_rng, run_mc

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_CONVERGENCE, EXIT_VALIDATION = 0, 2, 3, 4

log = logging.getLogger("splicetail")


class InputError(Exception):
    pass


def _writable(path) -> Path:
    p = Path(path)
    if p.parent and not p.parent.exists():
        raise InputError(f"output directory does not exist: {p.parent}")
    if p.exists() and p.is_dir():
        raise InputError(f"output path is a directory: {p}")
    return p


def _dump_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def _dgp_spec(args) -> DgpSpec:
    ar = ArParams(noise=args.noise)
    return DgpSpec.dgp(args.dgp, T=args.T, I=args.I, c=args.contamination, ar=ar)


# ----------------------------------------------------------------- subcommands


def cmd_simulate(args) -> int:
    out = _writable(args.out)
    sidecar = _writable(out.with_suffix(".json"))
    spec = _dgp_spec(args)
    panel = generate(spec, replicate_rng(args.seed, 0))
    write_panel_csv(panel, out)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "config": _config(args),
        "spec": spec.to_dict(),
        "xi_truth": spec.xi_truth().tolist(),
        "n": panel.n,
        "notes": list(panel.meta.get("notes", [])),
    }
    if "t_star" in panel.meta:
        meta["t_star"] = panel.meta["t_star"]
    _dump_json(meta, sidecar)
    log.info("wrote %d rows to %s", panel.n, out)
    return EXIT_OK


def _stars(p):
    return "**" if p < 0.01 else "*" if p < 0.05 else ""


def _fit_payload(fit, panel, level=0.95) -> dict:
    from scipy.stats import norm

    se = fit.std_errors()
    ci = fit.conf_int(level)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = fit.theta_hat / se
    pvals = 2.0 * norm.sf(np.abs(z))
    coefs = []
    for i, nm in enumerate(fit.names):
        coefs.append(
            {
                "name": nm,
                "estimate": fit.theta_hat[i],
                "se": se[i],
                "ci_lo": ci[i, 0],
                "ci_hi": ci[i, 1],
                "p_value": pvals[i] if np.isfinite(pvals[i]) else None,
                "stars": _stars(pvals[i]) if np.isfinite(pvals[i]) else "",
            }
        )
    cens = fit.censoring
    if isinstance(cens, CensoringSpec):
        cens_d = cens.to_dict()
    elif isinstance(cens, PotThreshold):
        cens_d = {"kind": cens.kind, "level": cens.level, "degree": cens.degree}
    else:
        cens_d = None
    return {
        "model": fit.model,
        "names": fit.names,
        "theta_hat": fit.theta_hat,
        "coefficients": coefs,
        "vcv": fit.vcv,
        "vcv_kind": fit.vcv_kind,
        "ci_level": level,
        "censoring": cens_d,
        "tau": cens.tau if isinstance(cens, CensoringSpec) and cens.mode != "none" else None,
        "adm": fit.adm,
        "n_obs": fit.n_obs,
        "convergence": {
            "converged": fit.converged,
            "iterations": fit.iterations,
            "grad_max": fit.grad_max,
            "loglik": fit.loglik,
        },
        "notes": fit.notes,
    }


def _read_panel(args):
    cols = args.covariates.split(",") if args.covariates else None
    return read_panel_csv(args.input, cols)


def cmd_fit(args) -> int:
    panel = _read_panel(args)
    cfg = LinkConfig.full(panel.d)
    if args.out:
        _writable(args.out)
    extra = {}
    if args.method in ("pot", "cpot"):
        kind = "conditional" if args.method == "cpot" else args.threshold_kind
        fit = fit_pot(panel, cfg, PotThreshold(kind, args.threshold_level, args.pot_degree))
        attach_covariance(fit, panel, args.cov or "hessian")
    else:
        if args.method != "mle" and args.tau is None:
            mode = "unconditional" if args.method == "wmle" else "conditional"
            sel = select_tau(panel, cfg, mode, degree=args.degree)
            extra["tau_selection"] = {"grid": sel.grid, "adm": sel.adm_scores, "tau_opt": sel.tau_opt, "skipped": sel.skipped}
            fit = sel.best_fit
        else:
            if args.method == "mle":
                cens = CensoringSpec.none()
            elif args.method == "wmle":
                cens = CensoringSpec.unconditional(panel, args.tau)
            else:
                cens = CensoringSpec.conditional(panel, args.tau, args.degree)
            fit = fit_splice(panel, cfg, cens)
            fit.adm = adm_statistic(pit_residuals(fit.theta_hat, panel, cfg))
        attach_covariance(fit, panel, args.cov or ("hessian" if args.method == "mle" else "sandwich"))
    payload = {"schema_version": SCHEMA_VERSION, "config": _config(args), "method": args.method, **_fit_payload(fit, panel), **extra}
    _dump_json(payload, args.out)
    if not fit.converged:
        log.error("optimizer did not converge (gradient max-norm %.3g)", fit.grad_max)
        return EXIT_CONVERGENCE
    return EXIT_OK


def cmd_select_tau(args) -> int:
    panel = _read_panel(args)
    for p in (args.out, args.curve):
        if p:
            _writable(p)
    grid = np.linspace(args.grid_min, args.grid_max, args.grid_points)
    try:
        sel = select_tau(panel, LinkConfig.full(panel.d), args.censor_kind, grid, degree=args.degree)
    except EstimationError as exc:
        log.error("%s", exc)
        return EXIT_CONVERGENCE
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config": _config(args),
        "grid": sel.grid,
        "adm": [None if np.isnan(a) else a for a in sel.adm_scores],
        "tau_opt": sel.tau_opt,
        "skipped": sel.skipped,
        "best_theta": sel.best_fit.theta_hat,
        "names": sel.best_fit.names,
    }
    _dump_json(payload, args.out)
    if args.curve:
        with open(args.curve, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tau", "adm"])
            for t, a in zip(sel.grid, sel.adm_scores):
                w.writerow([repr(float(t)), "" if np.isnan(a) else repr(float(a))])
    return EXIT_OK


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_mc(args) -> int:
    out_dir = Path(args.out_dir)
    if not out_dir.is_dir():
        raise InputError(f"output directory does not exist: {out_dir}")
    estimators = tuple(e.strip().lower() for e in args.estimators.split(",") if e.strip())
    spec = _dgp_spec(args)
    cfg = McConfig(
        estimators=estimators,
        B=args.B,
        seed=args.seed,
        tau=args.tau,
        cwmle_degree=args.degree,
        workers=args.workers,
    )
    t0 = time.perf_counter()

    def progress(rec):
        log.info("replicate %d done (%.0fs)", rec["replicate"], time.perf_counter() - t0)

    report = run_mc(spec, cfg, progress=progress)
    _dump_json({"schema_version": SCHEMA_VERSION, "config": _config(args), **report.to_dict()}, out_dir / "report.json")
    rows = list(report.rows())
    _write_csv(
        out_dir / "coverage.csv",
        ["estimator", "coefficient", "truth", "coverage", "median_length"],
        [[r["estimator"], r["coefficient"], r["truth"], r.get("coverage"), r.get("median_length")] for r in rows],
    )
    _write_csv(
        out_dir / "bias.csv",
        ["estimator", "coefficient", "truth", "bias", "rmse"],
        [[r["estimator"], r["coefficient"], r["truth"], r.get("bias"), r.get("rmse")] for r in rows],
    )
    _write_csv(
        out_dir / "timing.csv",
        ["estimator", "seconds", "n_ok", "n_failed", "n_inference"],
        [[k, v["seconds"], v["n_ok"], v["n_failed"], v["n_inference"]] for k, v in report.table.items()],
    )
    if args.raw:
        raw = []
        for rep in report.replicates:
            for label, rec in rep["estimators"].items():
                for j in range(len(report.truth)):
                    raw.append(
                        [rep["replicate"], label, f"beta_xi_{j}", rec.get("ok"), rec.get("inference_ok", False),
                         rec["estimate"][j] if "estimate" in rec else "",
                         rec["se"][j] if "se" in rec else "",
                         rec["ci_lo"][j] if "ci_lo" in rec else "",
                         rec["ci_hi"][j] if "ci_hi" in rec else "",
                         rec.get("tau") if rec.get("tau") is not None else "",
                         rec["seconds"], rec.get("error", "")]
                    )
        _write_csv(out_dir / "replicates.csv",
                   ["replicate", "estimator", "coefficient", "ok", "inference_ok", "estimate", "se", "ci_lo", "ci_hi", "tau", "seconds", "error"], raw)
    worst = max(v["n_failed"] for v in report.table.values()) / cfg.B
    if worst > 0.10:
        log.error("%.0f%% of replicates failed for at least one estimator", 100 * worst)
        return EXIT_CONVERGENCE
    return EXIT_OK


def cmd_validate_pareto(args) -> int:
    if args.out:
        _writable(args.out)
    checks = validate_pareto(args.seed, xi0=args.xi0, tau=args.tau, n=args.n, runs=args.runs, tol=args.tol)
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: value={c['value']:.6g} target={c['target']:.6g}")
    if args.out:
        _dump_json({"schema_version": SCHEMA_VERSION, "config": _config(args), "checks": checks}, args.out)
    return EXIT_OK if all(c["passed"] for c in checks) else EXIT_VALIDATION


# --------------------------------------------------------------------- parser


def _add_dgp_flags(p):
    p.add_argument("--dgp", type=int, choices=(1, 2, 3), default=1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--T", type=int, default=250, help="time periods")
    p.add_argument("--I", type=int, default=40, help="entities per period")
    p.add_argument("--contamination", type=float, default=0.10, help="DGP II contaminated fraction")
    p.add_argument("--noise", choices=("std", "variance"), default="std", help="reading of the AR(1) noise scale")


def _add_input_flags(p):
    p.add_argument("--input", required=True, help="panel CSV with entity,time,y and covariates")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    p.add_argument("--degree", type=int, default=1, help="quantile regression degree for conditional censoring")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="splicetail", description="Spliced Gaussian-exponential-GPD tail regression.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a panel from one of the DGPs")
    _add_dgp_flags(p)
    p.add_argument("--out", required=True, help="CSV path; a .json sidecar is written next to it")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the splice model or a POT baseline")
    _add_input_flags(p)
    p.add_argument("--method", choices=("mle", "wmle", "cwmle", "pot", "cpot"), required=True)
    p.add_argument("--tau", type=float, help="censoring level; omitted for wmle/cwmle selects it by AD^m")
    p.add_argument("--threshold-level", type=float, default=0.95)
    p.add_argument("--threshold-kind", choices=("unconditional", "conditional"), default="unconditional")
    p.add_argument("--pot-degree", type=int, default=2, help="quantile regression degree for conditional POT thresholds")
    p.add_argument("--cov", choices=("sandwich", "hessian"), help="covariance estimator override")
    p.add_argument("--out", help="result JSON (default stdout)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select-tau", help="choose the censoring level by AD^m")
    _add_input_flags(p)
    p.add_argument("--censor-kind", choices=("unconditional", "conditional"), default="unconditional")
    g = default_tau_grid()
    p.add_argument("--grid-min", type=float, default=float(g[0]))
    p.add_argument("--grid-max", type=float, default=float(g[-1]))
    p.add_argument("--grid-points", type=int, default=g.size)
    p.add_argument("--out", help="selection JSON (default stdout)")
    p.add_argument("--curve", help="CSV of (tau, AD^m)")
    p.set_defaults(func=cmd_select_tau)

    p = sub.add_parser("mc", help="Monte Carlo campaign")
    _add_dgp_flags(p)
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--estimators", default="wmle,mle,pot90")
    p.add_argument("--tau", type=float, help="fixed censoring level instead of AD^m selection")
    p.add_argument("--degree", type=int, default=1, help="quantile regression degree for CWMLE")
    p.add_argument("--workers", type=int, default=default_workers(), help="process count (env SPLICETAIL_WORKERS)")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--raw", action="store_true", help="also write per-replicate rows")
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("validate", help="closed-form validation suites")
    vsub = p.add_subparsers(dest="suite", required=True)
    v = vsub.add_parser("pareto", help="censored Pareto likelihood checks")
    v.add_argument("--seed", type=int, required=True)
    v.add_argument("--xi0", type=float, default=0.5)
    v.add_argument("--tau", type=float, default=0.3)
    v.add_argument("--n", type=int, default=100_000)
    v.add_argument("--runs", type=int, default=500)
    v.add_argument("--tol", type=float, default=0.05)
    v.add_argument("--out", help="validation JSON")
    v.set_defaults(func=cmd_validate_pareto)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InputError, PanelError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (EstimationError, QuantRegError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
