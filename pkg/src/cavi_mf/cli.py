"""Command-line front end.

    cavi-mf run --config cfg.json --out DIR
    cavi-mf verify --report DIR/report.json --kinds monotone,exponential,w2lower
    cavi-mf regress --data data.csv --sigma 1 --prior gaussian --out DIR

Exit codes: 0 success (converged / all certificates pass), 1 configuration
or I/O error, 2 sweep budget exhausted without convergence, 3 a certificate
failed, 4 parallel sweeps diverged.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

import numpy as np

from . import diagnostics, jsonio
from .engine import (
    FromFile,
    GaussianState,
    NarrowAtPoint,
    RunReport,
    StandardGaussian,
    SweepSchedule,
    init_gaussian_state,
    init_state,
    solve,
)
from .errors import CaviError, ParseError
from .marginal import DEFAULT_NODES, ProductState, gaussian_marginal, quantile, save_state
from .potentials import (
    PRIORS,
    make_quadratic,
    make_regression,
    regression_as_quadratic,
)

log = logging.getLogger("cavi_mf")

EXIT_OK, EXIT_ERROR, EXIT_MAX_SWEEPS, EXIT_CERT_FAIL, EXIT_DIVERGED = 0, 1, 2, 3, 4
PRIOR_ALIASES = {"custom": "double_well"}


@dataclass
class RunConfig:
    target: dict
    backend: str = "grid"
    n_nodes: int = DEFAULT_NODES
    schedule: SweepSchedule = field(default_factory=SweepSchedule)
    init: dict = field(default_factory=lambda: {"kind": "standard_gaussian"})
    report_name: str = "report.json"
    state_name: str = "state.json"
    record_half_sweeps: bool = False
    base_dir: str = "."
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, obj: dict, base_dir: str = ".") -> "RunConfig":
        if not isinstance(obj, dict) or "target" not in obj:
            raise ParseError("config must be a JSON object with a 'target' entry")
        target = obj["target"]
        ttype = target.get("type")
        if ttype not in ("quadratic", "regression"):
            raise ParseError(f"unknown target type {ttype!r}")
        backend = obj.get("backend", {"type": "grid"})
        btype = backend.get("type", "grid")
        if btype not in ("grid", "gaussian"):
            raise ParseError(f"unknown backend {btype!r}")
        if btype == "gaussian" and ttype == "regression":
            prior = target.get("prior", {}).get("name", "gaussian")
            if prior != "gaussian":
                raise ParseError("the gaussian backend needs a quadratic target or a gaussian prior")
        sched = obj.get("schedule", {})
        try:
            schedule = SweepSchedule(
                mode=sched.get("mode", "sequential"),
                sweeps=int(sched.get("sweeps", 200)),
                tol=float(sched.get("tol", 1e-8)),
            )
        except (TypeError, ValueError) as exc:
            raise ParseError(f"bad schedule: {exc}") from exc
        if ttype == "regression":
            path = os.path.join(base_dir, target.get("data_path", ""))
            if not os.path.isfile(path):
                raise ParseError(f"data file not found: {path}")
        out = obj.get("output", {})
        return cls(
            target=target,
            backend=btype,
            n_nodes=int(backend.get("n_nodes", DEFAULT_NODES)),
            schedule=schedule,
            init=obj.get("init", {"kind": "standard_gaussian"}),
            report_name=out.get("report", "report.json"),
            state_name=out.get("state", "state.json"),
            record_half_sweeps=bool(obj.get("record_half_sweeps", False)),
            base_dir=base_dir,
            raw=obj,
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            obj = jsonio.load_file(path)
        except ValueError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(obj, os.path.dirname(os.path.abspath(path)))


def _all_numeric(line):
    try:
        [float(v) for v in line.split(",")]
    except ValueError:
        return False
    return True


def read_regression_csv(path):
    """First column y, remaining columns the features; a header row is required."""
    with open(path) as fh:
        header = fh.readline()
        if not header.strip():
            raise ParseError(f"{path}: empty file")
        if _all_numeric(header):
            raise ParseError(f"{path}: first line must be a header row")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: no data rows")
    width = len(rows[0])
    if width < 2 or any(len(r) != width for r in rows):
        raise ParseError(f"{path}: need a response column and at least one feature, equal widths")
    data = np.array(rows)
    if not np.all(np.isfinite(data)):
        raise ParseError(f"{path}: non-finite values")
    return data[:, 0], data[:, 1:]


def _make_prior(spec: dict):
    name = PRIOR_ALIASES.get(spec.get("name", "gaussian"), spec.get("name", "gaussian"))
    if name not in PRIORS:
        raise ParseError(f"unknown prior {name!r}; choose from {sorted(PRIORS)} or 'custom'")
    return PRIORS[name](**spec.get("params", {}))


def build_potential(cfg: RunConfig):
    t = cfg.target
    if t["type"] == "quadratic":
        try:
            return make_quadratic(t["A"], t["m"], offset=float(t.get("offset", 0.0)))
        except KeyError as exc:
            raise ParseError(f"quadratic target needs {exc}") from exc
    y, X = read_regression_csv(os.path.join(cfg.base_dir, t["data_path"]))
    sigma = float(t.get("sigma", 1.0))
    prior_spec = t.get("prior", {"name": "gaussian"})
    if cfg.backend == "gaussian":
        scale = float(prior_spec.get("params", {}).get("scale", 1.0))
        return regression_as_quadratic(y, X, sigma, scale)
    return make_regression(y, X, sigma, _make_prior(prior_spec))


def build_init(cfg: RunConfig, p):
    kind = cfg.init.get("kind", "standard_gaussian")
    if cfg.backend == "gaussian":
        if kind == "standard_gaussian":
            return init_gaussian_state(p)
        if kind in ("narrow", "point"):
            return init_gaussian_state(p, means=cfg.init["point"])
        if kind == "gaussian":
            return GaussianState(cfg.init["means"], cfg.init.get("variances", np.ones(p.d)))
        raise ParseError(f"init kind {kind!r} is not available for the gaussian backend")
    if kind == "standard_gaussian":
        return init_state(p, StandardGaussian(), cfg.n_nodes)
    if kind in ("narrow", "point"):
        return init_state(p, NarrowAtPoint(tuple(cfg.init["point"]),
                                            float(cfg.init.get("halfwidth", 1.0))), cfg.n_nodes)
    if kind == "file":
        path = os.path.join(cfg.base_dir, cfg.init["path"])
        if not os.path.isfile(path):
            raise ParseError(f"state file not found: {path}")
        return init_state(p, FromFile(path), cfg.n_nodes)
    if kind == "gaussian":
        means = np.asarray(cfg.init["means"], dtype=float)
        variances = np.asarray(cfg.init.get("variances", np.ones(p.d)), dtype=float)
        if means.shape != (p.d,) or variances.shape != (p.d,):
            raise ParseError(f"gaussian init needs {p.d} means and variances")
        return ProductState(tuple(gaussian_marginal(float(m), float(np.sqrt(v)), cfg.n_nodes)
                                  for m, v in zip(means, variances)))
    raise ParseError(f"unknown init kind {kind!r}")


def _timestamp():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_outputs(report: RunReport, out_dir, report_name="report.json", state_name="state.json"):
    os.makedirs(out_dir, exist_ok=True)
    final = report.final_state
    if hasattr(final, "marginals"):
        save_state(final, os.path.join(out_dir, state_name))
    else:
        jsonio.dump_file(final.to_dict(), os.path.join(out_dir, state_name))
    obj = report.to_dict(final_state_path=state_name, timestamp=_timestamp())
    path = os.path.join(out_dir, report_name)
    jsonio.dump_file(obj, path)
    return path


def _exit_for(report: RunReport) -> int:
    if report.diverged:
        return EXIT_DIVERGED
    return EXIT_OK if report.converged else EXIT_MAX_SWEEPS


def cmd_run(config_path, out_dir) -> int:
    cfg = RunConfig.load(config_path)
    p = build_potential(cfg)
    init = build_init(cfg, p)
    report = solve(p, init, cfg.schedule, record_half_sweeps=cfg.record_half_sweeps, config=cfg.raw)
    path = write_outputs(report, out_dir, cfg.report_name, cfg.state_name)
    print(f"{report.termination} after {report.n_sweeps} sweeps "
          f"(residual {report.records[-1].residual:.3e}); report: {path}")
    return _exit_for(report)


def cmd_verify(report_path, kinds, lam=None, lipschitz=None, out=None) -> int:
    try:
        obj = jsonio.load_file(report_path)
    except ValueError as exc:
        raise ParseError(f"{report_path}: invalid JSON ({exc})") from exc
    report = RunReport.from_dict(obj)
    kinds = [k.strip() for k in kinds if k.strip()]
    if not kinds:
        raise ParseError("no certificate kinds requested")
    try:
        kinds = [diagnostics.CertKind(k) for k in kinds]
    except ValueError as exc:
        raise ParseError(str(exc)) from exc
    certs = [diagnostics.rate_certificate(report, k, lam=lam, lipschitz=lipschitz) for k in kinds]
    for c in certs:
        print(c.summary())
    out = out or os.path.join(os.path.dirname(os.path.abspath(report_path)), "certificates.json")
    jsonio.dump_file({
        "report": os.path.abspath(report_path),
        "all_pass": all(c.passed for c in certs),
        "certificates": [c.to_dict() for c in certs],
    }, out)
    return EXIT_OK if all(c.passed for c in certs) else EXIT_CERT_FAIL


def posterior_summary(state, p):
    rows = []
    for i, mu in enumerate(state.marginals):
        rows.append({
            "index": i,
            "mean": mu.mean(),
            "std": mu.std(),
            "q05": quantile(mu, 0.05),
            "q95": quantile(mu, 0.95),
        })
    return {"lambda": p.lam, "lipschitz": p.lipschitz, "coefficients": rows}


def cmd_regress(data_csv, sigma, prior, out_dir, prior_params=None,
                n_nodes=DEFAULT_NODES, sweeps=200, tol=1e-8) -> int:
    if not sigma > 0:
        raise ParseError(f"sigma must be positive, got {sigma}")
    y, X = read_regression_csv(data_csv)
    prior_spec = {"name": prior, "params": dict(prior_params or {})}
    p = make_regression(y, X, sigma, _make_prior(prior_spec))
    config = {
        "target": {"type": "regression", "data_path": os.path.abspath(data_csv),
                   "sigma": sigma, "prior": prior_spec},
        "backend": {"type": "grid", "n_nodes": n_nodes},
        "schedule": {"mode": "sequential", "sweeps": sweeps, "tol": tol},
    }
    report = solve(p, init_state(p, StandardGaussian(), n_nodes), SweepSchedule(sweeps=sweeps, tol=tol),
                   config=config)
    write_outputs(report, out_dir)
    summary = posterior_summary(report.final_state, p)
    jsonio.dump_file(summary, os.path.join(out_dir, "summary.json"))
    for row in summary["coefficients"]:
        print(f"beta[{row['index']}]: mean {row['mean']:.6g} std {row['std']:.4g} "
              f"90% [{row['q05']:.4g}, {row['q95']:.4g}]")
    return _exit_for(report)


def _param_pairs(values):
    out = {}
    for item in values or []:
        key, _, val = item.partition("=")
        if not _:
            raise ParseError(f"prior parameter {item!r} must look like name=value")
        out[key] = float(val)
    return out


def build_parser():
    parser = argparse.ArgumentParser(prog="cavi-mf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a solve from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)

    ver = sub.add_parser("verify", help="check rate certificates on a report")
    ver.add_argument("--report", required=True)
    ver.add_argument("--kinds", required=True,
                     help="comma list of: " + ",".join(k.value for k in diagnostics.CertKind))
    ver.add_argument("--lambda", dest="lam", type=float)
    ver.add_argument("--lipschitz", type=float)
    ver.add_argument("--out", help="certificates JSON path (default: next to the report)")

    reg = sub.add_parser("regress", help="mean-field posterior for Bayesian linear regression")
    reg.add_argument("--data", required=True)
    reg.add_argument("--sigma", required=True, type=float)
    reg.add_argument("--prior", default="gaussian", choices=["gaussian", "custom", "double_well"])
    reg.add_argument("--prior-param", action="append", metavar="NAME=VALUE",
                     help="e.g. scale=2 (gaussian) or c=1.5 (custom)")
    reg.add_argument("--out", required=True)
    reg.add_argument("--n-nodes", type=int, default=DEFAULT_NODES)
    reg.add_argument("--sweeps", type=int, default=200)
    reg.add_argument("--tol", type=float, default=1e-8)
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args.config, args.out)
        if args.command == "verify":
            return cmd_verify(args.report, args.kinds.split(","), args.lam, args.lipschitz, args.out)
        return cmd_regress(args.data, args.sigma, args.prior, args.out,
                           _param_pairs(args.prior_param), args.n_nodes, args.sweeps, args.tol)
    except (CaviError, OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
