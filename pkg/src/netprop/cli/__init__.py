"""Command line interface: ``netprop {simulate,estimate,balance,mc,diagnose}``.

Exit codes: 0 on success, 1 on invalid input or configuration, 2 on a
numerical failure (or a failed diagnostic). Errors are also written to
stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy
from scipy import stats

from .. import __version__
from ..checks import CHECKERS, run_checks
from ..dgp import DgpConfig, simulate
from ..errors import NetpropError, NumericalError, ValidationError
from ..estimator import (
    COEF_NAMES,
    ESTIMANDS,
    EstimatorOptions,
    estimate_tau,
    fit_theta,
    placebo_balance,
    prepare,
)
from ..experiments import mc_designs
from ..montecarlo import McConfig, run_mc, write_rows_csv
from .io import load_panel, panel_columns, read_truth, write_panel, write_truth

__all__ = ["ModelConfig", "main", "run_cli", "load_panel", "stars"]


@dataclass(frozen=True)
class ModelConfig:
    """Estimation settings read from a JSON config file."""

    covariates: tuple[str, ...] | None = None
    group_covariates: tuple[str, ...] | None = None
    exposure: str = "share"
    quad_order: int = 9
    random_effects: bool = False
    tol_grad: float = 1e-6
    max_iter: int = 500
    starts: int = 5
    seed: int = 0
    drop_isolated: bool = True
    clamp: tuple[float, float] = (1e-4, 1 - 1e-4)
    max_trim_frac: float = 0.05
    estimand: str = "ATE"
    cluster: str = "group"

    def __post_init__(self):
        if self.exposure != "share":
            raise ValidationError("only the treated-friend share exposure is supported")
        if self.quad_order < 3 or self.quad_order % 2 == 0:
            raise ValidationError("quad_order must be odd and at least 3")
        if self.estimand not in ESTIMANDS:
            raise ValidationError(f"estimand must be one of {ESTIMANDS}")
        if self.cluster != "group":
            raise ValidationError("standard errors are clustered by group only")
        if not self.drop_isolated:
            raise ValidationError("isolated nodes have no exposure share and must be dropped")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown model config keys: {sorted(unknown)}")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)

    def options(self) -> EstimatorOptions:
        return EstimatorOptions(quad_order=self.quad_order, random_effects=self.random_effects,
                                tol_grad=self.tol_grad, max_iter=self.max_iter,
                                starts=self.starts, seed=self.seed, clamp=tuple(self.clamp),
                                max_trim_frac=self.max_trim_frac)


def stars(p: float) -> str:
    if not np.isfinite(p):
        return ""
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""


def _coef_rows(names, coef, se) -> list[dict]:
    rows = []
    for name, b, s in zip(names, coef, se):
        z = b / s if s > 0 else math.nan
        p = float(2 * stats.norm.sf(abs(z))) if np.isfinite(z) else math.nan
        rows.append({"name": name, "coef": float(b), "se": float(s), "z": float(z), "p": p,
                     "stars": stars(p)})
    return rows


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def dump_json(obj, path) -> None:
    text = json.dumps(_clean(obj), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _hash_dir(directory: Path, names) -> str:
    h = hashlib.sha256()
    for name in names:
        p = directory / name
        if p.is_file():
            h.update(name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def _provenance(config: dict, seed, data_hash: str | None = None) -> dict:
    blob = json.dumps(_clean(config), sort_keys=True).encode()
    out = {"config_hash": hashlib.sha256(blob).hexdigest(), "seed": seed,
           "versions": {"netprop": __version__, "numpy": np.__version__,
                        "scipy": scipy.__version__, "python": platform.python_version()}}
    if data_hash:
        out["data_hash"] = data_hash
    return out


def _read_json(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"{path}: missing config file") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None


# ------------------------------------------------------------------ commands

def cmd_simulate(args) -> int:
    if args.design:
        designs = {"confounded": None}
        designs.update({k: v.dgp for k, v in mc_designs(1).items()})
        if args.design not in designs:
            raise ValidationError(f"unknown design {args.design!r}; choose from {sorted(designs)}")
        cfg = designs[args.design] or DgpConfig()
    else:
        cfg = DgpConfig.from_dict(_read_json(args.config))
    if args.groups:
        cfg = cfg.replace(num_groups=args.groups)
    sim = simulate(cfg, args.seed)
    out = Path(args.out)
    write_panel(sim.panel, out)
    write_truth(sim, out)
    dump_json({"dgp": cfg.to_dict(), "seed": args.seed, "tau_target": sim.tau_target,
               "provenance": _provenance(cfg.to_dict(), args.seed)}, out / "meta.json")
    print(f"wrote {sim.panel.num_groups} groups, {sim.panel.num_nodes} nodes to {out}")
    return 0


def _load_for_model(args):
    model = ModelConfig.from_dict(_read_json(args.config))
    if args.seed is not None:
        model = ModelConfig.from_dict({**asdict(model), "seed": args.seed})
    data = Path(args.data)
    panel = load_panel(data, model.covariates, model.group_covariates)
    avail_c, avail_psi = panel_columns(data)
    cov_names = list(model.covariates) if model.covariates is not None else avail_c
    psi_names = list(model.group_covariates) if model.group_covariates is not None else avail_psi
    extra = None
    if getattr(args, "exact_scores", None):
        truth = read_truth(args.exact_scores, panel)
        extra = {"p_d": truth["p_d"], "p_f": truth["p_f"]}
    sample = prepare(panel, extra)
    data_hash = _hash_dir(data, ("groups.csv", "nodes.csv", "edges.csv"))
    return model, sample, cov_names, psi_names, data_hash


def estimate_report(model: ModelConfig, sample, cov_names, psi_names, exact: bool,
                    data_hash: str | None = None) -> dict:
    """Fit and estimate; returns the report dictionary written by ``estimate``."""
    opts = model.options()
    report: dict = {}
    if exact:
        scores = (sample.extra["p_d"], sample.extra["p_f"])
        fit = None
        est = estimate_tau(sample, None, opts, model.estimand, scores)
    else:
        fit = fit_theta(sample, None, opts)
        est = estimate_tau(sample, fit.theta_hat, opts, model.estimand)
        labels = fit.theta_hat.labels(opts.random_effects, cov_names, psi_names)
        theta_se = np.sqrt(np.clip(np.diag(est.vcov)[:est.theta_dim], 0, None))
        report["theta"] = _coef_rows(labels, fit.theta_hat.to_vector(opts.random_effects), theta_se)
    report["tau"] = _coef_rows(COEF_NAMES, est.as_array(), est.se)
    report["estimand"] = model.estimand
    report["diagnostics"] = {
        "n_used": est.n_used, "n_trimmed_isolated": est.n_trimmed, "n_clamped": est.n_clamped,
        "groups": est.g, "nbar": est.nbar, "min_eigenvalue": est.min_eigenvalue,
        "eigen_floor_hits": 0, "scores": "exact" if exact else "estimated",
    }
    if fit is not None:
        report["diagnostics"].update(converged=fit.converged, gradient_norm=fit.gradient_norm,
                                     criterion=fit.criterion_value, iterations=fit.iterations,
                                     starts=fit.starts_used)
    report["vcov_tau"] = est.tau_vcov
    report["provenance"] = _provenance(asdict(model), model.seed, data_hash)
    return report


def _print_table(title, rows) -> None:
    print(title)
    print(f"  {'':<14}{'coef':>12}{'se':>12}{'p':>9}")
    for r in rows:
        print(f"  {r['name']:<14}{r['coef']:>12.4f}{r['se']:>12.4f}{r['p']:>9.3f} {r['stars']}")


def cmd_estimate(args) -> int:
    model, sample, cov_names, psi_names, data_hash = _load_for_model(args)
    report = estimate_report(model, sample, cov_names, psi_names, bool(args.exact_scores), data_hash)
    dump_json(report, args.out)
    if "theta" in report:
        _print_table("score parameters", report["theta"])
    _print_table(f"coefficients ({report['estimand']})", report["tau"])
    return 0


def cmd_balance(args) -> int:
    model, sample, cov_names, psi_names, data_hash = _load_for_model(args)
    opts = model.options()
    if not cov_names:
        raise ValidationError("balance needs at least one covariate")
    fit = fit_theta(sample, None, opts)
    table = []
    for j, name in enumerate(cov_names):
        res = placebo_balance(sample, fit.theta_hat, j, opts)
        table.append({"covariate": name, "coefficients": _coef_rows(COEF_NAMES, res.coef, res.se),
                      "wald": res.wald, "wald_p": res.wald_p, "stars": stars(res.wald_p)})
    report = {"balance": table, "converged": fit.converged,
              "provenance": _provenance(asdict(model), model.seed, data_hash)}
    dump_json(report, args.out)
    for row in table:
        print(f"  {row['covariate']:<14} wald={row['wald']:.3f} p={row['wald_p']:.3f} {row['stars']}")
    return 0


def cmd_mc(args) -> int:
    if args.design:
        designs = mc_designs()
        if args.design not in designs:
            raise ValidationError(f"unknown design {args.design!r}; choose from {sorted(designs)}")
        cfg = designs[args.design]
    else:
        cfg = McConfig.from_dict(_read_json(args.config))
    over = {}
    if args.reps is not None:
        over["reps"] = args.reps
    if args.seed is not None:
        over["seed"] = args.seed
    if over:
        cfg = McConfig(**{**cfg.__dict__, **over})
    rows: list = []
    rep = run_mc(cfg, rows)
    body = rep.to_dict()
    body["provenance"] = _provenance(cfg.to_dict(), cfg.seed)
    dump_json(body, args.out)
    if args.rows:
        write_rows_csv(rows, args.rows)
    print(f"completed {rep.reps_completed}/{rep.reps} replications")
    for name, s in rep.coefficients.items():
        print(f"  {name:<6} bias={s.bias:+.4f} mcse={s.mcse:.4f} coverage={s.coverage:.3f}")
    return 0


def cmd_diagnose(args) -> int:
    selected = [name for name in CHECKERS if getattr(args, name.replace("-", "_"))]
    results = run_checks(selected or None)
    if args.out:
        dump_json(results, args.out)
    ok = True
    for name, res in results.items():
        ok &= res["passed"]
        flag = "PASS" if res["passed"] else "FAIL"
        print(f"{flag} {name}: {res['cases']} cases, min margin {res['min_margin']:.3g}")
    return 0 if ok else 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="netprop", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a panel and its truth sidecar")
    p.add_argument("--config", help="DGP config (JSON)")
    p.add_argument("--design", help="named design instead of a config file")
    p.add_argument("--groups", type=int, help="override the number of groups")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    for name, func, helptext in (("estimate", cmd_estimate, "estimate scores and coefficients"),
                                 ("balance", cmd_balance, "placebo balance test per covariate")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--data", required=True, help="panel directory")
        p.add_argument("--config", help="model config (JSON)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True, help="report file (JSON)")
        if name == "estimate":
            p.add_argument("--exact-scores", metavar="TRUTH_CSV",
                           help="use true scores from a truth sidecar instead of fitting")
        p.set_defaults(func=func)

    p = sub.add_parser("mc", help="Monte Carlo replications")
    p.add_argument("--config", help="Monte Carlo config (JSON)")
    p.add_argument("--design", help="named design instead of a config file")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="report file (JSON)")
    p.add_argument("--rows", help="per-replication table (CSV)")
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("diagnose", help="verify analytic properties numerically")
    for name in CHECKERS:
        p.add_argument(f"--{name}", action="store_true")
    p.add_argument("--out", help="results file (JSON)")
    p.set_defaults(func=cmd_diagnose)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except NetpropError as exc:  # pragma: no cover - every package error is one of the two
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())
