"""Replication harness and distributional checks on simulated panels."""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .dgp import DgpConfig, SimulatedPanel, simulate, target_tau
from .errors import NetpropError, ValidationError
from .estimator import (
    COEF_NAMES,
    EstimatorOptions,
    estimate_tau,
    fit_theta,
    ols_benchmark,
    placebo_test,
    prepare,
)

CHECKS = ("bias", "coverage", "normality", "balance-size", "ols-bias", "binomial-gof",
          "independence")
Z95 = stats.norm.ppf(0.975)


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo design.

    ``scores`` selects estimated logit scores or the simulator's exact scores.
    ``placebo_index`` picks the covariate used as placebo outcome; with
    ``model_covariates`` the score model sees only those covariate columns
    (to study misspecification).
    """

    reps: int = 500
    dgp: DgpConfig = field(default_factory=DgpConfig)
    options: EstimatorOptions = field(default_factory=EstimatorOptions)
    seed: int = 0
    checks: tuple[str, ...] = ("bias", "coverage", "normality")
    scores: str = "estimated"
    estimand: str = "ATE"
    placebo_index: int = 0
    model_covariates: tuple[int, ...] | None = None
    with_se: bool = True

    def __post_init__(self):
        if self.reps < 1:
            raise ValidationError("reps must be at least 1")
        unknown = set(self.checks) - set(CHECKS)
        if unknown:
            raise ValidationError(f"unknown checks: {sorted(unknown)}")
        if self.scores not in ("estimated", "exact"):
            raise ValidationError("scores must be 'estimated' or 'exact'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "McConfig":
        d = dict(d)
        dgp = DgpConfig.from_dict(d.pop("dgp", {}))
        opts = d.pop("options", {})
        if "clamp" in opts:
            opts["clamp"] = tuple(opts["clamp"])
        if "checks" in d:
            d["checks"] = tuple(d["checks"])
        if d.get("model_covariates") is not None:
            d["model_covariates"] = tuple(d["model_covariates"])
        return cls(dgp=dgp, options=EstimatorOptions(**opts), **d)


def rep_seed(root: int, rep: int) -> int:
    """Independent simulation seed for replication ``rep``."""
    return int(np.random.SeedSequence(root, spawn_key=(rep,)).generate_state(1)[0])


def _restrict_covariates(panel, cols):
    from .core import GroupData, NetworkPanel

    return NetworkPanel(tuple(GroupData(g.group_id, g.adjacency, g.d, g.y, g.c[:, list(cols)],
                                        g.psi, g.node_ids) for g in panel.groups))


def run_replication(config: McConfig, rep: int) -> dict:
    """Simulate and estimate once; failures are recorded, never raised."""
    row = {"rep": rep, "seed": rep_seed(config.seed, rep), "status": "ok"}
    try:
        sim = simulate(config.dgp, row["seed"])
        truth = sim.node_truth()
        extra = {"p_d": truth["p_d"], "p_f": truth["p_f"], "c_all": np.vstack(
            [g.c for g in sim.panel.groups])}
        if "complier" in truth:
            extra["complier"] = truth["complier"]
        panel = sim.panel
        if config.model_covariates is not None:
            panel = _restrict_covariates(panel, config.model_covariates)
        sample = prepare(panel, extra)
        if config.dgp.design == "one_sided":
            sample = sample.select(sample.extra["complier"])
        opts = config.options
        theta, scores = None, None
        if config.scores == "exact":
            scores = (sample.extra["p_d"], sample.extra["p_f"])
        else:
            fit = fit_theta(sample, None, opts)
            row.update(converged=fit.converged, grad_norm=fit.gradient_norm,
                       criterion=fit.criterion_value)
            theta = fit.theta_hat
            if not fit.converged:
                row["status"] = "nonconvergence"
                return row
        est = estimate_tau(sample, theta, opts, config.estimand, scores, with_se=config.with_se)
        row.update(n_used=est.n_used, n_clamped=est.n_clamped, num_groups=est.g)
        for j, name in enumerate(COEF_NAMES):
            row[f"tau_{name}"] = est.tau_hat[j]
            row[f"se_{name}"] = est.se[j]
        if config.estimand == "ATE":
            apt = estimate_tau(sample, theta, opts, "APT", scores, with_se=False)
            apu = estimate_tau(sample, theta, opts, "APU", scores, with_se=False)
            dbar = sample.d.mean()
            row["identity_gap"] = float(np.max(np.abs(
                dbar * apt.as_array() + (1 - dbar) * apu.as_array() - est.as_array())))
        if "balance-size" in config.checks:
            full_c = sample.extra["c_all"]
            bal = placebo_test(sample, theta, full_c[:, config.placebo_index], opts, scores,
                               config.placebo_index)
            row.update(placebo_wald=bal.wald, placebo_p=bal.wald_p)
        if "ols-bias" in config.checks:
            ols = ols_benchmark(sample)
            peer = ols_benchmark(sample, peer_only=True)
            for j, name in enumerate(COEF_NAMES):
                row[f"ols_{name}"] = ols.coef[j]
            row["ols_peer_share"] = peer.coef[1]
            row["dbar_var"] = float(np.var(sample.x[:, 2]))
    except NetpropError as exc:
        row["status"] = type(exc).__name__
    return row


def _thread_count() -> int:
    raw = os.environ.get("NETPROP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValidationError(f"NETPROP_THREADS must be an integer, got {raw!r}") from None


def run_replications(config: McConfig, reps: range | None = None) -> list[dict]:
    reps = range(config.reps) if reps is None else reps
    workers = min(_thread_count(), len(reps))
    if workers <= 1:
        return [run_replication(config, r) for r in reps]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(run_replication, [config] * len(reps), reps))
    return sorted(rows, key=lambda r: r["rep"])


@dataclass
class CoefSummary:
    mean: float
    bias: float
    mcse: float
    rmse: float
    sd: float
    coverage: float
    se_sd_ratio: float
    ks_distance: float
    ks_p: float


@dataclass
class McReport:
    reps: int
    reps_completed: int
    failures: dict
    target: list
    coefficients: dict
    dispersion_defined: bool
    placebo_rejection_5pct: float = math.nan
    max_identity_gap: float = math.nan
    ols: dict = field(default_factory=dict)

    @property
    def completion_rate(self) -> float:
        return self.reps_completed / self.reps

    def to_dict(self) -> dict:
        return asdict(self)


def _fmean(x) -> float:
    return math.fsum(x) / len(x) if len(x) else math.nan


def _fsd(x) -> float:
    if len(x) < 2:
        return math.nan
    m = _fmean(x)
    return math.sqrt(math.fsum((v - m) ** 2 for v in x) / (len(x) - 1))


def summarize(config: McConfig, rows: list[dict], target=None) -> McReport:
    """Aggregate replication rows into bias, coverage and normality statistics."""
    if target is None:
        target = target_tau(config.dgp, compliers_only=config.dgp.design == "one_sided")
    target = np.asarray(target, dtype=float)
    ok = [r for r in rows if r["status"] == "ok"]
    failures: dict = {}
    for r in rows:
        if r["status"] != "ok":
            failures[r["status"]] = failures.get(r["status"], 0) + 1
    defined = len(ok) >= 2
    coefs = {}
    for j, name in enumerate(COEF_NAMES):
        est = sorted(r[f"tau_{name}"] for r in ok)  # sorted: order-free sums
        se = [r[f"se_{name}"] for r in ok]
        mean = _fmean(est)
        sd = _fsd(est)
        cover = [abs(r[f"tau_{name}"] - target[j]) <= Z95 * r[f"se_{name}"] for r in ok]
        if defined and sd > 0:
            ks = stats.kstest((np.array(est) - mean) / sd, "norm")
            ks_d, ks_p = float(ks.statistic), float(ks.pvalue)
        else:
            ks_d = ks_p = math.nan
        coefs[name] = CoefSummary(
            mean=mean, bias=mean - target[j], mcse=sd / math.sqrt(len(est)) if defined else math.nan,
            rmse=math.sqrt(_fmean([(e - target[j]) ** 2 for e in est])) if est else math.nan,
            sd=sd, coverage=_fmean(cover) if cover and np.all(np.isfinite(se)) else math.nan,
            se_sd_ratio=_fmean(se) / sd if defined and sd > 0 else math.nan,
            ks_distance=ks_d, ks_p=ks_p)
    report = McReport(config.reps, len(ok), failures, target.tolist(), coefs, defined)
    gaps = [r["identity_gap"] for r in ok if "identity_gap" in r]
    if gaps:
        report.max_identity_gap = float(max(gaps))
    pvals = [r["placebo_p"] for r in ok if np.isfinite(r.get("placebo_p", math.nan))]
    if pvals:
        report.placebo_rejection_5pct = _fmean([p < 0.05 for p in pvals])
    if ok and "ols_gamma" in ok[0]:
        for key in [f"ols_{n}" for n in COEF_NAMES] + ["ols_peer_share"]:
            vals = sorted(r[key] for r in ok)
            report.ols[key] = {"mean": _fmean(vals),
                               "mcse": _fsd(vals) / math.sqrt(len(vals)) if defined else math.nan}
    return report


def run_mc(config: McConfig, rows_out: list | None = None) -> McReport:
    """Run all replications and aggregate; ``rows_out`` receives the raw rows."""
    rows = run_replications(config)
    if rows_out is not None:
        rows_out.extend(rows)
    return summarize(config, rows)


def write_rows_csv(rows: list[dict], path) -> None:
    keys: list[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, restval="")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                             for k, v in r.items()})


# ----------------------------------------------------------- distribution checks

@dataclass
class GofTable:
    """Per-stratum chi-square goodness-of-fit results."""

    strata: list
    skipped: list
    ks_uniform_p: float
    n_obs: int

    @property
    def p_values(self) -> np.ndarray:
        return np.array([s["p"] for s in self.strata])


def _pooled_chisq(observed: np.ndarray, expected: np.ndarray, min_expected: float = 5.0):
    """Chi-square statistic after merging adjacent cells with small expectation."""
    obs_cells, exp_cells = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(observed, expected):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs_cells.append(o_acc)
            exp_cells.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if exp_cells:
            obs_cells[-1] += o_acc
            exp_cells[-1] += e_acc
        else:
            obs_cells.append(o_acc)
            exp_cells.append(e_acc)
    obs_cells, exp_cells = np.array(obs_cells), np.array(exp_cells)
    dof = len(obs_cells) - 1
    if dof < 1:
        return math.nan, 0
    return float(np.sum((obs_cells - exp_cells) ** 2 / exp_cells)), dof


def binomial_gof_arrays(t, l, p_f, min_count: int = 50, digits: int = 9) -> GofTable:
    """Chi-square test of T against Binomial(p_f, L) within (p_f, L) strata."""
    t, l, p_f = np.asarray(t), np.asarray(l).astype(int), np.asarray(p_f, dtype=float)
    keep = l > 0
    t, l, p_f = t[keep].astype(int), l[keep], p_f[keep]
    keys = np.column_stack([np.round(p_f, digits), l])
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    strata, skipped = [], []
    for s, (pf, ll) in enumerate(uniq):
        ts = t[inv == s]
        ll = int(ll)
        if len(ts) < min_count:
            skipped.append({"p_f": float(pf), "l": ll, "n": int(len(ts))})
            continue
        obs = np.bincount(ts, minlength=ll + 1).astype(float)
        exp = len(ts) * stats.binom.pmf(np.arange(ll + 1), ll, pf)
        stat, dof = _pooled_chisq(obs, exp)
        if dof < 1:
            skipped.append({"p_f": float(pf), "l": ll, "n": int(len(ts))})
            continue
        strata.append({"p_f": float(pf), "l": ll, "n": int(len(ts)), "stat": stat, "dof": dof,
                       "p": float(stats.chi2.sf(stat, dof))})
    pv = [s["p"] for s in strata]
    ks_p = float(stats.kstest(pv, "uniform").pvalue) if len(pv) >= 2 else math.nan
    return GofTable(strata, skipped, ks_p, int(keep.sum()))


def binomial_gof(panels: list[SimulatedPanel], min_count: int = 50) -> GofTable:
    """Goodness of fit of treated-friend counts given the true friend score and L."""
    t, l, pf = [], [], []
    for sim in panels:
        for g, tr in zip(sim.panel.groups, sim.truth):
            t.append(g.treated_links)
            l.append(g.links)
            pf.append(tr.p_f)
    return binomial_gof_arrays(np.concatenate(t), np.concatenate(l), np.concatenate(pf), min_count)


def bernoulli_gof(panels: list[SimulatedPanel], min_count: int = 50, digits: int = 9) -> GofTable:
    """Treatment frequency against the true own score within (p_d, T, L) strata."""
    d, pd, t, l = [], [], [], []
    for sim in panels:
        for g, tr in zip(sim.panel.groups, sim.truth):
            d.append(g.d)
            pd.append(tr.p_d)
            t.append(g.treated_links)
            l.append(g.links)
    d, pd, t, l = (np.concatenate(a) for a in (d, pd, t, l))
    keys = np.column_stack([np.round(pd, digits), t, l])
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    strata, skipped = [], []
    for s, (p, tt, ll) in enumerate(uniq):
        ds = d[inv == s]
        key = {"p_d": float(p), "t": int(tt), "l": int(ll), "n": int(len(ds))}
        if len(ds) < min_count or p in (0.0, 1.0):
            skipped.append(key)
            continue
        pval = float(stats.binomtest(int(ds.sum()), len(ds), p).pvalue)
        strata.append({**key, "p": pval})
    pv = [s["p"] for s in strata]
    ks_p = float(stats.kstest(pv, "uniform").pvalue) if len(pv) >= 2 else math.nan
    return GofTable(strata, skipped, ks_p, len(d))


def clearing_check(panels: list[SimulatedPanel], digits: int = 9) -> list[dict]:
    """Non-friend treatment frequency versus the clearing formula per covariate stratum.

    Pairs ``(i, j)`` with ``j`` not linked to ``i`` are pooled within strata of
    ``C_i``; the standard error of the pooled ratio is clustered by group. The
    formula value weights each node's non-friend score by its expected number
    of non-friends.
    """
    acc: dict = {}
    for sim in panels:
        for g, tr in zip(sim.panel.groups, sim.truth):
            n = g.n
            nonfriend = (1 - g.adjacency.astype(int))
            np.fill_diagonal(nonfriend, 0)
            nf_count = nonfriend.sum(axis=1)
            nf_treated = nonfriend @ g.d.astype(int)
            w_exp = (n - 1) * (1 - tr.p_l)
            keys = [tuple(np.round(row, digits)) for row in g.c]
            per_key: dict = {}
            for i, key in enumerate(keys):
                e = per_key.setdefault(key, [0.0, 0.0, 0.0, 0.0])
                e[0] += nf_treated[i]
                e[1] += nf_count[i]
                e[2] += w_exp[i] * tr.p_nf[i]
                e[3] += w_exp[i]
            for key, e in per_key.items():
                acc.setdefault(key, []).append(e)
    out = []
    for key in sorted(acc):
        arr = np.array(acc[key])
        num, den = arr[:, 0], arr[:, 1]
        ratio = num.sum() / den.sum()
        se = math.sqrt(np.sum((num - ratio * den) ** 2)) / den.sum()
        formula = arr[:, 2].sum() / arr[:, 3].sum()
        out.append({"stratum": [float(v) for v in key], "empirical": float(ratio), "formula": float(formula),
                    "se": float(se), "z": float((ratio - formula) / se) if se > 0 else math.nan,
                    "groups": int(len(arr))})
    return out


def independence_check(panels: list[SimulatedPanel], digits: int = 9) -> list[dict]:
    """Correlation of own treatment with a partner's linked treatment within C strata.

    Valid when group effects are degenerate, so the stratum fixes the group
    effect too. Returns a clustered z-statistic per stratum of ``C_i``.
    """
    acc: dict = {}
    for sim in panels:
        for g, tr in zip(sim.panel.groups, sim.truth):
            ad = g.adjacency.astype(float) * g.d[None, :]
            n = g.n
            keys = [tuple(np.round(row, digits)) for row in g.c]
            for i, key in enumerate(keys):
                other = np.delete(ad[i], i)
                e = acc.setdefault(key, {})
                gs = e.setdefault(g.group_id, [0.0, 0.0, 0.0, 0.0])
                gs[0] += g.d[i] * other.sum()
                gs[1] += g.d[i] * (n - 1)
                gs[2] += other.sum()
                gs[3] += n - 1
    out = []
    for key in sorted(acc):
        arr = np.array(list(acc[key].values()))
        tot = arr.sum(axis=0)
        # covariance of D_i and A_ij D_j over pairs
        cov = tot[0] / tot[3] - (tot[1] / tot[3]) * (tot[2] / tot[3])
        mean_d, mean_ad = tot[1] / tot[3], tot[2] / tot[3]
        infl = (arr[:, 0] - mean_d * arr[:, 2] - mean_ad * arr[:, 1] + mean_d * mean_ad * arr[:, 3]
                - cov * arr[:, 3]) / tot[3]
        se = math.sqrt(np.sum(infl**2))
        out.append({"stratum": [float(v) for v in key], "cov": float(cov), "se": float(se),
                    "z": float(cov / se) if se > 0 else math.nan})
    return out


def resample_groups(sample, draw: np.ndarray):
    """Sample built from the groups at positions ``draw`` (repeats become new clusters)."""
    from dataclasses import replace

    present = np.flatnonzero(sample.group_sizes > 0)
    rows_of = {g: np.flatnonzero(sample.group == g) for g in present}
    idx, new_group = [], []
    for k, pos in enumerate(draw):
        r = rows_of[present[pos]]
        idx.append(r)
        new_group.append(np.full(len(r), k))
    idx = np.concatenate(idx)
    return replace(sample, x=sample.x[idx], y=sample.y[idx], cx=sample.cx[idx],
                   psi=sample.psi[idx], l=sample.l[idx], t=sample.t[idx],
                   group=np.concatenate(new_group), group_ids=tuple(range(len(draw))),
                   extra={k: v[idx] for k, v in sample.extra.items()})


def cluster_bootstrap(sample, theta_hat, options: EstimatorOptions, reps: int = 1000,
                      seed: int = 0, estimand: str = "ATE") -> np.ndarray:
    """Pairs-cluster bootstrap draws of the coefficients.

    Whole groups are resampled with replacement and both steps are refit,
    starting the score fit at ``theta_hat`` with a single start. Returns a
    ``(reps, 4)`` array; failed draws are NaN rows.
    """
    from dataclasses import replace

    rng = np.random.default_rng(seed)
    g = sample.num_groups
    opts = replace(options, starts=1)
    out = np.full((reps, 4), np.nan)
    for b in range(reps):
        boot = resample_groups(sample, rng.integers(0, g, size=g))
        try:
            fit = fit_theta(boot, theta_hat, opts)
            out[b] = estimate_tau(boot, fit.theta_hat, opts, estimand, with_se=False).as_array()
        except NetpropError:
            continue
    return out
