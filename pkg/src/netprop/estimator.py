"""Two-step network propensity score estimation.

Step one fits the logit score parameters by least squares on the vectorized
residuals ``vec(XX' - Q_xx(V, theta))``. Step two averages the inverse-weighted
outcomes ``Q_xx^{-1} X Y``. Standard errors come from the stacked influence
system clustered at the group level.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, stats

from .core import (
    EIG_FLOOR,
    NetworkPanel,
    RandomCoefficients,
    as_coefficients,
    batched_min_eigenvalue,
    design_matrix,
)
from .errors import (
    OverlapViolation,
    RankDeficientSystem,
    SingularMatrix,
    ValidationError,
)
from .nps import (
    MOMENT_MULTIPLICITY,
    QuadratureRule,
    ScoreParams,
    assemble_q,
    gauss_hermite_rule,
    model_moments,
    moments_from_scores,
    point_rule,
    regressor_moments,
)

ESTIMANDS = ("ATE", "APT", "APU")
COEF_NAMES = ("alpha", "beta", "gamma", "delta")


@dataclass(frozen=True)
class EstimatorOptions:
    """Optimizer, quadrature and trimming settings."""

    quad_order: int = 9
    random_effects: bool = False
    tol_grad: float = 1e-6
    max_iter: int = 500
    starts: int = 5
    jitter: float = 0.5
    seed: int = 0
    clamp: tuple[float, float] = (1e-4, 1 - 1e-4)
    max_trim_frac: float = 0.05
    eig_floor: float = EIG_FLOOR
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.starts < 1 or self.max_iter < 1:
            raise ValidationError("need at least one start and one iteration")
        if not 0 < self.clamp[0] < self.clamp[1] < 1:
            raise ValidationError("clamp bounds must satisfy 0 < lo < hi < 1")
        if not 0 <= self.max_trim_frac <= 1:
            raise ValidationError("max_trim_frac must lie in [0, 1]")

    def rule(self) -> QuadratureRule:
        return gauss_hermite_rule(self.quad_order) if self.random_effects else point_rule()


@dataclass(frozen=True)
class Sample:
    """Estimation sample: linked nodes of a canonicalized panel.

    Rows are in canonical order (groups by id, nodes by node id). ``group``
    indexes the cluster of each row and ``extra`` carries any per-node arrays
    passed to ``prepare`` aligned to the retained rows.
    """

    x: np.ndarray
    y: np.ndarray
    cx: np.ndarray
    psi: np.ndarray
    l: np.ndarray
    t: np.ndarray
    group: np.ndarray
    group_ids: tuple
    n_trimmed: int
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def d(self) -> np.ndarray:
        return self.x[:, 1]

    @property
    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.group, minlength=len(self.group_ids))

    @property
    def num_groups(self) -> int:
        return int(np.count_nonzero(self.group_sizes))

    def select(self, mask) -> "Sample":
        """Keep the rows where ``mask`` is true; the exposure still counts every friend."""
        mask = np.asarray(mask, dtype=bool)
        return replace(self, x=self.x[mask], y=self.y[mask], cx=self.cx[mask],
                       psi=self.psi[mask], l=self.l[mask], t=self.t[mask],
                       group=self.group[mask],
                       extra={k: v[mask] for k, v in self.extra.items()})

    def with_outcome(self, y) -> "Sample":
        y = np.asarray(y, dtype=float)
        if y.shape != self.y.shape:
            raise ValidationError("outcome length does not match the sample")
        return replace(self, y=y)


def prepare(panel: NetworkPanel, extra: dict | None = None) -> Sample:
    """Canonicalize the panel and drop isolated nodes.

    Args:
        panel: network panel in any group or node order.
        extra: optional per-node arrays in the panel's original order
            (e.g. true scores); they are permuted and trimmed alongside.

    Returns:
        The estimation sample.
    """
    order = {}
    offset = 0
    for g in panel.groups:
        order[g.group_id] = offset + np.argsort(g.node_ids, kind="stable")
        offset += g.n
    canon = panel.canonical()
    perm = np.concatenate([order[g.group_id] for g in canon.groups])
    rows = dict(x=[], y=[], cx=[], psi=[], l=[], t=[], group=[])
    keep = []
    for gi, g in enumerate(canon.groups):
        l, t = g.links, g.treated_links
        has = l > 0
        keep.append(has)
        if not has.any():
            continue
        rows["x"].append(design_matrix(g.d[has], t[has], l[has]))
        rows["y"].append(g.y[has])
        rows["cx"].append(np.column_stack([np.ones(has.sum()), g.c[has]]))
        rows["psi"].append(np.tile(g.psi, (has.sum(), 1)))
        rows["l"].append(l[has].astype(float))
        rows["t"].append(t[has].astype(float))
        rows["group"].append(np.full(has.sum(), gi))
    if not rows["y"]:
        raise ValidationError("no linked nodes: estimation sample is empty")
    keep = np.concatenate(keep)
    arrays = {k: np.concatenate(v) for k, v in rows.items()}
    arrays["psi"] = arrays["psi"].reshape(len(arrays["y"]), panel.p)
    ex = {}
    for name, v in (extra or {}).items():
        v = np.asarray(v)
        if len(v) != panel.num_nodes:
            raise ValidationError(f"extra array {name!r} must have one entry per node")
        ex[name] = v[perm][keep]
    return Sample(group_ids=tuple(g.group_id for g in canon.groups),
                  n_trimmed=int((~keep).sum()), extra=ex, **arrays)


# ---------------------------------------------------------------- first step

def residual(x, qxx) -> np.ndarray:
    """Column-major ``vec(x x' - qxx)``."""
    x = np.asarray(x, dtype=float)
    return (np.outer(x, x) - np.asarray(qxx, dtype=float)).ravel(order="F")


def _moments(sample: Sample, params: ScoreParams, options: EstimatorOptions, rule,
             jacobian=False, clamp=None):
    return model_moments(sample.cx, sample.psi, sample.l, params, rule,
                         options.random_effects, jacobian=jacobian, clamp=clamp)


def squared_residuals(sample: Sample, params: ScoreParams, options: EstimatorOptions,
                      rule: QuadratureRule | None = None) -> np.ndarray:
    """Per-observation ``||r||^2`` through the five-moment representation."""
    rule = rule or options.rule()
    gap = regressor_moments(sample.x) - _moments(sample, params, options, rule).m
    return (gap**2) @ MOMENT_MULTIPLICITY


def criterion(sample: Sample, params: ScoreParams, options: EstimatorOptions = EstimatorOptions(),
              rule: QuadratureRule | None = None) -> float:
    """Average squared residual norm over the estimation sample."""
    if sample.n == 0:
        raise ValidationError("empty estimation sample")
    return float(np.mean(squared_residuals(sample, params, options, rule)))


def score_rows(sample: Sample, params: ScoreParams, options: EstimatorOptions,
               rule: QuadratureRule | None = None) -> np.ndarray:
    """Per-observation gradient of ``||r||^2`` with respect to the free parameters."""
    rule = rule or options.rule()
    mom = _moments(sample, params, options, rule, jacobian=True)
    gap = regressor_moments(sample.x) - mom.m
    return -2.0 * np.einsum("nm,nmj->nj", gap * MOMENT_MULTIPLICITY, mom.dm)


def _value_and_grad(sample, params, options, rule):
    mom = _moments(sample, params, options, rule, jacobian=True)
    gap = regressor_moments(sample.x) - mom.m
    value = float(np.mean((gap**2) @ MOMENT_MULTIPLICITY))
    grad = -2.0 * np.einsum("nm,nmj->j", gap * MOMENT_MULTIPLICITY, mom.dm) / sample.n
    return value, grad


@dataclass(frozen=True)
class FitResult:
    theta_hat: ScoreParams
    criterion_value: float
    gradient_norm: float
    converged: bool
    iterations: int
    starts_used: int
    start_values: tuple = ()

    def __post_init__(self):
        if self.converged and not np.isfinite(self.gradient_norm):
            raise ValidationError("converged fit needs a finite gradient norm")


def _param_scales(sample: Sample, p: int, random_effects: bool) -> np.ndarray:
    sd_c = sample.cx.std(axis=0)
    sd_c[0] = 1.0
    sd_psi = sample.psi.std(axis=0) if p else np.zeros(0)
    sd_c = np.where(sd_c > 0, sd_c, 1.0)
    sd_psi = np.where(sd_psi > 0, sd_psi, 1.0)
    parts = [sd_c, sd_c, sd_psi, sd_psi]
    if random_effects:
        parts.append(np.ones(3))
    return np.concatenate(parts)


def fit_theta(sample: Sample, init: ScoreParams | None = None,
              options: EstimatorOptions = EstimatorOptions()) -> FitResult:
    """Minimize the criterion by BFGS from several jittered starts.

    The problem is solved in standardized coordinates ``u = theta * scale``;
    the reported gradient norm is the sup norm on that scale. Each start is
    finished with Newton steps on a finite-difference Hessian of the analytic
    gradient when BFGS stops short of ``tol_grad``.
    """
    k, p = sample.cx.shape[1] - 1, sample.psi.shape[1]
    init = init or ScoreParams.zeros(k, p, options.random_effects)
    if init.k != k or init.p != p:
        raise ValidationError("initial parameters do not match the covariate dimensions")
    rule = options.rule()
    re = options.random_effects
    scale = _param_scales(sample, p, re)
    v0 = init.to_vector(re)
    if not np.all(np.isfinite(v0)):
        raise ValidationError("initial parameters must be finite on the free coordinates")
    u0 = v0 * scale

    def fg(u):
        val, g = _value_and_grad(sample, init.with_vector(u / scale, re), options, rule)
        return val, g / scale

    rng = np.random.default_rng(options.seed)
    starts = [u0] + [u0 + options.jitter * rng.standard_normal(u0.size)
                     for _ in range(options.starts - 1)]
    best = None
    total_iter = 0
    for idx, s in enumerate(starts):
        res = optimize.minimize(fg, s, jac=True, method="BFGS",
                                options=dict(gtol=options.tol_grad, maxiter=options.max_iter))
        u, val, g = res.x, float(res.fun), res.jac
        total_iter += int(res.nit)
        if np.max(np.abs(g)) > options.tol_grad and np.all(np.isfinite(u)):
            u, val, g, extra = _newton_polish(fg, u, val, g, options)
            total_iter += extra
        cand = (val, idx, u, g)
        if best is None or val < best[0]:
            best = cand
    val, _, u, g = best
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    theta = init.with_vector(u / scale, re)
    return FitResult(theta, val, gnorm, bool(gnorm <= options.tol_grad), total_iter,
                     len(starts), tuple(s / scale for s in starts))


def _fd_hessian(fg, u, h):
    n = u.size
    hess = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        hess[:, j] = (fg(u + e)[1] - fg(u - e)[1]) / (2 * h)
    return 0.5 * (hess + hess.T)


def _newton_polish(fg, u, val, g, options, max_steps=20):
    steps = 0
    for _ in range(max_steps):
        if np.max(np.abs(g)) <= options.tol_grad:
            break
        hess = _fd_hessian(fg, u, options.fd_step)
        try:
            step = np.linalg.solve(hess, g)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-8:
            cand = u - t * step
            c_val, c_g = fg(cand)
            if np.isfinite(c_val) and c_val <= val + 1e-14 * max(1.0, abs(val)):
                break
            t *= 0.5
        else:
            break
        u, val, g = cand, c_val, c_g
        steps += 1
    return u, val, g, steps


# --------------------------------------------------------------- second step

@dataclass(frozen=True)
class InfluenceSystem:
    """Group-averaged stacked influence rows and the averaged Jacobian.

    Columns are the free score parameters followed by the four coefficients.
    ``psi_bar`` has one row per group with at least one retained node and
    ``weights`` holds ``N_g / nbar``.
    """

    psi_bar: np.ndarray
    weights: np.ndarray
    jacobian: np.ndarray
    theta_dim: int

    @property
    def num_groups(self) -> int:
        return len(self.weights)

    def weighted_mean(self) -> np.ndarray:
        return (self.weights @ self.psi_bar) / self.num_groups


@dataclass(frozen=True)
class TauEstimate:
    tau_hat: RandomCoefficients
    vcov: np.ndarray
    se: np.ndarray
    estimand: str
    n_used: int
    n_trimmed: int
    g: int
    nbar: float
    n_clamped: int = 0
    theta_dim: int = 0
    min_eigenvalue: float = float("nan")

    @property
    def tau_vcov(self) -> np.ndarray:
        t = self.theta_dim
        return self.vcov[t:, t:]

    def as_array(self) -> np.ndarray:
        return np.array(self.tau_hat)


@dataclass
class _SecondStage:
    q: np.ndarray
    b: np.ndarray
    m: np.ndarray
    dm: np.ndarray | None
    n_clamped: int
    min_eig: float


def _second_stage(sample: Sample, options: EstimatorOptions, params: ScoreParams | None,
                  scores=None, jacobian=False) -> _SecondStage:
    lo, hi = options.clamp
    if scores is not None:
        p_d, p_f = (np.asarray(s, dtype=float) for s in scores)
        if p_d.shape != (sample.n,) or p_f.shape != (sample.n,):
            raise ValidationError("exact scores must have one entry per retained node")
        hit = (p_d < lo) | (p_d > hi) | (p_f < lo) | (p_f > hi)
        m = moments_from_scores(np.clip(p_d, lo, hi), np.clip(p_f, lo, hi), sample.l)
        dm = None
    else:
        mom = _moments(sample, params, options, options.rule(), jacobian=jacobian,
                       clamp=options.clamp)
        m, dm, hit = mom.m, mom.dm, mom.clamped
    n_clamped = int(hit.sum())
    if n_clamped > options.max_trim_frac * sample.n:
        raise OverlapViolation(
            f"{n_clamped} of {sample.n} observations hit the score clamps "
            f"(limit {options.max_trim_frac:.0%})")
    q = assemble_q(m)
    eig = batched_min_eigenvalue(q)
    if np.any(eig <= options.eig_floor):
        bad = int(np.argmin(eig))
        raise SingularMatrix(f"Q_xx of observation {bad} has eigenvalue {eig[bad]:.3g}")
    b = np.linalg.solve(q, (sample.x * sample.y[:, None])[:, :, None])[:, :, 0]
    return _SecondStage(q, b, m, dm, n_clamped, float(eig.min()))


def _tau_from_kernel(stage: _SecondStage, d: np.ndarray, estimand: str) -> np.ndarray:
    if estimand == "ATE":
        return stage.b.mean(axis=0)
    dbar = d.mean()
    if estimand == "APT":
        if dbar == 0:
            raise ValidationError("APT undefined: no treated observations")
        return (stage.m[:, :1] * stage.b).mean(axis=0) / dbar
    if dbar == 1:
        raise ValidationError("APU undefined: no untreated observations")
    return ((1 - stage.m[:, :1]) * stage.b).mean(axis=0) / (1 - dbar)


def _q_derivative(dm_col: np.ndarray) -> np.ndarray:
    """Stack of dQ/dtheta_j from moment derivatives (constant entry fixed)."""
    return assemble_q(dm_col) - assemble_q(np.zeros_like(dm_col))


def influence_system(sample: Sample, theta_hat: ScoreParams | None, tau_hat,
                     options: EstimatorOptions = EstimatorOptions(), estimand: str = "ATE",
                     scores=None, stage: _SecondStage | None = None) -> InfluenceSystem:
    """Stacked first- and second-step influence rows averaged within groups.

    With exact ``scores`` the first step is absent and only the four
    coefficient moments remain.
    """
    if estimand not in ESTIMANDS:
        raise ValidationError(f"estimand must be one of {ESTIMANDS}")
    tau = np.asarray(tau_hat, dtype=float)
    estimated = scores is None
    if stage is None or (estimated and stage.dm is None):
        stage = _second_stage(sample, options, theta_hat, scores, jacobian=estimated)
    d = sample.d[:, None]
    n = sample.n
    if estimand == "ATE":
        w_tau, w_b = np.ones((n, 1)), np.ones((n, 1))
    elif estimand == "APT":
        w_tau, w_b = d, stage.m[:, :1]
    else:
        w_tau, w_b = 1 - d, 1 - stage.m[:, :1]
    # coefficient moment: w_tau * tau - w_b * Q^{-1} x y
    psi_tau = w_tau * tau - w_b * stage.b
    h_tt = np.eye(4) * w_tau.mean()

    if estimated:
        rule = options.rule()
        psi_q = score_rows(sample, theta_hat, options, rule)
        pdim = psi_q.shape[1]
        h_qq = _score_hessian(sample, theta_hat, options, rule)
        # d/dtheta of -w_b * Q^{-1} x y = w_b * Q^{-1} dQ b - (dw_b) b
        h_tq = np.empty((4, pdim))
        qinv_b = stage.b
        for j in range(pdim):
            dq = _q_derivative(stage.dm[:, :, j])
            dqb = np.einsum("nab,nb->na", dq, qinv_b)
            term = np.linalg.solve(stage.q, dqb[:, :, None])[:, :, 0]
            col = w_b * term
            if estimand == "APT":
                col = col - stage.dm[:, :1, j] * qinv_b
            elif estimand == "APU":
                col = col + stage.dm[:, :1, j] * qinv_b
            h_tq[:, j] = col.mean(axis=0)
        jac = np.block([[h_qq, np.zeros((pdim, 4))], [h_tq, h_tt]])
        rows = np.column_stack([psi_q, psi_tau])
    else:
        pdim = 0
        jac = h_tt
        rows = psi_tau

    sizes = np.bincount(sample.group, minlength=len(sample.group_ids)).astype(float)
    present = sizes > 0
    sums = np.zeros((len(sizes), rows.shape[1]))
    np.add.at(sums, sample.group, rows)
    psi_bar = sums[present] / sizes[present, None]
    nbar = sizes[present].mean()
    return InfluenceSystem(psi_bar, sizes[present] / nbar, jac, pdim)


def _score_hessian(sample, params, options, rule) -> np.ndarray:
    """Central finite differences of the averaged analytic score rows."""
    re = options.random_effects
    v = params.to_vector(re)
    h = options.fd_step
    out = np.empty((v.size, v.size))
    for j in range(v.size):
        e = np.zeros(v.size)
        e[j] = h
        up = score_rows(sample, params.with_vector(v + e, re), options, rule).mean(axis=0)
        dn = score_rows(sample, params.with_vector(v - e, re), options, rule).mean(axis=0)
        out[:, j] = (up - dn) / (2 * h)
    return 0.5 * (out + out.T)


def sandwich(system: InfluenceSystem) -> np.ndarray:
    """Clustered sandwich covariance ``H^{-1} Omega H^{-T} / G``."""
    g = system.num_groups
    jac = system.jacobian
    s = np.linalg.svd(jac, compute_uv=False)
    if s[-1] <= 1e-12 * max(1.0, s[0]):
        raise RankDeficientSystem(f"influence Jacobian is singular (condition {s[0] / max(s[-1], 1e-300):.3g})")
    scaled = system.psi_bar * system.weights[:, None]
    omega = scaled.T @ scaled / g
    hinv = np.linalg.inv(jac)
    vcov = hinv @ omega @ hinv.T / g
    return 0.5 * (vcov + vcov.T)


def estimate_tau(sample: Sample, theta_hat: ScoreParams | None = None,
                 options: EstimatorOptions = EstimatorOptions(), estimand: str = "ATE",
                 scores=None, with_se: bool = True) -> TauEstimate:
    """Inverse-weighting estimate of the average coefficients.

    Args:
        sample: estimation sample from ``prepare``.
        theta_hat: fitted score parameters; ignored when ``scores`` is given.
        options: estimator options (clamps, trimming, quadrature).
        estimand: "ATE", "APT" or "APU".
        scores: optional pair ``(p_d, p_f)`` of exact scores per retained row.
        with_se: skip the influence system when false (``vcov`` is NaN).

    Returns:
        TauEstimate with the clustered sandwich covariance over (theta, tau).
    """
    if estimand not in ESTIMANDS:
        raise ValidationError(f"estimand must be one of {ESTIMANDS}")
    if scores is None and theta_hat is None:
        raise ValidationError("need either fitted parameters or exact scores")
    stage = _second_stage(sample, options, theta_hat, scores, jacobian=with_se and scores is None)
    tau = _tau_from_kernel(stage, sample.d, estimand)
    if with_se:
        system = influence_system(sample, theta_hat, tau, options, estimand, scores, stage)
        vcov = sandwich(system)
        tdim = system.theta_dim
    else:
        tdim = 0
        vcov = np.full((4, 4), np.nan)
    se = np.sqrt(np.clip(np.diag(vcov)[tdim:], 0, None))
    sizes = sample.group_sizes
    return TauEstimate(as_coefficients(tau), vcov, se, estimand, sample.n, sample.n_trimmed,
                       sample.num_groups, float(sizes[sizes > 0].mean()), stage.n_clamped,
                       tdim, stage.min_eig)


def estimate(panel_or_sample, options: EstimatorOptions = EstimatorOptions(),
             estimand: str = "ATE", init: ScoreParams | None = None):
    """Fit the scores and estimate ``tau`` in one call; returns ``(fit, tau)``."""
    sample = panel_or_sample if isinstance(panel_or_sample, Sample) else prepare(panel_or_sample)
    fit = fit_theta(sample, init, options)
    return fit, estimate_tau(sample, fit.theta_hat, options, estimand)


# ------------------------------------------------------------- benchmarks

@dataclass(frozen=True)
class OlsResult:
    names: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    vcov: np.ndarray
    residuals: np.ndarray


def _cluster_ols(z: np.ndarray, y: np.ndarray, group: np.ndarray, names) -> OlsResult:
    n, kz = z.shape
    if np.linalg.matrix_rank(z) < kz:
        raise RankDeficientSystem("OLS design is collinear")
    coef, *_ = np.linalg.lstsq(z, y, rcond=None)
    u = y - z @ coef
    zz_inv = np.linalg.inv(z.T @ z)
    scores = np.zeros((group.max() + 1, kz))
    np.add.at(scores, group, z * u[:, None])
    scores = scores[np.bincount(group) > 0]
    g = len(scores)
    meat = scores.T @ scores
    # CR1 small-sample factor
    factor = g / (g - 1) * (n - 1) / (n - kz) if g > 1 and n > kz else 1.0
    vcov = factor * zz_inv @ meat @ zz_inv
    return OlsResult(tuple(names), coef, np.sqrt(np.clip(np.diag(vcov), 0, None)), vcov, u)


def ols_benchmark(sample: Sample, controls: bool = False, peer_only: bool = False) -> OlsResult:
    """Regression of Y on (1, D, T/L, D T/L), optionally with covariate controls.

    ``peer_only`` regresses Y on (1, T/L) alone. Standard errors are clustered
    by group.
    """
    if peer_only:
        z, names = sample.x[:, [0, 2]], ["const", "share"]
    else:
        z, names = sample.x, ["const", "d", "share", "d_share"]
    if controls:
        extra = np.column_stack([sample.cx[:, 1:], sample.psi])
        z = np.column_stack([z, extra])
        names = names + [f"c_{j + 1}" for j in range(sample.cx.shape[1] - 1)]
        names += [f"psi_{j + 1}" for j in range(sample.psi.shape[1])]
    return _cluster_ols(z, sample.y, sample.group, names)


@dataclass(frozen=True)
class BalanceResult:
    covariate_index: int
    coef: np.ndarray
    se: np.ndarray
    wald: float
    wald_p: float


def wald_slopes(est: TauEstimate) -> tuple[float, float]:
    """Wald statistic and chi-square(3) p-value for zero slope coefficients."""
    slopes = est.as_array()[1:]
    v = est.tau_vcov[1:, 1:]
    try:
        stat = float(slopes @ np.linalg.solve(v, slopes))
    except np.linalg.LinAlgError:
        return float("nan"), float("nan")
    if not np.isfinite(stat) or stat < 0:
        return float("nan"), float("nan")
    return stat, float(stats.chi2.sf(stat, df=3))


def placebo_test(sample: Sample, theta_hat: ScoreParams | None, outcome,
                 options: EstimatorOptions = EstimatorOptions(), scores=None,
                 covariate_index: int = -1) -> BalanceResult:
    """Re-estimate with ``outcome`` (a pre-treatment variable) in place of Y."""
    est = estimate_tau(sample.with_outcome(outcome), theta_hat, options, "ATE", scores)
    stat, p = wald_slopes(est)
    return BalanceResult(covariate_index, est.as_array(), est.se, stat, p)


def placebo_balance(sample: Sample, theta_hat: ScoreParams | None, covariate_index: int,
                    options: EstimatorOptions = EstimatorOptions(), scores=None) -> BalanceResult:
    """Covariate balancing test: re-estimate with a covariate as the outcome.

    Under balance the slope coefficients of the covariate on (D, T/L, D T/L)
    are zero; the Wald test uses the sandwich coefficient block.
    """
    k = sample.cx.shape[1] - 1
    if not 0 <= covariate_index < k:
        raise ValidationError(f"covariate_index must lie in [0, {k})")
    return placebo_test(sample, theta_hat, sample.cx[:, 1 + covariate_index], options, scores,
                        covariate_index)
