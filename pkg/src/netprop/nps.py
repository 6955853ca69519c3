"""Network propensity score mathematics.

The conditional second-moment matrix of X = (1, D, phi, D*phi) factors as
``Lambda(p_f, L) kron B(p_d)`` given the scores, so every Q_xx this module
builds (closed form or quadrature mixture) is determined by five per-node
moments::

    E[p_d], E[p_f], E[p_f p_d], E[phi2], E[phi2 p_d]

with ``phi2 = p_f (1 - p_f) / L + p_f**2``. ``assemble_q`` lays them out in
the 4x4 pattern and ``MOMENT_MULTIPLICITY`` counts how often each appears,
which turns the squared Frobenius residual into a weighted sum over moments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special, stats

from .core import EIG_FLOOR, NetworkPropensityScore, gated_inverse, kron
from .errors import (
    DegenerateNetwork,
    InvalidCovariance,
    NoLinkMass,
    OverlapViolation,
    SingularMatrix,
    ValidationError,
)

MOMENT_MULTIPLICITY = np.array([3.0, 2.0, 6.0, 1.0, 3.0])

# moment index occupying each entry of Q (-1 marks the constant 1)
_Q_PATTERN = np.array([
    [-1, 0, 1, 2],
    [0, 0, 2, 2],
    [1, 2, 3, 4],
    [2, 2, 4, 4],
])


def logistic(eta):
    return special.expit(eta)


def logistic_score(c, psi_obs, psi_star, coeffs, loadings=()) -> float:
    """Logit score with intercept ``coeffs[0]`` and slopes ``coeffs[1:]``."""
    coeffs = np.asarray(coeffs, dtype=float)
    eta = coeffs[0] + np.dot(np.atleast_1d(c), coeffs[1:])
    if len(loadings):
        eta += np.dot(np.atleast_1d(psi_obs), loadings)
    return float(special.expit(eta + psi_star))


def phi_tilde(p_f, l):
    """First and second moments of T/L given (p_f, L = l) under Binomial(p_f, l)."""
    p_f = np.asarray(p_f, dtype=float)
    m1 = p_f
    m2 = p_f * (1.0 - p_f) / l + p_f**2
    if m1.ndim == 0:
        return float(m1), float(m2)
    return m1, m2


def qxx_closed(p: NetworkPropensityScore) -> np.ndarray:
    m1, m2 = phi_tilde(p.p_f, p.l)
    lam = np.array([[1.0, m1], [m1, m2]])
    b = np.array([[1.0, p.p_d], [p.p_d, p.p_d]])
    return kron(lam, b)


def moments_from_scores(p_d, p_f, l) -> np.ndarray:
    """Per-node moment rows for degenerate (known) scores."""
    p_d, p_f = np.asarray(p_d, dtype=float), np.asarray(p_f, dtype=float)
    _, f2 = phi_tilde(p_f, np.asarray(l, dtype=float))
    return np.column_stack([p_d, p_f, p_f * p_d, f2, f2 * p_d])


def regressor_moments(x: np.ndarray) -> np.ndarray:
    """Sample counterparts (D, phi, D phi, phi^2, D phi^2) of the model moments."""
    d, phi = x[:, 1], x[:, 2]
    return np.column_stack([d, phi, d * phi, phi**2, d * phi**2])


def assemble_q(m: np.ndarray) -> np.ndarray:
    """Stack of Q_xx matrices, shape ``(n, 4, 4)``, from moment rows ``(n, 5)``."""
    m = np.atleast_2d(m)
    padded = np.column_stack([m, np.ones(len(m))])
    return padded[:, _Q_PATTERN]


def iw_kernel(p: NetworkPropensityScore, d: int, t: int, y: float) -> np.ndarray:
    """Q_xx^{-1} X Y in the factored closed form."""
    if not p.interior:
        raise OverlapViolation(f"scores on the boundary: {p}")
    if not 0 <= t <= p.l:
        raise ValidationError("need 0 <= T <= L")
    return iw_kernel_arrays(p.p_d, p.p_f, p.l, d, t, y)[0]


def iw_kernel_arrays(p_d, p_f, l, d, t, y) -> np.ndarray:
    p_d, p_f, l, d, t, y = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (p_d, p_f, l, d, t, y))
    spill_a = 1.0 + (p_f * l - t) / (1.0 - p_f)
    spill_b = (t - p_f * l) / (p_f * (1.0 - p_f))
    own_a = (1.0 - d) * y / (1.0 - p_d)
    own_b = d * y / p_d - own_a
    return np.column_stack([spill_a * own_a, spill_a * own_b, spill_b * own_a, spill_b * own_b])


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor-product Gauss-Hermite rule for a standard bivariate normal."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def transform(self, mean, chol) -> np.ndarray:
        return np.asarray(mean)[None, :] + self.nodes @ np.asarray(chol).T


def gauss_hermite_rule(order: int = 9) -> QuadratureRule:
    if order < 1:
        raise ValidationError("quadrature order must be positive")
    x, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / w.sum()
    z1, z2 = np.meshgrid(x, x, indexing="ij")
    nodes = np.column_stack([z1.ravel(), z2.ravel()])
    weights = np.outer(w, w).ravel()
    weights = weights / weights.sum()
    return QuadratureRule(nodes, weights, order)


def point_rule() -> QuadratureRule:
    """Single node at the mean; the no-random-effects limit."""
    return QuadratureRule(np.zeros((1, 2)), np.ones(1), 1)


def _vec(a) -> np.ndarray:
    return np.atleast_1d(np.asarray(a, dtype=float))


@dataclass(frozen=True)
class ScoreParams:
    """Logit scores with a bivariate normal group effect.

    ``theta_d`` and ``theta_f`` carry the intercept first. The random-effect
    covariance is stored as (log sigma1, atanh rho, log sigma2); a log sigma of
    ``-inf`` switches that component off.
    """

    theta_d: np.ndarray
    theta_f: np.ndarray
    theta_dpsi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    theta_fpsi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    log_sigma1: float = -math.inf
    atanh_rho: float = 0.0
    log_sigma2: float = -math.inf

    def __post_init__(self):
        for name in ("theta_d", "theta_f", "theta_dpsi", "theta_fpsi"):
            object.__setattr__(self, name, _vec(getattr(self, name)))
        if self.theta_d.shape != self.theta_f.shape or self.theta_d.size < 1:
            raise ValidationError("theta_d and theta_f need matching length k + 1")
        if self.theta_dpsi.shape != self.theta_fpsi.shape:
            raise ValidationError("group loadings need matching length")
        if not np.isfinite(self.atanh_rho):
            raise InvalidCovariance("correlation must lie strictly inside (-1, 1)")

    @classmethod
    def from_covariance(cls, theta_d, theta_f, cov, theta_dpsi=(), theta_fpsi=()) -> "ScoreParams":
        cov = np.asarray(cov, dtype=float)
        s11, s12, s22 = cov[0, 0], cov[0, 1], cov[1, 1]
        if s11 < 0 or s22 < 0 or s12**2 > s11 * s22 * (1 + 1e-12) or cov[1, 0] != s12:
            raise InvalidCovariance(f"covariance is not symmetric PSD: {cov.tolist()}")
        s1, s2 = math.sqrt(s11), math.sqrt(s22)
        rho = s12 / (s1 * s2) if s1 > 0 and s2 > 0 else 0.0
        if abs(rho) >= 1:
            raise InvalidCovariance("perfectly correlated group effects are not supported")
        with np.errstate(divide="ignore"):
            return cls(theta_d, theta_f, _vec(theta_dpsi), _vec(theta_fpsi),
                       float(np.log(s1)), math.atanh(rho), float(np.log(s2)))

    @property
    def k(self) -> int:
        return self.theta_d.size - 1

    @property
    def p(self) -> int:
        return self.theta_dpsi.size

    @property
    def sigma1(self) -> float:
        return math.exp(self.log_sigma1)

    @property
    def sigma2(self) -> float:
        return math.exp(self.log_sigma2)

    @property
    def rho(self) -> float:
        return math.tanh(self.atanh_rho)

    @property
    def sigma12(self) -> float:
        return self.rho * self.sigma1 * self.sigma2

    @property
    def cov(self) -> np.ndarray:
        return np.array([[self.sigma1**2, self.sigma12], [self.sigma12, self.sigma2**2]])

    @property
    def chol(self) -> np.ndarray:
        r = self.rho
        return np.array([[self.sigma1, 0.0], [r * self.sigma2, math.sqrt(1 - r * r) * self.sigma2]])

    @property
    def has_random_effects(self) -> bool:
        return self.sigma1 > 0 or self.sigma2 > 0

    def to_vector(self, random_effects: bool) -> np.ndarray:
        parts = [self.theta_d, self.theta_f, self.theta_dpsi, self.theta_fpsi]
        if random_effects:
            parts.append([self.log_sigma1, self.atanh_rho, self.log_sigma2])
        return np.concatenate(parts)

    def with_vector(self, v, random_effects: bool) -> "ScoreParams":
        v = np.asarray(v, dtype=float)
        k1, p = self.k + 1, self.p
        cuts = np.cumsum([k1, k1, p, p])
        kw = dict(theta_d=v[:cuts[0]], theta_f=v[cuts[0]:cuts[1]],
                  theta_dpsi=v[cuts[1]:cuts[2]], theta_fpsi=v[cuts[2]:cuts[3]])
        if random_effects:
            kw.update(log_sigma1=float(v[cuts[3]]), atanh_rho=float(v[cuts[3] + 1]),
                      log_sigma2=float(v[cuts[3] + 2]))
        return replace(self, **kw)

    def labels(self, random_effects: bool, covariates=None, group_covariates=None) -> list[str]:
        cov_names = list(covariates) if covariates else [f"c_{j + 1}" for j in range(self.k)]
        psi_names = list(group_covariates) if group_covariates else [f"psi_{j + 1}" for j in range(self.p)]
        out = [f"d:{n}" for n in ["const", *cov_names]]
        out += [f"f:{n}" for n in ["const", *cov_names]]
        out += [f"d:{n}" for n in psi_names] + [f"f:{n}" for n in psi_names]
        if random_effects:
            out += ["log_sigma1", "atanh_rho", "log_sigma2"]
        return out

    def to_dict(self) -> dict:
        return {
            "theta_d": self.theta_d.tolist(), "theta_f": self.theta_f.tolist(),
            "theta_dpsi": self.theta_dpsi.tolist(), "theta_fpsi": self.theta_fpsi.tolist(),
            "log_sigma1": self.log_sigma1, "atanh_rho": self.atanh_rho,
            "log_sigma2": self.log_sigma2,
        }

    @classmethod
    def zeros(cls, k: int, p: int = 0, random_effects: bool = False) -> "ScoreParams":
        sig = math.log(0.5) if random_effects else -math.inf
        return cls(np.zeros(k + 1), np.zeros(k + 1), np.zeros(p), np.zeros(p), sig, 0.0, sig)


@dataclass
class ScoreMoments:
    """Model moments per node and, optionally, their parameter Jacobian."""

    m: np.ndarray
    dm: np.ndarray | None
    clamped: np.ndarray


def model_moments(cx, psi, l, params: ScoreParams, rule: QuadratureRule,
                  random_effects: bool, jacobian: bool = False,
                  clamp: tuple[float, float] | None = None) -> ScoreMoments:
    """Integrated moments for every node.

    ``cx`` is the ``(n, k+1)`` covariate block with a leading column of ones,
    ``psi`` the ``(n, p)`` observed group covariates of each node's group.
    With ``random_effects`` false the group effect sits at its mean and the
    Jacobian omits the covariance parameters.
    """
    cx = np.atleast_2d(cx)
    n = cx.shape[0]
    psi = np.zeros((n, 0)) if psi is None else np.asarray(psi, dtype=float).reshape(n, -1)
    l = np.asarray(l, dtype=float).reshape(n, 1)
    base_d = cx @ params.theta_d + psi @ params.theta_dpsi
    base_f = cx @ params.theta_f + psi @ params.theta_fpsi
    if random_effects:
        z, w = rule.nodes, rule.weights
        s1, s2, r = params.sigma1, params.sigma2, params.rho
        sq = math.sqrt(1 - r * r)
        u_d = s1 * z[:, 0]
        u_f = s2 * (r * z[:, 0] + sq * z[:, 1])
        v_rho = s2 * ((1 - r * r) * z[:, 0] - r * sq * z[:, 1])
    else:
        w = np.ones(1)
        u_d = u_f = np.zeros(1)
    pd = special.expit(base_d[:, None] + u_d[None, :])
    pf = special.expit(base_f[:, None] + u_f[None, :])
    gd, gf = pd * (1 - pd), pf * (1 - pf)
    clamped = np.zeros(n, dtype=bool)
    if clamp is not None:
        lo, hi = clamp
        hit_d = (pd < lo) | (pd > hi)
        hit_f = (pf < lo) | (pf > hi)
        clamped = (hit_d | hit_f).any(axis=1)
        pd, pf = np.clip(pd, lo, hi), np.clip(pf, lo, hi)
        gd, gf = np.where(hit_d, 0.0, gd), np.where(hit_f, 0.0, gf)
    f2 = pf * (1 - pf) / l + pf**2
    m = np.column_stack([pd @ w, pf @ w, (pf * pd) @ w, f2 @ w, (f2 * pd) @ w])
    if not jacobian:
        return ScoreMoments(m, None, clamped)

    df2 = gf * ((1 - 2 * pf) / l + 2 * pf)
    zero = np.zeros_like(pd)
    a = [gd, zero, pf * gd, zero, f2 * gd]          # d moment / d eta_d
    b = [zero, gf, pd * gf, df2, pd * df2]          # d moment / d eta_f
    cols = []
    aw = np.column_stack([x @ w for x in a])       # (n, 5)
    bw = np.column_stack([x @ w for x in b])
    cols.append(aw[:, :, None] * cx[:, None, :])
    cols.append(bw[:, :, None] * cx[:, None, :])
    cols.append(aw[:, :, None] * psi[:, None, :])
    cols.append(bw[:, :, None] * psi[:, None, :])
    if random_effects:
        cols.append(np.column_stack([x @ (w * u_d) for x in a])[:, :, None])
        cols.append(np.column_stack([x @ (w * v_rho) for x in b])[:, :, None])
        cols.append(np.column_stack([x @ (w * u_f) for x in b])[:, :, None])
    return ScoreMoments(m, np.concatenate(cols, axis=2), clamped)


def qxx_mixture(c, psi_obs, l, params: ScoreParams, rule: QuadratureRule) -> np.ndarray:
    """Q_xx integrated over the normal group effect N(mu_g, Sigma)."""
    if not np.all(np.isfinite(params.cov)) or min(np.linalg.eigvalsh(params.cov)) < -1e-12:
        raise InvalidCovariance("random-effect covariance is not PSD")
    cx = np.concatenate([[1.0], np.atleast_1d(np.asarray(c, dtype=float))])[None, :]
    psi = np.atleast_1d(np.asarray(psi_obs, dtype=float))[None, :] if params.p else None
    mom = model_moments(cx, psi, [l], params, rule, random_effects=True)
    return assemble_q(mom.m)[0]


def pseudometric_d_psi(link_row_i, link_row_j, f_weights) -> float:
    li, lj, f = (np.asarray(a, dtype=float) for a in (link_row_i, link_row_j, f_weights))
    if not li.shape == lj.shape == f.shape:
        raise ValidationError("link rows and weights must have the same length")
    if abs(f.sum() - 1.0) > 1e-9 or np.any(f < 0):
        raise ValidationError("weights must be a probability vector")
    return float(math.sqrt(np.sum(f * (li - lj) ** 2)))


@dataclass(frozen=True)
class GapBoundCheck:
    d_f: float
    d_psi: float
    p_l_i: float
    bound_satisfied: bool
    bound_factor1_satisfied: bool


def friend_score_gap_bound_check(link_rows, h_values, f_weights, tol: float = 1e-12) -> GapBoundCheck:
    """Compare the friend-score gap of two types with their link pseudo-metric.

    ``link_rows`` is a pair of rows of link probabilities against every type.
    ``bound_satisfied`` uses the factor-2 bound, the factor-1 flag is reported
    alongside.
    """
    li, lj = (np.asarray(r, dtype=float) for r in link_rows)
    h, f = np.asarray(h_values, dtype=float), np.asarray(f_weights, dtype=float)
    d_psi = pseudometric_d_psi(li, lj, f)
    p_i, p_j = float(f @ li), float(f @ lj)
    if p_i <= 0 or p_j <= 0:
        raise NoLinkMass("a type with zero link probability has no friend score")
    d_f = abs(float(np.sum(h * (li / p_i - lj / p_j) * f)))
    return GapBoundCheck(d_f, d_psi, p_i, d_f <= 2 * d_psi / p_i + tol, d_f <= d_psi / p_i + tol)


def tv_bound(p1: float, p2: float, p_l: float) -> float:
    gap = abs(p2 - p1)
    return 2.0 * max(1.0 - (1.0 - gap) ** p_l, p_l * gap)


def tv_exact(p1: float, p2: float, p_l: float, tail_tol: float = 1e-12,
             return_error: bool = False):
    """Summed absolute pmf difference between the two Poisson-Binomial hierarchies.

    The Poisson count is truncated once its upper tail drops below
    ``tail_tol``; the truncation changes the sum by at most ``2 * tail_tol``,
    returned as the second element when ``return_error`` is set.
    """
    if not 0 < tail_tol <= 1e-6:
        raise ValidationError("tail_tol must lie in (0, 1e-6]")
    if p_l == 0:
        return (0.0, 0.0) if return_error else 0.0
    y_max = int(stats.poisson.isf(tail_tol, p_l)) + 1
    total = 0.0
    for y in range(y_max + 1):
        x = np.arange(y + 1)
        diff = np.abs(stats.binom.pmf(x, y, p1) - stats.binom.pmf(x, y, p2)).sum()
        total += stats.poisson.pmf(y, p_l) * diff
    err = 2.0 * float(stats.poisson.sf(y_max, p_l))
    return (float(total), err) if return_error else float(total)


def dbar_moments(p_l: float, p_f: float, n: int) -> tuple[float, float]:
    """First moment and second-to-first moment ratio of the treated-friend share.

    Friend counts are Binomial(n, p_l); isolated nodes contribute a share of 0.
    """
    if not 0 < p_l <= 1:
        raise DegenerateNetwork("link probability must lie in (0, 1]")
    reach = 1.0 - (1.0 - p_l) ** n
    ls = np.arange(1, n + 1)
    inv_l = float(np.sum(stats.binom.pmf(ls, n, p_l) / ls) / reach)
    return reach * p_f, inv_l * (1.0 - p_f) + p_f


def dinv_jacobian(q, dq, floor: float = EIG_FLOOR) -> np.ndarray:
    """Directional derivative of the inverse: -Q^{-1} dQ Q^{-1}."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    dq = np.atleast_2d(np.asarray(dq, dtype=float))
    qi = gated_inverse(q, floor) if np.allclose(q, q.T) else _plain_inverse(q)
    return -qi @ dq @ qi


def _plain_inverse(q: np.ndarray) -> np.ndarray:
    s = np.linalg.svd(q, compute_uv=False)
    if s[-1] <= EIG_FLOOR * max(1.0, s[0]):
        raise SingularMatrix("matrix is numerically singular")
    return np.linalg.inv(q)
