"""Simulated grouped network data with selection and homophilous link formation.

Each group draws a latent effect ``psi_star = (psi_d, psi_f)``, i.i.d.
covariates, dyadic links with probability
``logistic(a0 - a1 * |c_i - c_j| + psi_f)`` and treatments from a logit
selection rule (or from a saturation / one-sided compliance experiment).
Every group uses its own seed stream keyed by ``(seed, g)``, so group ``g``
is identical whatever the number of groups.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special, stats

from .core import GroupData, NetworkPanel, design_matrix
from .errors import (
    DegenerateDesign,
    DegenerateNetwork,
    InconsistentPrimitives,
    NoLinkMass,
    ValidationError,
)
from .nps import ScoreParams

DESIGNS = ("observational", "saturation", "one_sided")
MAX_ATOMS = 16

# seed sub-streams per group
_SIZE, _COV, _PSI, _LINK, _TREAT, _COEF, _COMPLIER, _MC = range(8)


@dataclass(frozen=True)
class DgpConfig:
    """Full description of a data-generating process.

    ``covariate_laws`` holds one entry per covariate: a float ``q`` for
    Bernoulli(q) or ``"normal"`` for N(0, 1). ``group_size`` is a fixed size
    or an inclusive ``(lo, hi)`` range drawn uniformly; ranges must satisfy
    ``lo >= ceil(min_ratio * hi)``. ``tau_loadings`` has one row per
    coefficient (alpha, beta, gamma, delta) and one column per covariate; the
    loadings act on covariates centred at their population means.
    ``tau_noise_sd`` is a single standard deviation or one per coefficient.
    """

    num_groups: int = 200
    group_size: int | tuple[int, int] = (20, 40)
    covariate_laws: tuple = (0.5,)
    selection: tuple = (-0.5, 1.0)
    link_kernel: tuple = (-1.0, 2.0)
    group_effect_cov: tuple = ((0.0, 0.0), (0.0, 0.0))
    psi_loading_d: tuple = ()
    psi_loading_f: tuple = ()
    tau0: tuple = (1.0, 0.5, 0.8, -0.3)
    tau_loadings: tuple = ((1.0,), (0.5,), (1.0,), (0.5,))
    tau_noise_sd: float | tuple = 0.5
    design: str = "observational"
    saturations: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    complier_coeffs: tuple = (0.0,)
    min_ratio: float = 0.5
    mc_draws: int = 2000

    def __post_init__(self):
        k = self.k
        if self.num_groups < 1:
            raise ValidationError("num_groups must be at least 1")
        lo, hi = self.size_range
        if lo < 2 or hi < lo:
            raise ValidationError("group sizes must be >= 2 with lo <= hi")
        if lo < math.ceil(self.min_ratio * hi):
            raise ValidationError(f"group size range violates the bounded ratio {self.min_ratio}")
        for law in self.covariate_laws:
            if law != "normal" and not (isinstance(law, (int, float)) and 0 < law < 1):
                raise ValidationError(f"unknown covariate law {law!r}")
        if len(self.selection) != k + 1:
            raise ValidationError("selection needs an intercept plus one slope per covariate")
        if len(self.link_kernel) != 2 or self.link_kernel[1] < 0:
            raise ValidationError("link_kernel is (a0, a1) with a1 >= 0")
        cov = np.asarray(self.group_effect_cov, dtype=float)
        if cov.shape != (2, 2) or not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov)[0] < -1e-12:
            raise ValidationError("group_effect_cov must be a symmetric PSD 2x2 matrix")
        if len(self.psi_loading_d) != len(self.psi_loading_f):
            raise ValidationError("group covariate loadings must have equal length")
        if len(self.tau0) != 4 or np.shape(self.tau_loadings) not in ((4, k), (4, 0)):
            raise ValidationError("tau0 is a 4-vector and tau_loadings is 4 x k")
        if np.size(self.tau_noise_sd) not in (1, 4) or np.any(np.asarray(self.tau_noise_sd) < 0):
            raise ValidationError("tau_noise_sd is a nonnegative scalar or 4-vector")
        if self.design not in DESIGNS:
            raise ValidationError(f"design must be one of {DESIGNS}")
        if self.design != "observational":
            if not self.saturations:
                raise ValidationError("saturation set is empty")
            if any(not 0 <= s <= 1 for s in self.saturations):
                raise ValidationError("saturations must lie in [0, 1]")
        if self.design == "one_sided" and len(self.complier_coeffs) not in (1, k + 1):
            raise ValidationError("complier_coeffs is an intercept, optionally with k slopes")

    @property
    def k(self) -> int:
        return len(self.covariate_laws)

    @property
    def p(self) -> int:
        return len(self.psi_loading_d)

    @property
    def size_range(self) -> tuple[int, int]:
        if isinstance(self.group_size, (int, np.integer)):
            return int(self.group_size), int(self.group_size)
        lo, hi = self.group_size
        return int(lo), int(hi)

    @property
    def covariate_means(self) -> np.ndarray:
        return np.array([0.0 if law == "normal" else float(law) for law in self.covariate_laws])

    @property
    def group_effects_degenerate(self) -> bool:
        return not np.any(np.asarray(self.group_effect_cov)) and not any(
            self.psi_loading_d) and not any(self.psi_loading_f)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DgpConfig":
        def tup(v):
            return tuple(tup(x) for x in v) if isinstance(v, (list, tuple)) else v

        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown DGP config keys: {sorted(unknown)}")
        return cls(**{key: tup(v) for key, v in d.items()})

    def replace(self, **kw) -> "DgpConfig":
        return DgpConfig(**{**self.__dict__, **kw})


@dataclass(frozen=True)
class GroupTruth:
    psi_star: np.ndarray
    p_d: np.ndarray
    p_f: np.ndarray
    p_l: np.ndarray
    p_nf: np.ndarray
    tau: np.ndarray
    saturation: float = math.nan
    complier: np.ndarray | None = None


@dataclass(frozen=True)
class SimulatedPanel:
    panel: NetworkPanel
    truth: tuple[GroupTruth, ...]
    config: DgpConfig
    seed: int
    tau_target: np.ndarray = field(default_factory=lambda: np.full(4, np.nan))

    def node_truth(self) -> dict[str, np.ndarray]:
        """Per-node truth concatenated in panel order."""
        out = {name: np.concatenate([getattr(t, name) for t in self.truth])
               for name in ("p_d", "p_f", "p_l", "p_nf")}
        out["tau"] = np.vstack([t.tau for t in self.truth])
        out["group"] = np.concatenate([np.full(g.n, i) for i, g in enumerate(self.panel.groups)])
        if self.truth[0].complier is not None:
            out["complier"] = np.concatenate([t.complier for t in self.truth])
        return out


def _group_streams(seed: int, g: int) -> list[np.random.Generator]:
    ss = np.random.SeedSequence(seed, spawn_key=(g,))
    return [np.random.default_rng(s) for s in ss.spawn(8)]


def type_support(config: DgpConfig, rng: np.random.Generator | None = None,
                 mc_draws: int | None = None) -> tuple[np.ndarray, np.ndarray, bool]:
    """Atoms and weights of the covariate law.

    Exact enumeration when every covariate is Bernoulli and there are at most
    16 atoms; otherwise ``mc_draws`` i.i.d. draws with equal weight. The last
    return value says whether the support is exact.
    """
    laws = config.covariate_laws
    if all(law != "normal" for law in laws) and 2 ** len(laws) <= MAX_ATOMS:
        atoms = np.array(list(itertools.product((0.0, 1.0), repeat=len(laws)))).reshape(-1, len(laws))
        q = np.array(laws, dtype=float)
        w = np.prod(np.where(atoms == 1.0, q, 1 - q), axis=1) if len(laws) else np.ones(1)
        return atoms, w, True
    rng = rng if rng is not None else np.random.default_rng(0)
    m = mc_draws or config.mc_draws
    return _draw_covariates(config, m, rng), np.full(m, 1.0 / m), False


def _draw_covariates(config: DgpConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    cols = []
    for law in config.covariate_laws:
        if law == "normal":
            cols.append(rng.standard_normal(n))
        else:
            cols.append((rng.random(n) < law).astype(float))
    return np.column_stack(cols) if cols else np.zeros((n, 0))


def _distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))


def link_probability(c_i, c_j, psi_f: float, config: DgpConfig) -> np.ndarray:
    a0, a1 = config.link_kernel
    return special.expit(a0 - a1 * _distance(np.atleast_2d(c_i), np.atleast_2d(c_j)) + psi_f)


def selection_probability(c, psi_d: float, config: DgpConfig) -> np.ndarray:
    coef = np.asarray(config.selection, dtype=float)
    return special.expit(coef[0] + np.atleast_2d(c) @ coef[1:] + psi_d)


def complier_probability(c, config: DgpConfig) -> np.ndarray:
    coef = np.asarray(config.complier_coeffs, dtype=float)
    c = np.atleast_2d(c)
    eta = coef[0] + (c @ coef[1:] if coef.size > 1 else 0.0)
    return special.expit(np.broadcast_to(eta, (c.shape[0],)))


def _friend_scores(c_nodes, atoms, weights, h_atoms, psi_f, config):
    """Link and friend scores of each node against a type support."""
    lmat = link_probability(c_nodes, atoms, psi_f, config)
    p_l = lmat @ weights
    num = lmat @ (weights * h_atoms)
    if np.any(p_l <= 0):
        raise NoLinkMass("a node has zero link probability")
    return p_l, num / p_l, lmat


def true_friend_score(c, psi_star, config: DgpConfig, mc_draws: int = 10_000, seed: int = 0,
                      h=None) -> tuple[float, float]:
    """Probability that a linked potential friend is treated, with its MC standard error.

    ``psi_star`` is the group effect ``(psi_d, psi_f)``. ``h`` overrides the
    treatment probability of a partner type (defaults to the selection rule).
    For discrete laws with at most 16 atoms the value is exact and the
    standard error zero.
    """
    if mc_draws < 1:
        raise ValidationError("mc_draws must be positive")
    psi_d, psi_f = float(psi_star[0]), float(psi_star[1])
    atoms, w, exact = type_support(config, np.random.default_rng(seed), mc_draws)
    h_atoms = selection_probability(atoms, psi_d, config) if h is None else np.asarray(h(atoms), float)
    lrow = link_probability(np.atleast_1d(np.asarray(c, dtype=float)), atoms, psi_f, config)[0]
    den = float(lrow @ w)
    if den <= 0:
        raise NoLinkMass("no link mass for this covariate value")
    num = float(lrow @ (w * h_atoms))
    value = num / den
    if exact:
        return value, 0.0
    # delta-method standard error of a ratio of means
    resid = lrow * (h_atoms - value)
    se = float(np.sqrt(np.mean(resid**2) / len(w)) / den)
    return value, se


def clearing_residual(p_D: float, p_l: float, p_f: float) -> float:
    """Treatment probability of non-friends implied by the friend and overall rates."""
    if p_l >= 1:
        raise DegenerateNetwork("non-friend score undefined when everyone links (p_l = 1)")
    p_nf = (p_D - p_l * p_f) / (1 - p_l)
    if not -1e-12 <= p_nf <= 1 + 1e-12:
        raise InconsistentPrimitives(f"implied non-friend score {p_nf:.4g} outside [0, 1]")
    return float(min(max(p_nf, 0.0), 1.0))


def _chol_psd(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    return vecs * np.sqrt(np.clip(vals, 0, None))


def _simulate_group(config: DgpConfig, seed: int, g: int):
    rs = _group_streams(seed, g)
    lo, hi = config.size_range
    n = int(rs[_SIZE].integers(lo, hi + 1))
    c = _draw_covariates(config, n, rs[_COV])
    psi_obs = rs[_PSI].standard_normal(config.p)
    z = rs[_PSI].standard_normal(2)
    mean = np.array([psi_obs @ np.asarray(config.psi_loading_d, float),
                     psi_obs @ np.asarray(config.psi_loading_f, float)]) if config.p else np.zeros(2)
    psi_star = mean + _chol_psd(np.asarray(config.group_effect_cov, float)) @ z

    p_link = link_probability(c, c, psi_star[1], config)
    u = rs[_LINK].random((n, n))
    a = np.triu(u < p_link, k=1)
    a = (a | a.T).astype(np.int8)

    atoms, w, _ = type_support(config, rs[_MC])
    saturation, complier = math.nan, None
    if config.design == "observational":
        p_d = selection_probability(c, psi_star[0], config)
        d = (rs[_TREAT].random(n) < p_d).astype(np.int8)
        h_atoms = selection_probability(atoms, psi_star[0], config)
        p_l, p_f, _ = _friend_scores(c, atoms, w, h_atoms, psi_star[1], config)
        p_D = float(w @ h_atoms)
    else:
        saturation = float(rs[_TREAT].choice(np.asarray(config.saturations, dtype=float)))
        offer = (rs[_TREAT].random(n) < saturation).astype(np.int8)
        if config.design == "saturation":
            d = offer
            p_l, _, _ = _friend_scores(c, atoms, w, np.zeros(len(w)), psi_star[1], config)
            p_d = p_f = np.full(n, saturation)
            p_D = saturation
        else:
            pi = complier_probability(c, config)
            complier = (rs[_COMPLIER].random(n) < pi).astype(np.int8)
            d = (complier * offer).astype(np.int8)
            pi_atoms = complier_probability(atoms, config)
            p_l, share, _ = _friend_scores(c, atoms, w, pi_atoms, psi_star[1], config)
            p_d = complier * saturation
            p_f = share * saturation
            p_D = float(w @ pi_atoms) * saturation
    with np.errstate(divide="ignore", invalid="ignore"):
        p_nf = np.clip((p_D - p_l * p_f) / (1 - p_l), 0.0, 1.0)

    loadings = np.asarray(config.tau_loadings, dtype=float).reshape(4, config.k)
    tau = (np.asarray(config.tau0, float) + (c - config.covariate_means) @ loadings.T
           + np.asarray(config.tau_noise_sd, float) * rs[_COEF].standard_normal((n, 4)))
    links = a.sum(axis=1)
    treated = a.astype(int) @ d.astype(int)
    y = tau[:, 0].copy()
    has = links > 0
    if has.any():
        x = design_matrix(d[has], treated[has], links[has])
        y[has] = np.einsum("ij,ij->i", x, tau[has])
    group = GroupData(g, a, d, y, c, psi_obs)
    truth = GroupTruth(psi_star, np.asarray(p_d, float), np.asarray(p_f, float), p_l, p_nf,
                       tau, saturation, None if complier is None else complier.astype(bool))
    return group, truth


def simulate(config: DgpConfig, seed: int) -> SimulatedPanel:
    try:
        groups, truths = zip(*(_simulate_group(config, seed, g) for g in range(config.num_groups)))
    except NoLinkMass as exc:
        raise DegenerateDesign(f"link kernel has no mass: {exc}") from exc
    if all(gr.adjacency.sum() == 0 for gr in groups):
        raise DegenerateDesign("link kernel produced no links in any group")
    try:
        target = target_tau(config)
    except ValidationError:
        target = np.full(4, np.nan)
    return SimulatedPanel(NetworkPanel(tuple(groups)), tuple(truths), config, seed, target)


def simulate_saturation(config: DgpConfig, seed: int) -> SimulatedPanel:
    if config.design != "saturation":
        raise ValidationError("simulate_saturation needs design='saturation'")
    return simulate(config, seed)


def simulate_one_sided(config: DgpConfig, seed: int) -> SimulatedPanel:
    if config.design != "one_sided":
        raise ValidationError("simulate_one_sided needs design='one_sided'")
    return simulate(config, seed)


def _psi_f_nodes(config: DgpConfig) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature for the marginal law of the link group effect."""
    var = float(config.group_effect_cov[1][1]) + float(np.sum(np.square(config.psi_loading_f)))
    if var == 0:
        return np.zeros(1), np.ones(1)
    x, w = np.polynomial.hermite_e.hermegauss(40)
    return math.sqrt(var) * x, w / w.sum()


def target_tau(config: DgpConfig, compliers_only: bool = False) -> np.ndarray:
    """Population average of the coefficients over linked individuals.

    Averages over nodes (so groups weigh by size) restricted to ``L > 0`` and,
    when ``compliers_only``, to compliers. Exact for discrete covariate laws;
    otherwise integrates over a fixed Monte Carlo covariate sample.
    """
    atoms, w, _ = type_support(config, np.random.default_rng(12345), 20_000)
    # own-type weights; partners range over all types
    own = w * complier_probability(atoms, config) if compliers_only else w
    lo, hi = config.size_range
    sizes = np.arange(lo, hi + 1)
    psi_f, psi_w = _psi_f_nodes(config)
    reach = np.zeros(len(atoms))
    for pf_val, pw in zip(psi_f, psi_w):
        p_l = link_probability(atoms, atoms, pf_val, config) @ w
        for n in sizes:
            reach += pw * n * (1 - (1 - p_l) ** (n - 1)) / len(sizes)
    mass = own * reach
    if mass.sum() <= 0:
        raise DegenerateDesign("no linked individuals in the population")
    loadings = np.asarray(config.tau_loadings, dtype=float).reshape(4, config.k)
    tau_c = np.asarray(config.tau0, float) + (atoms - config.covariate_means) @ loadings.T
    return mass @ tau_c / mass.sum()


def true_score_params(config: DgpConfig) -> ScoreParams:
    """Logit parameters reproducing the true scores exactly.

    Only available when the logit family is saturated: one Bernoulli covariate
    and no group heterogeneity.
    """
    if config.k != 1 or config.covariate_laws[0] == "normal" or not config.group_effects_degenerate:
        raise ValidationError("exact logit parameters need one Bernoulli covariate and no group effects")
    if config.design != "observational":
        raise ValidationError("exact logit parameters are defined for observational designs")
    pf = [true_friend_score([v], (0.0, 0.0), config)[0] for v in (0.0, 1.0)]
    lf = special.logit(pf)
    return ScoreParams(np.asarray(config.selection, float), np.array([lf[0], lf[1] - lf[0]]))


def _linked_strata(config: DgpConfig):
    """Node-level law of (covariate atom, L) among linked nodes.

    Returns atoms, friend-count values and the joint weight matrix (atoms x
    counts) normalized to one. Needs a discrete covariate law and degenerate
    group effects.
    """
    atoms, w, exact = type_support(config)
    if not exact or not config.group_effects_degenerate:
        raise ValidationError("enumeration needs discrete covariates and no group effects")
    lo, hi = config.size_range
    counts = np.arange(1, hi)
    p_l = link_probability(atoms, atoms, 0.0, config) @ w
    joint = np.zeros((len(atoms), len(counts)))
    for n in range(lo, hi + 1):
        pmf = stats.binom.pmf(counts[None, :], n - 1, p_l[:, None])
        joint += n * w[:, None] * pmf
    return atoms, counts, joint / joint.sum()


def peer_ols_population_slope(config: DgpConfig) -> float:
    """Population slope of Y on the treated-friend share among linked nodes.

    Evaluates Cov(p_f(V), alpha(V) | L > 0) / Var(T/L | L > 0) by enumeration
    over covariate atoms and friend counts, for observational designs with
    discrete covariates and no group effects.
    """
    atoms, counts, joint = _linked_strata(config)
    h = selection_probability(atoms, 0.0, config)
    _, w, _ = type_support(config)
    _, p_f, _ = _friend_scores(atoms, atoms, w, h, 0.0, config)
    loadings = np.asarray(config.tau_loadings, dtype=float).reshape(4, config.k)
    alpha = config.tau0[0] + (atoms - config.covariate_means) @ loadings[0]
    w_atom = joint.sum(axis=1)
    mean_pf = w_atom @ p_f
    cov = w_atom @ ((p_f - mean_pf) * (alpha - w_atom @ alpha))
    within = np.sum(joint * (p_f * (1 - p_f))[:, None] / counts[None, :])
    var_share = within + w_atom @ (p_f - mean_pf) ** 2
    return float(cov / var_share)
