"""Numerical verifiers for the analytic properties of the score mathematics.

Each checker returns a list of cases with the two compared quantities, the
margin by which the property holds, and a pass flag.
"""
from __future__ import annotations

import numpy as np

from .dgp import DgpConfig, clearing_residual, link_probability, selection_probability, type_support
from .nps import (
    NetworkPropensityScore,
    ScoreParams,
    dinv_jacobian,
    friend_score_gap_bound_check,
    gauss_hermite_rule,
    qxx_closed,
    qxx_mixture,
    tv_bound,
    tv_exact,
)

TV_PROBS = tuple(np.round(np.linspace(0, 1, 11), 10))
TV_LINK_RATES = (0.5, 1.0, 2.0, 4.0)


def tv_grid(tail_tol: float = 1e-12) -> list[dict]:
    """Exact total variation against its bound on the full probability grid."""
    cases = []
    for p_l in TV_LINK_RATES:
        for p1 in TV_PROBS:
            for p2 in TV_PROBS:
                exact, err = tv_exact(p1, p2, p_l, tail_tol, return_error=True)
                bound = tv_bound(p1, p2, p_l)
                ok = exact <= bound + err and (p1 != p2 or exact == 0.0)
                cases.append({"p1": p1, "p2": p2, "p_l": p_l, "exact": exact, "bound": bound,
                              "margin": bound - exact, "passed": bool(ok)})
    return cases


def pseudometric_instances(n: int = 1000, max_types: int = 8, seed: int = 0) -> list[dict]:
    """Friend-score gap versus the factor-2 pseudo-metric bound on random discrete laws."""
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(n):
        m = int(rng.integers(2, max_types + 1))
        f = rng.dirichlet(np.ones(m))
        link = rng.uniform(0.01, 1.0, size=(m, m))
        link = 0.5 * (link + link.T)
        h = rng.uniform(0, 1, size=m)
        i, j = rng.choice(m, size=2, replace=False)
        res = friend_score_gap_bound_check((link[i], link[j]), h, f)
        bound = 2 * res.d_psi / res.p_l_i
        cases.append({"types": m, "d_f": res.d_f, "bound": bound, "margin": bound - res.d_f,
                      "factor1_holds": res.bound_factor1_satisfied,
                      "passed": res.bound_satisfied})
    return cases


def clearing_enumeration(config: DgpConfig | None = None) -> list[dict]:
    """Clearing formula against direct enumeration of non-friend treatment rates."""
    config = config or DgpConfig()
    atoms, w, _ = type_support(config)
    h = selection_probability(atoms, 0.0, config)
    lmat = link_probability(atoms, atoms, 0.0, config)
    p_D = float(w @ h)
    cases = []
    for a in range(len(atoms)):
        p_l = float(lmat[a] @ w)
        p_f = float(lmat[a] @ (w * h)) / p_l
        direct = float(((1 - lmat[a]) * w) @ h) / (1 - p_l)
        formula = clearing_residual(p_D, p_l, p_f)
        cases.append({"atom": atoms[a].tolist(), "direct": direct, "formula": formula,
                      "margin": 1e-12 - abs(direct - formula),
                      "passed": abs(direct - formula) <= 1e-12})
    return cases


def dinv_fd(n: int = 50, seed: int = 0, h: float = 1e-6) -> list[dict]:
    """Derivative of the inverse against central differences on random SPD matrices."""
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(n):
        a = rng.standard_normal((4, 4))
        q = a @ a.T + 4 * np.eye(4)
        e = rng.standard_normal((4, 4))
        e = 0.5 * (e + e.T)
        fd = (np.linalg.inv(q + h * e) - np.linalg.inv(q - h * e)) / (2 * h)
        an = dinv_jacobian(q, e)
        rel = float(np.abs(fd - an).max() / np.abs(an).max())
        cases.append({"rel_err": rel, "margin": 1e-6 - rel, "passed": rel <= 1e-6})
    return cases


def quadrature_convergence(orders=(3, 5, 7, 9, 11, 15), reference: int = 31) -> list[dict]:
    """Mixture Q_xx by order against a high-order reference, plus the zero-variance limit."""
    params = ScoreParams.from_covariance([0.2, 0.5], [-0.3, 0.4], [[0.8, 0.3], [0.3, 0.6]])
    c, l = [1.0], 3
    ref = qxx_mixture(c, [], l, params, gauss_hermite_rule(reference))
    cases = []
    for order in orders:
        q = qxx_mixture(c, [], l, params, gauss_hermite_rule(order))
        err = float(np.abs(q - ref).max())
        cases.append({"order": order, "max_abs_err": err, "margin": 1e-3 - err,
                      "passed": err <= 1e-3})
    flat = ScoreParams.from_covariance([0.2, 0.5], [-0.3, 0.4], np.zeros((2, 2)))
    q0 = qxx_mixture(c, [], l, flat, gauss_hermite_rule(9))
    from scipy.special import expit

    closed = qxx_closed(NetworkPropensityScore(float(expit(0.7)), float(expit(0.1)), l))
    err = float(np.abs(q0 - closed).max())
    cases.append({"order": "sigma=0", "max_abs_err": err, "margin": 1e-8 - err,
                  "passed": err <= 1e-8})
    return cases


CHECKERS = {
    "tv-grid": tv_grid,
    "pseudo-metric": pseudometric_instances,
    "clearing": clearing_enumeration,
    "dinv": dinv_fd,
    "quadrature": quadrature_convergence,
}


def run_checks(names=None) -> dict:
    names = list(CHECKERS) if not names else list(names)
    out = {}
    for name in names:
        cases = CHECKERS[name]()
        out[name] = {"passed": all(c["passed"] for c in cases), "cases": len(cases),
                     "failures": sum(not c["passed"] for c in cases),
                     "min_margin": float(min(c["margin"] for c in cases)), "detail": cases}
    return out
