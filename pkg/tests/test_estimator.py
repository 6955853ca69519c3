import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.special import comb, expit, logit

from netprop.core import GroupData, NetworkPanel, NetworkPropensityScore, design_matrix
from netprop.dgp import DgpConfig, _linked_strata, simulate, true_score_params
from netprop.errors import OverlapViolation, RankDeficientSystem, ValidationError
from netprop.estimator import (
    EstimatorOptions,
    Sample,
    criterion,
    estimate_tau,
    fit_theta,
    influence_system,
    ols_benchmark,
    placebo_balance,
    prepare,
    residual,
    sandwich,
    score_rows,
    squared_residuals,
)
from netprop.nps import ScoreParams, iw_kernel, qxx_closed

OPTS = EstimatorOptions()

# cell-level scores with small denominators so every (d, t) frequency is exact
CELL_PD = {0: Fraction(1, 2), 1: Fraction(3, 4)}
CELL_PF = {0: Fraction(1, 4), 1: Fraction(1, 2)}


def make_sample(d, t, l, y, c, group) -> Sample:
    d, t, l = (np.asarray(v) for v in (d, t, l))
    c = np.asarray(c, dtype=float)
    group = np.asarray(group)
    return Sample(design_matrix(d, t, l), np.asarray(y, float), np.column_stack([np.ones(len(d)), c]),
                  np.zeros((len(d), 0)), l.astype(float), t.astype(float), group,
                  tuple(range(group.max() + 1)), 0)


def balanced_sample(num_groups=6, links=(1, 2, 3)) -> Sample:
    """Every (d, t) combination replicated in proportion to its exact probability."""
    rows = []
    for c, l in itertools.product((0, 1), links):
        pd, pf = CELL_PD[c], CELL_PF[c]
        for d in (0, 1):
            nd = pd.numerator if d else pd.denominator - pd.numerator
            for t in range(l + 1):
                nt = comb(l, t, exact=True) * pf.numerator**t * (pf.denominator - pf.numerator)**(l - t)
                rows += [(d, t, l, c)] * (nd * nt)
    d, t, l, c = (np.array(v) for v in zip(*rows))
    y = 1.0 + 0.5 * d + 0.8 * t / l + 0.3 * c
    return make_sample(d, t, l, y, c, np.arange(len(d)) % num_groups)


def cell_params() -> ScoreParams:
    ld = logit([float(CELL_PD[0]), float(CELL_PD[1])])
    lf = logit([float(CELL_PF[0]), float(CELL_PF[1])])
    return ScoreParams(np.array([ld[0], ld[1] - ld[0]]), np.array([lf[0], lf[1] - lf[0]]))


def exact_scores(sample):
    c = sample.cx[:, 1].astype(int)
    return (np.array([float(CELL_PD[v]) for v in c]), np.array([float(CELL_PF[v]) for v in c]))


@pytest.fixture(scope="module")
def balanced():
    return balanced_sample()


@pytest.fixture(scope="module")
def fitted(small_sample):
    fit = fit_theta(small_sample, options=OPTS)
    return fit, estimate_tau(small_sample, fit.theta_hat, OPTS)


class TestResidual:
    def test_perfect_fit(self):
        x = np.array([1.0, 1.0, 0.5, 0.5])
        assert not residual(x, np.outer(x, x)).any()

    def test_mirrored_entries(self):
        x = np.array([1.0, 0.0, 0.5, 0.0])
        q = np.outer(x, x)
        q[0, 1] = q[1, 0] = q[0, 1] - 0.5
        assert residual(x, q) @ residual(x, q) == pytest.approx(0.5)

    def test_frobenius_and_column_major(self):
        rng = np.random.default_rng(0)
        x, q = rng.standard_normal(4), rng.standard_normal((4, 4))
        r = residual(x, q)
        assert r @ r == pytest.approx(np.linalg.norm(np.outer(x, x) - q, "fro")**2)
        assert r[1] == pytest.approx(x[1] * x[0] - q[1, 0])


class TestCriterion:
    def test_matches_direct_frobenius_route(self, small_sample):
        params = ScoreParams(np.array([-0.3, 0.7]), np.array([0.2, -0.4]))
        direct = []
        for row in range(small_sample.n):
            c = small_sample.cx[row, 1]
            nps = NetworkPropensityScore(float(expit(-0.3 + 0.7 * c)), float(expit(0.2 - 0.4 * c)),
                                         int(small_sample.l[row]))
            r = residual(small_sample.x[row], qxx_closed(nps))
            direct.append(r @ r)
        np.testing.assert_allclose(squared_residuals(small_sample, params, OPTS), direct, rtol=1e-12)
        assert criterion(small_sample, params) == pytest.approx(np.mean(direct), rel=1e-12)

    def test_single_observation(self):
        s = make_sample([1], [1], [1], [0.0], [0.0], [0])
        params = ScoreParams(np.array([0.0, 0.0]), np.array([0.0, 0.0]))
        # Q for p_d = p_f = 1/2, L = 1 against x = (1, 1, 1, 1)
        q = qxx_closed(NetworkPropensityScore(0.5, 0.5, 1))
        r = residual(np.ones(4), q)
        assert criterion(s, params) == pytest.approx(r @ r)

    def test_empty_sample_rejected(self, balanced):
        with pytest.raises(ValidationError):
            criterion(balanced.select(np.zeros(balanced.n, bool)), cell_params())

    def test_population_value_and_minimizer(self):
        cfg = DgpConfig(num_groups=400)
        sim = simulate(cfg, seed=31)
        sample = prepare(sim.panel)
        truth = true_score_params(cfg)
        sq = squared_residuals(sample, truth, OPTS)
        # enumerate E||r||^2 over the linked-node law of (C, L) and the exact (D, T) law
        atoms, counts, joint = _linked_strata(cfg)
        expected = 0.0
        for a, c in enumerate(atoms[:, 0]):
            pd = float(expit(truth.theta_d @ [1, c]))
            pf = float(expit(truth.theta_f @ [1, c]))
            for j, l in enumerate(counts):
                if joint[a, j] < 1e-15:
                    continue
                q = qxx_closed(NetworkPropensityScore(pd, pf, int(l)))
                t = np.arange(l + 1)
                pt = comb(l, t) * pf**t * (1 - pf)**(l - t)
                x = np.vstack([design_matrix(np.full(l + 1, d), t, np.full(l + 1, l)) for d in (0, 1)])
                pr = np.concatenate([(1 - pd) * pt, pd * pt])
                r2 = ((x[:, :, None] * x[:, None, :] - q) ** 2).sum(axis=(1, 2))
                expected += joint[a, j] * pr @ r2
        # group-clustered standard error of the mean
        sums = np.bincount(sample.group, weights=sq - sq.mean())
        se = math.sqrt(sums @ sums) / sample.n
        assert abs(sq.mean() - expected) < 2 * se
        v = truth.to_vector(False)
        rng = np.random.default_rng(1)
        base = criterion(sample, truth)
        for _ in range(10):
            probe = truth.with_vector(v + rng.normal(0, 0.3, v.size), False)
            assert criterion(sample, probe) > base


class TestFit:
    def test_truth_is_stationary_on_balanced_panel(self, balanced):
        g = score_rows(balanced, cell_params(), OPTS).mean(axis=0)
        assert np.abs(g).max() < 1e-12
        fit = fit_theta(balanced, cell_params(), OPTS)
        assert fit.converged
        np.testing.assert_allclose(fit.theta_hat.to_vector(False), cell_params().to_vector(False), atol=1e-8)

    def test_recovers_truth(self):
        cfg = DgpConfig(num_groups=400)
        sample = prepare(simulate(cfg, seed=41).panel)
        fit = fit_theta(sample, options=OPTS)
        assert fit.converged and fit.gradient_norm <= OPTS.tol_grad
        est = estimate_tau(sample, fit.theta_hat, OPTS)
        se = np.sqrt(np.diag(est.vcov)[:est.theta_dim])
        gap = fit.theta_hat.to_vector(False) - true_score_params(cfg).to_vector(False)
        assert np.all(np.abs(gap) < 3 * se)

    def test_deterministic_and_order_invariant(self, small_sim):
        a = fit_theta(prepare(small_sim.panel), options=OPTS)
        shuffled = NetworkPanel(tuple(reversed(small_sim.panel.groups)))
        b = fit_theta(prepare(shuffled), options=OPTS)
        assert np.array_equal(a.theta_hat.to_vector(False), b.theta_hat.to_vector(False))


def permuted_panel(panel, seed=0):
    rng = np.random.default_rng(seed)
    groups = []
    for g in panel.groups:
        p = rng.permutation(g.n)
        ids = np.arange(g.n) if g.node_ids is None else np.asarray(g.node_ids)
        groups.append(GroupData(g.group_id, g.adjacency[np.ix_(p, p)], g.d[p], g.y[p], g.c[p],
                                g.psi, ids[p]))
    order = rng.permutation(len(groups))
    return NetworkPanel(tuple(groups[i] for i in order))


class TestEstimateTau:
    def test_two_observation_hand_oracle(self):
        # p_d = p_f = 1/2 and L = 1: Q^{-1} = A (x) A with A = [[2, -2], [-2, 4]]
        s = make_sample([1, 0], [1, 0], [1, 1], [3.0, 1.0], [0.0, 0.0], [0, 1])
        est = estimate_tau(s, scores=(np.full(2, 0.5), np.full(2, 0.5)), options=OPTS)
        # row 1: (0, 2) (x) (0, 2) * 3 = (0, 0, 0, 12); row 2: (2, -2) (x) (2, -2) = (4, -4, -4, 4)
        np.testing.assert_allclose(est.as_array(), [2.0, -2.0, -2.0, 8.0], atol=1e-12)

    def test_constant_treatment_score(self, balanced):
        s = balanced
        dbar = s.d.mean()
        scores = (np.full(s.n, dbar), exact_scores(s)[1])
        ate, apt, apu = (estimate_tau(s, scores=scores, options=OPTS, estimand=e).as_array()
                         for e in ("ATE", "APT", "APU"))
        np.testing.assert_allclose(apt, ate, atol=1e-13)
        np.testing.assert_allclose(apu, ate, atol=1e-13)

    def test_mixture_identity(self, small_sample, fitted):
        fit, _ = fitted
        est = {e: estimate_tau(small_sample, fit.theta_hat, OPTS, e).as_array() for e in ("ATE", "APT", "APU")}
        dbar = small_sample.d.mean()
        np.testing.assert_allclose(dbar * est["APT"] + (1 - dbar) * est["APU"], est["ATE"], atol=1e-10)

    def test_scale_and_linearity(self, small_sample, fitted):
        fit, base = fitted
        scaled = estimate_tau(small_sample.with_outcome(2.5 * small_sample.y), fit.theta_hat, OPTS)
        np.testing.assert_allclose(scaled.as_array(), 2.5 * base.as_array(), rtol=1e-14)
        ones = estimate_tau(small_sample.with_outcome(np.ones(small_sample.n)), fit.theta_hat, OPTS)
        shifted = estimate_tau(small_sample.with_outcome(small_sample.y + 4.0), fit.theta_hat, OPTS)
        np.testing.assert_allclose(shifted.as_array(), base.as_array() + 4.0 * ones.as_array(), atol=1e-10)

    def test_shift_on_balanced_panel(self, balanced):
        scores = exact_scores(balanced)
        base = estimate_tau(balanced, scores=scores, options=OPTS).as_array()
        shifted = estimate_tau(balanced.with_outcome(balanced.y + 4.0), scores=scores, options=OPTS).as_array()
        np.testing.assert_allclose(shifted - base, [4.0, 0, 0, 0], atol=1e-10)
        # outcome linear in (1, D, T/L) with a covariate term that is balanced within cells
        est = estimate_tau(balanced, cell_params(), OPTS).as_array()
        np.testing.assert_allclose(est, base, atol=1e-10)

    def test_exact_scores_match_kernel(self, small_sample):
        pd, pf = small_sample.extra["p_d"], small_sample.extra["p_f"]
        est = estimate_tau(small_sample, scores=(pd, pf), options=OPTS)
        kern = [iw_kernel(NetworkPropensityScore(pd[i], pf[i], int(small_sample.l[i])),
                          int(small_sample.d[i]), int(small_sample.t[i]), small_sample.y[i])
                for i in range(small_sample.n)]
        np.testing.assert_allclose(est.as_array(), np.mean(kern, axis=0), atol=1e-10)

    def test_permutation_invariance(self, small_sim):
        truth = small_sim.node_truth()
        a = prepare(small_sim.panel, {"p_d": truth["p_d"], "p_f": truth["p_f"]})
        perm = permuted_panel(small_sim.panel, seed=3)
        # carry the truth through the same permutation by matching (group, node) keys
        key = {}
        start = 0
        for g in small_sim.panel.groups:
            for i in range(g.n):
                key[(g.group_id, i)] = start + i
            start += g.n
        idx = np.array([key[(g.group_id, int(nid))] for g in perm.groups for nid in g.node_ids])
        b = prepare(perm, {"p_d": truth["p_d"][idx], "p_f": truth["p_f"][idx]})
        for s in (a, b):
            assert s.n == a.n
        ea = estimate_tau(a, scores=(a.extra["p_d"], a.extra["p_f"]), options=OPTS)
        eb = estimate_tau(b, scores=(b.extra["p_d"], b.extra["p_f"]), options=OPTS)
        assert np.array_equal(ea.as_array(), eb.as_array())
        assert np.array_equal(ea.vcov, eb.vcov)
        fa, fb = fit_theta(a, options=OPTS), fit_theta(b, options=OPTS)
        assert np.array_equal(fa.theta_hat.to_vector(False), fb.theta_hat.to_vector(False))
        assert np.array_equal(estimate_tau(a, fa.theta_hat, OPTS).vcov,
                              estimate_tau(b, fb.theta_hat, OPTS).vcov)

    def test_overlap_violation(self, balanced):
        pd = np.where(np.arange(balanced.n) % 5 == 0, 1e-6, 0.5)
        with pytest.raises(OverlapViolation):
            estimate_tau(balanced, scores=(pd, np.full(balanced.n, 0.5)), options=OPTS)

    def test_needs_scores_or_parameters(self, balanced):
        with pytest.raises(ValidationError):
            estimate_tau(balanced, None, OPTS)


def fd_rows(sample, params, options, h=1e-6):
    v = params.to_vector(options.random_effects)
    out = np.empty((sample.n, v.size))
    for j in range(v.size):
        e = np.zeros(v.size)
        e[j] = h
        up = squared_residuals(sample, params.with_vector(v + e, options.random_effects), options)
        dn = squared_residuals(sample, params.with_vector(v - e, options.random_effects), options)
        out[:, j] = (up - dn) / (2 * h)
    return out


class TestInfluence:
    @pytest.mark.parametrize("random_effects", [False, True])
    def test_score_rows_match_finite_differences(self, small_sample, random_effects):
        opts = EstimatorOptions(random_effects=random_effects)
        if random_effects:
            params = ScoreParams.from_covariance([-0.3, 0.7], [0.2, -0.4], [[0.5, 0.2], [0.2, 0.3]])
        else:
            params = ScoreParams(np.array([-0.3, 0.7]), np.array([0.2, -0.4]))
        an = score_rows(small_sample, params, opts)
        fd = fd_rows(small_sample, params, opts)
        rel = np.abs(an - fd).max(axis=0) / np.abs(an).max(axis=0)
        assert rel.max() <= 1e-5

    def test_tau_block_sums_to_zero(self, small_sample, fitted):
        fit, est = fitted
        sys_ = influence_system(small_sample, fit.theta_hat, est.as_array(), OPTS)
        mean = sys_.weighted_mean()
        assert np.abs(mean[sys_.theta_dim:]).max() < 1e-10
        assert np.abs(mean[:sys_.theta_dim]).max() <= 2 * OPTS.tol_grad * 10

    def test_single_group_average(self, small_sample):
        one = small_sample.select(small_sample.group == small_sample.group[0])
        scores = (one.extra["p_d"], one.extra["p_f"])
        est = estimate_tau(one, scores=scores, options=OPTS, with_se=False)
        sys_ = influence_system(one, None, est.as_array(), OPTS, scores=scores)
        b = np.array([iw_kernel(NetworkPropensityScore(scores[0][i], scores[1][i], int(one.l[i])),
                                int(one.d[i]), int(one.t[i]), one.y[i]) for i in range(one.n)])
        assert sys_.psi_bar.shape[0] == 1
        np.testing.assert_allclose(sys_.psi_bar[0], (est.as_array() - b).mean(axis=0), atol=1e-12)

    def test_fixed_scores_give_plain_clustered_variance(self, small_sample):
        scores = (small_sample.extra["p_d"], small_sample.extra["p_f"])
        est = estimate_tau(small_sample, scores=scores, options=OPTS)
        sys_ = influence_system(small_sample, None, est.as_array(), OPTS, scores=scores)
        g = sys_.num_groups
        rows = sys_.psi_bar * sys_.weights[:, None]
        plain = rows.T @ rows / g / g
        np.testing.assert_allclose(est.vcov, plain, rtol=1e-12, atol=1e-15)

    def test_jacobian_structure(self, small_sample, fitted):
        fit, est = fitted
        sys_ = influence_system(small_sample, fit.theta_hat, est.as_array(), OPTS)
        t = sys_.theta_dim
        assert t == 4
        assert not sys_.jacobian[:t, t:].any()
        assert np.array_equal(sys_.jacobian[t:, t:], np.eye(4))
        v = sandwich(sys_)
        assert np.allclose(v, v.T) and np.linalg.eigvalsh(v).min() > -1e-14

    def test_rank_deficient(self, small_sample, fitted):
        fit, est = fitted
        sys_ = influence_system(small_sample, fit.theta_hat, est.as_array(), OPTS)
        broken = type(sys_)(sys_.psi_bar, sys_.weights, np.zeros_like(sys_.jacobian), sys_.theta_dim)
        with pytest.raises(RankDeficientSystem):
            sandwich(broken)


class TestBenchmarksAndPlacebo:
    def test_ols_two_point_fit(self):
        s = make_sample([0, 1], [0, 1], [1, 1], [2.0, 5.0], [0.0, 1.0], [0, 1])
        res = ols_benchmark(s, peer_only=True)
        np.testing.assert_allclose(res.coef, [2.0, 3.0], atol=1e-12)
        assert np.abs(res.residuals).max() < 1e-12

    def test_ols_collinear(self, balanced):
        s = balanced.select(balanced.d == 1)
        with pytest.raises(RankDeficientSystem):
            ols_benchmark(s)

    def test_constant_covariate_on_balanced_panel(self, balanced):
        s = balanced
        s2 = Sample(s.x, s.y, np.column_stack([s.cx, np.full(s.n, 2.5)]), s.psi, s.l, s.t, s.group,
                    s.group_ids, 0)
        res = placebo_balance(s2, None, 1, OPTS, scores=exact_scores(s))
        np.testing.assert_allclose(res.coef, [2.5, 0, 0, 0], atol=1e-10)

    def test_placebo_linear_in_constant(self, small_sample, fitted):
        fit, _ = fitted
        one = estimate_tau(small_sample.with_outcome(np.ones(small_sample.n)), fit.theta_hat, OPTS)
        three = estimate_tau(small_sample.with_outcome(np.full(small_sample.n, 3.0)), fit.theta_hat, OPTS)
        np.testing.assert_allclose(three.as_array(), 3 * one.as_array(), rtol=1e-14)
        assert np.all(np.abs(one.as_array()[1:]) < 3 * one.se[1:])

    def test_covariate_index_validated(self, small_sample, fitted):
        with pytest.raises(ValidationError):
            placebo_balance(small_sample, fitted[0].theta_hat, 3, OPTS)
