import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from netprop.core import (
    GroupData,
    NetworkPanel,
    NetworkPropensityScore,
    Regressors,
    design_matrix,
    exposure_share,
    gated_inverse,
    kron,
    min_eigenvalue,
)
from netprop.errors import InvalidMatrix, SingularMatrix, TrimmedObservation, ValidationError
from netprop.nps import qxx_closed

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
mat2 = arrays(np.float64, (2, 2), elements=finite)


def test_exposure_share_examples():
    assert exposure_share(5, 5) == 1.0
    assert exposure_share(2, 4) == 0.5
    assert exposure_share(0, 3) == 0.0
    with pytest.raises(TrimmedObservation):
        exposure_share(0, 0)
    with pytest.raises(ValidationError):
        exposure_share(4, 3)


def test_min_eigenvalue_examples():
    assert min_eigenvalue(np.eye(4)) == pytest.approx(1.0)
    assert min_eigenvalue(np.diag([2, 0.5, 3, 1])) == pytest.approx(0.5)
    q = qxx_closed(NetworkPropensityScore(1.0, 0.4, 3))
    assert abs(min_eigenvalue(q)) < 1e-12
    with pytest.raises(InvalidMatrix):
        min_eigenvalue(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_gated_inverse_rejects_singular():
    with pytest.raises(SingularMatrix):
        gated_inverse(np.diag([1.0, 1e-10]))
    np.testing.assert_allclose(gated_inverse(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))


@given(mat2, mat2, mat2, mat2)
def test_kron_mixed_product(a, b, c, d):
    lhs = kron(a, b) @ kron(c, d)
    rhs = kron(a @ c, b @ d)
    scale = max(1.0, np.abs(lhs).max())
    assert np.abs(lhs - rhs).max() <= 1e-12 * scale * 10


@given(mat2, mat2, mat2)
def test_kron_associative(a, b, c):
    lhs, rhs = kron(kron(a, b), c), kron(a, kron(b, c))
    assert np.abs(lhs - rhs).max() <= 1e-12 * max(1.0, np.abs(lhs).max())


@settings(max_examples=50)
@given(arrays(np.float64, (2, 2), elements=st.floats(-3, 3)),
       arrays(np.float64, (2, 2), elements=st.floats(-3, 3)))
def test_kron_inverse(a, b):
    a = a + 4 * np.eye(2)
    b = b + 4 * np.eye(2)
    np.testing.assert_allclose(np.linalg.inv(kron(a, b)),
                               kron(np.linalg.inv(a), np.linalg.inv(b)), atol=1e-10)


@given(st.integers(0, 1), st.integers(1, 30).flatmap(lambda l: st.tuples(st.integers(0, l), st.just(l))))
def test_regressor_interaction_invariant(d, tl):
    t, l = tl
    x = Regressors.from_counts(d, t, l).as_array()
    assert x[0] == 1.0 and x[3] == x[1] * x[2]
    np.testing.assert_array_equal(design_matrix([d], [t], [l])[0], x)


def test_score_triple_validation():
    assert NetworkPropensityScore(0.3, 0.4, 2).interior
    assert not NetworkPropensityScore(0.0, 0.4, 2).interior
    with pytest.raises(ValidationError):
        NetworkPropensityScore(1.2, 0.4, 2)


def test_group_validation():
    a = np.array([[0, 1], [1, 0]])
    with pytest.raises(ValidationError):
        GroupData(0, np.array([[0, 1], [0, 0]]), [0, 1], [1.0, 2.0], [[0.0], [1.0]])
    with pytest.raises(ValidationError):
        GroupData(0, a, [0, 2], [1.0, 2.0], [[0.0], [1.0]])
    with pytest.raises(ValidationError):
        GroupData(0, a, [0, 1], [np.nan, 2.0], [[0.0], [1.0]])
    g = GroupData(0, a, [0, 1], [1.0, 2.0], [[0.0], [1.0]])
    assert not g.y.flags.writeable
    np.testing.assert_array_equal(g.links, [1, 1])
    np.testing.assert_array_equal(g.treated_links, [1, 0])


def test_panel_canonical_order():
    a = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    g1 = GroupData(5, a, [1, 0, 0], [1.0, 2.0, 3.0], [[0.0], [1.0], [2.0]], node_ids=[9, 3, 4])
    g0 = GroupData(2, a[:2, :2], [0, 1], [4.0, 5.0], [[1.0], [1.0]])
    canon = NetworkPanel((g1, g0)).canonical()
    assert [g.group_id for g in canon.groups] == [2, 5]
    np.testing.assert_array_equal(canon.groups[1].node_ids, [3, 4, 9])
    np.testing.assert_array_equal(canon.groups[1].y, [2.0, 3.0, 1.0])
    # node 9 (originally first) links only to node 3
    np.testing.assert_array_equal(canon.groups[1].adjacency[2], [1, 0, 0])
    with pytest.raises(ValidationError):
        NetworkPanel((g0, g0))
