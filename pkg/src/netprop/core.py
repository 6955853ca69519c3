"""Shared domain types, small dense linear algebra and the exposure mapping."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, NamedTuple, Sequence

import numpy as np

from .errors import InvalidMatrix, SingularMatrix, TrimmedObservation, ValidationError

EIG_FLOOR = 1e-8


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GroupData:
    """One network: adjacency, treatments, outcomes and covariates.

    ``c`` is ``n x k`` individual covariates and ``psi`` the ``p`` observed
    group covariates. ``node_ids`` default to ``0..n-1`` and fix a canonical
    order for reductions.
    """

    group_id: Hashable
    adjacency: np.ndarray
    d: np.ndarray
    y: np.ndarray
    c: np.ndarray
    psi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    node_ids: np.ndarray | None = None

    def __post_init__(self):
        a = np.asarray(self.adjacency)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValidationError(f"group {self.group_id}: adjacency must be square")
        n = a.shape[0]
        if n < 1:
            raise ValidationError(f"group {self.group_id}: empty group")
        if not np.isin(a, (0, 1)).all():
            raise ValidationError(f"group {self.group_id}: adjacency must be binary")
        if not (a == a.T).all():
            raise ValidationError(f"group {self.group_id}: adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise ValidationError(f"group {self.group_id}: adjacency diagonal must be zero")
        d = np.asarray(self.d)
        if d.shape != (n,) or not np.isin(d, (0, 1)).all():
            raise ValidationError(f"group {self.group_id}: d must be a binary {n}-vector")
        y = np.asarray(self.y, dtype=float)
        if y.shape != (n,):
            raise ValidationError(f"group {self.group_id}: y must have length {n}")
        c = np.asarray(self.c, dtype=float)
        if c.ndim == 1:
            c = c.reshape(n, -1) if c.size else np.zeros((n, 0))
        if c.shape[0] != n:
            raise ValidationError(f"group {self.group_id}: c must have {n} rows")
        psi = np.atleast_1d(np.asarray(self.psi, dtype=float))
        node_ids = np.arange(n) if self.node_ids is None else np.asarray(self.node_ids)
        if node_ids.shape != (n,) or len(set(node_ids.tolist())) != n:
            raise ValidationError(f"group {self.group_id}: node_ids must be {n} unique ids")
        if not (np.isfinite(y).all() and np.isfinite(c).all() and np.isfinite(psi).all()):
            raise ValidationError(f"group {self.group_id}: non-finite numeric values")
        object.__setattr__(self, "adjacency", _frozen(a, np.int8))
        object.__setattr__(self, "d", _frozen(d, np.int8))
        object.__setattr__(self, "y", _frozen(y, float))
        object.__setattr__(self, "c", _frozen(c, float))
        object.__setattr__(self, "psi", _frozen(psi, float))
        object.__setattr__(self, "node_ids", _frozen(node_ids, node_ids.dtype))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def links(self) -> np.ndarray:
        """Friend counts L."""
        return self.adjacency.sum(axis=1).astype(int)

    @property
    def treated_links(self) -> np.ndarray:
        """Treated-friend counts T."""
        return (self.adjacency.astype(int) @ self.d.astype(int)).astype(int)


@dataclass(frozen=True)
class NetworkPanel:
    groups: tuple[GroupData, ...]

    def __post_init__(self):
        groups = tuple(self.groups)
        if not groups:
            raise ValidationError("panel has no groups")
        ids = [g.group_id for g in groups]
        if len(set(ids)) != len(ids):
            raise ValidationError("group ids must be unique")
        k = {g.c.shape[1] for g in groups}
        p = {g.psi.shape[0] for g in groups}
        if len(k) > 1 or len(p) > 1:
            raise ValidationError("covariate dimensions differ across groups")
        object.__setattr__(self, "groups", groups)

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    @property
    def num_nodes(self) -> int:
        return sum(g.n for g in self.groups)

    @property
    def k(self) -> int:
        return self.groups[0].c.shape[1]

    @property
    def p(self) -> int:
        return self.groups[0].psi.shape[0]

    def canonical(self) -> "NetworkPanel":
        """Groups sorted by id and nodes sorted by node id."""
        out = []
        for g in sorted(self.groups, key=lambda g: g.group_id):
            o = np.argsort(g.node_ids, kind="stable")
            out.append(GroupData(g.group_id, g.adjacency[np.ix_(o, o)], g.d[o], g.y[o],
                                 g.c[o], g.psi, g.node_ids[o]))
        return NetworkPanel(tuple(out))


@dataclass(frozen=True)
class NetworkPropensityScore:
    """The triple (p_d, p_f, L)."""

    p_d: float
    p_f: float
    l: int

    def __post_init__(self):
        if not (0.0 <= self.p_d <= 1.0 and 0.0 <= self.p_f <= 1.0):
            raise ValidationError("scores must lie in [0, 1]")
        if self.l < 0:
            raise ValidationError("friend count must be nonnegative")

    @property
    def interior(self) -> bool:
        return 0.0 < self.p_d < 1.0 and 0.0 < self.p_f < 1.0 and self.l >= 1


class RandomCoefficients(NamedTuple):
    alpha: float
    beta: float
    gamma: float
    delta: float


@dataclass(frozen=True)
class Regressors:
    """X = (1, D, phi, D * phi) with phi = T / L."""

    x: tuple[float, float, float, float]

    @classmethod
    def from_counts(cls, d: int, t: int, l: int) -> "Regressors":
        phi = exposure_share(t, l)
        return cls((1.0, float(d), phi, d * phi))

    def as_array(self) -> np.ndarray:
        return np.array(self.x)


def exposure_share(t, l):
    """Share of treated friends ``t / l``; vectorizes over arrays."""
    t_arr, l_arr = np.asarray(t), np.asarray(l)
    if np.any(l_arr < 1):
        raise TrimmedObservation("exposure share undefined for isolated nodes (L = 0)")
    if np.any(t_arr < 0) or np.any(t_arr > l_arr):
        raise ValidationError("treated-friend count must satisfy 0 <= T <= L")
    out = t_arr / l_arr
    return float(out) if out.ndim == 0 else out


def design_matrix(d, t, l) -> np.ndarray:
    """Stack regressor rows (1, D, phi, D*phi) for arrays of counts."""
    d = np.asarray(d, dtype=float)
    phi = np.asarray(exposure_share(t, l), dtype=float)
    return np.column_stack([np.ones_like(d), d, phi, d * phi])


def kron(a, b) -> np.ndarray:
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    for m in (a, b):
        if m.shape[0] != m.shape[1]:
            raise InvalidMatrix("kron expects square matrices")
    return np.kron(a, b)


def min_eigenvalue(q) -> float:
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if q.shape[0] != q.shape[1]:
        raise InvalidMatrix("matrix is not square")
    scale = max(1.0, float(np.abs(q).max()))
    if not np.allclose(q, q.T, rtol=0.0, atol=1e-12 * scale):
        raise InvalidMatrix("matrix is not symmetric")
    return float(np.linalg.eigvalsh(q)[0])


def gated_inverse(q, floor: float = EIG_FLOOR) -> np.ndarray:
    """Inverse of a symmetric matrix whose smallest eigenvalue clears ``floor``."""
    lam = min_eigenvalue(q)
    if lam <= floor:
        raise SingularMatrix(f"smallest eigenvalue {lam:.3g} is below the floor {floor:.1g}")
    return np.linalg.inv(q)


def batched_min_eigenvalue(q: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of each matrix in an ``(n, m, m)`` symmetric stack."""
    return np.linalg.eigvalsh(q)[:, 0]


def as_coefficients(v: Sequence[float]) -> RandomCoefficients:
    return RandomCoefficients(*(float(x) for x in v))
