"""Panel files on disk: groups.csv, nodes.csv, edges.csv and a truth sidecar.

* ``groups.csv``: ``group_id`` then group covariates (``psi_1 .. psi_p``).
* ``nodes.csv``: ``group_id, node_id, d, y`` then individual covariates.
* ``edges.csv``: ``group_id, node_i, node_j`` for undirected links.
* ``truth.csv`` (simulated data only): true scores and coefficients per node.

Files are UTF-8 with a header row; floats are written in shortest
round-trip form so a reload reproduces the arrays exactly.
"""
from __future__ import annotations

import csv
import math
import warnings
from pathlib import Path

import numpy as np

from ..core import GroupData, NetworkPanel
from ..errors import PanelFormatError, UnknownNodeRef

NODE_REQUIRED = ("group_id", "node_id", "d", "y")
EDGE_REQUIRED = ("group_id", "node_i", "node_j")


class DuplicateEdgeWarning(UserWarning):
    pass


def _parse_id(raw: str):
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        return raw


def _read(path: Path, required: tuple[str, ...]) -> tuple[list[str], list[tuple[int, dict]]]:
    if not path.is_file():
        raise PanelFormatError(f"{path}: missing file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise PanelFormatError(f"{path}:1: missing columns {missing}")
        rows = [(i + 2, row) for i, row in enumerate(reader)]
    return header, rows


def _float(path, line, name, raw) -> float:
    try:
        val = float(raw)
    except (TypeError, ValueError):
        raise PanelFormatError(f"{path}:{line}: column {name!r} is not numeric: {raw!r}") from None
    if math.isnan(val) or math.isinf(val):
        raise PanelFormatError(f"{path}:{line}: column {name!r} is NaN or infinite")
    return val


def panel_columns(directory) -> tuple[list[str], list[str]]:
    """Covariate and group covariate column names available in a panel directory."""
    d = Path(directory)
    node_header, _ = _read(d / "nodes.csv", NODE_REQUIRED)
    group_header, _ = _read(d / "groups.csv", ("group_id",))
    return ([c for c in node_header if c not in NODE_REQUIRED],
            [c for c in group_header if c != "group_id"])


def load_panel(directory, covariates=None, group_covariates=None) -> NetworkPanel:
    """Read and validate a panel directory.

    Args:
        directory: folder holding groups.csv, nodes.csv and edges.csv.
        covariates: node columns to use as covariates (default: all extra columns).
        group_covariates: group columns to use (default: all extra columns).

    Returns:
        NetworkPanel with symmetrized adjacency; repeated edges are merged
        with a ``DuplicateEdgeWarning``.
    """
    d = Path(directory)
    avail_c, avail_psi = panel_columns(d)
    covariates = avail_c if covariates is None else list(covariates)
    group_covariates = avail_psi if group_covariates is None else list(group_covariates)
    for name in covariates:
        if name not in avail_c:
            raise PanelFormatError(f"{d / 'nodes.csv'}:1: unknown covariate column {name!r}")
    for name in group_covariates:
        if name not in avail_psi:
            raise PanelFormatError(f"{d / 'groups.csv'}:1: unknown group covariate column {name!r}")

    gpath = d / "groups.csv"
    _, grows = _read(gpath, ("group_id",))
    groups: dict = {}
    for line, row in grows:
        gid = _parse_id(row["group_id"])
        if gid in groups:
            raise PanelFormatError(f"{gpath}:{line}: duplicate group_id {gid!r}")
        groups[gid] = np.array([_float(gpath, line, c, row[c]) for c in group_covariates])

    npath = d / "nodes.csv"
    _, nrows = _read(npath, NODE_REQUIRED)
    nodes: dict = {gid: {} for gid in groups}
    for line, row in nrows:
        gid = _parse_id(row["group_id"])
        if gid not in groups:
            raise UnknownNodeRef(f"{npath}:{line}: unknown group_id {gid!r}")
        nid = _parse_id(row["node_id"])
        if nid in nodes[gid]:
            raise PanelFormatError(f"{npath}:{line}: duplicate node {nid!r} in group {gid!r}")
        dval = row["d"].strip()
        if dval not in ("0", "1"):
            raise PanelFormatError(f"{npath}:{line}: d must be 0 or 1, got {dval!r}")
        nodes[gid][nid] = (int(dval), _float(npath, line, "y", row["y"]),
                           [_float(npath, line, c, row[c]) for c in covariates])

    epath = d / "edges.csv"
    _, erows = _read(epath, EDGE_REQUIRED)
    edges: dict = {gid: set() for gid in groups}
    for line, row in erows:
        gid = _parse_id(row["group_id"])
        if gid not in groups:
            raise UnknownNodeRef(f"{epath}:{line}: unknown group_id {gid!r}")
        i, j = _parse_id(row["node_i"]), _parse_id(row["node_j"])
        for nid in (i, j):
            if nid not in nodes[gid]:
                raise UnknownNodeRef(f"{epath}:{line}: unknown node {nid!r} in group {gid!r}")
        if i == j:
            raise PanelFormatError(f"{epath}:{line}: self-loop on node {i!r}")
        key = tuple(sorted((i, j), key=lambda v: (str(type(v)), v)))
        if key in edges[gid]:
            warnings.warn(f"{epath}:{line}: duplicate edge {key} in group {gid!r} ignored",
                          DuplicateEdgeWarning, stacklevel=2)
            continue
        edges[gid].add(key)

    out = []
    for gid, psi in groups.items():
        members = nodes[gid]
        if not members:
            raise PanelFormatError(f"{gpath}: group {gid!r} has no nodes")
        ids = list(members)
        index = {nid: k for k, nid in enumerate(ids)}
        n = len(ids)
        adj = np.zeros((n, n), dtype=np.int8)
        for i, j in edges[gid]:
            adj[index[i], index[j]] = adj[index[j], index[i]] = 1
        dvec = np.array([members[nid][0] for nid in ids])
        yvec = np.array([members[nid][1] for nid in ids])
        cmat = np.array([members[nid][2] for nid in ids], dtype=float).reshape(n, len(covariates))
        node_ids = np.array(ids, dtype=object if any(isinstance(v, str) for v in ids) else int)
        out.append(GroupData(gid, adj, dvec, yvec, cmat, psi, node_ids))
    return NetworkPanel(tuple(out))


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer, np.bool_)):
        return str(int(v))
    return str(v)


def _write(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_panel(panel: NetworkPanel, directory, covariate_names=None, group_covariate_names=None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    cn = list(covariate_names or [f"c_{j + 1}" for j in range(panel.k)])
    pn = list(group_covariate_names or [f"psi_{j + 1}" for j in range(panel.p)])
    _write(d / "groups.csv", ["group_id", *pn], ([g.group_id, *g.psi] for g in panel.groups))
    _write(d / "nodes.csv", [*NODE_REQUIRED, *cn],
           ([g.group_id, nid, g.d[i], g.y[i], *g.c[i]]
            for g in panel.groups for i, nid in enumerate(g.node_ids)))

    def edge_rows():
        for g in panel.groups:
            ii, jj = np.nonzero(np.triu(g.adjacency, k=1))
            for i, j in zip(ii, jj):
                yield g.group_id, g.node_ids[i], g.node_ids[j]

    _write(d / "edges.csv", list(EDGE_REQUIRED), edge_rows())


TRUTH_COLUMNS = ("group_id", "node_id", "p_d", "p_f", "p_l", "p_nf",
                 "alpha", "beta", "gamma", "delta", "complier")


def write_truth(sim, directory) -> None:
    """Truth sidecar: true scores and coefficients of every node."""
    rows = []
    for g, tr in zip(sim.panel.groups, sim.truth):
        comp = tr.complier if tr.complier is not None else np.ones(g.n, dtype=bool)
        for i, nid in enumerate(g.node_ids):
            rows.append([g.group_id, nid, tr.p_d[i], tr.p_f[i], tr.p_l[i], tr.p_nf[i],
                         *tr.tau[i], int(comp[i])])
    _write(Path(directory) / "truth.csv", TRUTH_COLUMNS, rows)


def read_truth(path, panel: NetworkPanel) -> dict[str, np.ndarray]:
    """Truth columns aligned to the node order of ``panel``."""
    path = Path(path)
    _, rows = _read(path, TRUTH_COLUMNS[:4])
    table = {}
    for line, row in rows:
        key = (_parse_id(row["group_id"]), _parse_id(row["node_id"]))
        table[key] = (line, row)
    out: dict[str, list] = {c: [] for c in ("p_d", "p_f", "complier")}
    for g in panel.groups:
        for nid in g.node_ids:
            key = (g.group_id, nid.item() if hasattr(nid, "item") else nid)
            if key not in table:
                raise UnknownNodeRef(f"{path}: no truth row for node {key[1]!r} in group {key[0]!r}")
            line, row = table[key]
            out["p_d"].append(_float(path, line, "p_d", row["p_d"]))
            out["p_f"].append(_float(path, line, "p_f", row["p_f"]))
            out["complier"].append(row.get("complier", "1").strip() != "0")
    return {k: np.array(v) for k, v in out.items()}
