"""Directed road networks: grid generator, file loaders, incidence structure.

Nodes are numbered from 1; arcs are numbered from 0 in construction order.
The incidence matrix uses -1 for the tail of an arc and +1 for its head, so a
unit of flow leaving node ``o`` and arriving at ``d`` satisfies ``D x = f``
with ``f[o] = -1`` and ``f[d] = +1``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
from scipy.sparse import csgraph, csr_matrix

__all__ = [
    "NetworkError",
    "Arc",
    "ODPair",
    "Network",
    "build_grid",
    "load_network_file",
    "save_network_json",
    "incidence_matrix",
    "enumerate_od_pairs",
    "demand_vector",
    "sioux_falls_path",
]


class NetworkError(ValueError):
    """Malformed network definition or network file."""


class Arc(NamedTuple):
    arc_id: int
    tail: int
    head: int


class ODPair(NamedTuple):
    origin: int
    destination: int


@dataclass(frozen=True)
class Network:
    node_count: int
    arcs: tuple[Arc, ...]
    name: str = "network"
    _tails: np.ndarray = field(init=False, repr=False, compare=False)
    _heads: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        arcs = tuple(Arc(*a) for a in self.arcs)
        object.__setattr__(self, "arcs", arcs)
        if self.node_count < 1:
            raise NetworkError("node_count must be positive")
        if not arcs:
            raise NetworkError("network has no arcs")
        for pos, (arc_id, tail, head) in enumerate(arcs):
            if arc_id != pos:
                raise NetworkError(f"arc ids must be contiguous from 0; got {arc_id} at position {pos}")
            for node in (tail, head):
                if not 1 <= node <= self.node_count:
                    raise NetworkError(f"arc {arc_id}: node {node} outside [1, {self.node_count}]")
            if tail == head:
                raise NetworkError(f"arc {arc_id} is a self-loop at node {tail}")
        tails = np.array([a.tail for a in arcs], dtype=np.int64)
        heads = np.array([a.head for a in arcs], dtype=np.int64)
        tails.setflags(write=False)
        heads.setflags(write=False)
        object.__setattr__(self, "_tails", tails)
        object.__setattr__(self, "_heads", heads)
        if not _weakly_connected(self.node_count, tails, heads):
            raise NetworkError(f"network {self.name!r} is not weakly connected")

    @classmethod
    def from_pairs(cls, node_count: int, pairs: Iterable[tuple[int, int]], name: str = "network") -> "Network":
        return cls(node_count, tuple(Arc(k, int(t), int(h)) for k, (t, h) in enumerate(pairs)), name)

    @property
    def arc_count(self) -> int:
        return len(self.arcs)

    @property
    def tails(self) -> np.ndarray:
        return self._tails

    @property
    def heads(self) -> np.ndarray:
        return self._heads


def _weakly_connected(m: int, tails: np.ndarray, heads: np.ndarray) -> bool:
    adj = csr_matrix((np.ones(len(tails)), (tails - 1, heads - 1)), shape=(m, m))
    ncomp, _ = csgraph.connected_components(adj, directed=True, connection="weak")
    return ncomp == 1


def build_grid(side: int) -> Network:
    """Square lattice of ``side x side`` nodes with two opposite arcs per edge.

    Nodes are numbered row-major from 1. East-pointing edges are emitted first
    (row by row), then south-pointing edges; each edge contributes its forward
    arc followed by the backward arc.
    """
    if int(side) != side or side < 2:
        raise NetworkError(f"grid side must be an integer >= 2, got {side!r}")
    side = int(side)

    def node(r, c):
        return r * side + c + 1

    pairs = []
    for r in range(side):
        for c in range(side - 1):
            pairs += [(node(r, c), node(r, c + 1)), (node(r, c + 1), node(r, c))]
    for r in range(side - 1):
        for c in range(side):
            pairs += [(node(r, c), node(r + 1, c)), (node(r + 1, c), node(r, c))]
    return Network.from_pairs(side * side, pairs, name=f"grid{side}x{side}")


_META = re.compile(r"^<([^>]*)>\s*(.*)$")


def _load_tntp(path: Path) -> Network:
    pairs = []
    declared_nodes = None
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("~"):
            continue
        meta = _META.match(line)
        if meta:
            if meta.group(1).strip().upper() == "NUMBER OF NODES":
                try:
                    declared_nodes = int(meta.group(2).split()[0])
                except (ValueError, IndexError):
                    raise NetworkError(f"{path}:{lineno}: bad NUMBER OF NODES value") from None
            continue
        fields = line.replace(";", " ").split()
        if not fields:
            continue
        if len(fields) < 2:
            raise NetworkError(f"{path}:{lineno}: expected init_node and term_node")
        try:
            tail, head = int(fields[0]), int(float(fields[1]))
        except ValueError:
            raise NetworkError(f"{path}:{lineno}: non-integer node index in {line!r}") from None
        if tail == head:
            raise NetworkError(f"{path}:{lineno}: self-loop at node {tail}")
        pairs.append((tail, head))
    if not pairs:
        raise NetworkError(f"{path}: no arc records found")
    m = max(max(p) for p in pairs)
    if declared_nodes is not None:
        if declared_nodes < m:
            raise NetworkError(f"{path}: arcs reference node {m} but file declares {declared_nodes} nodes")
        m = declared_nodes
    return Network.from_pairs(m, pairs, name=path.stem)


def _load_json(path: Path) -> Network:
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}:{exc.lineno}: {exc.msg}") from None
    try:
        m = int(doc["nodes"])
        pairs = [(int(a["tail"]), int(a["head"])) for a in doc["arcs"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkError(f"{path}: expected {{'nodes': m, 'arcs': [{{'tail', 'head'}}]}} ({exc})") from None
    return Network.from_pairs(m, pairs, name=doc.get("name", path.stem))


def load_network_file(path) -> Network:
    """Load a TNTP link file or the native JSON format (chosen by suffix)."""
    path = Path(path)
    if not path.is_file():
        raise NetworkError(f"{path}: no such file")
    if path.suffix.lower() == ".json":
        return _load_json(path)
    return _load_tntp(path)


def save_network_json(net: Network, path) -> None:
    doc = {
        "name": net.name,
        "nodes": net.node_count,
        "arcs": [{"tail": a.tail, "head": a.head} for a in net.arcs],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def incidence_matrix(net: Network, sparse: bool = False):
    """Node-arc incidence matrix, shape ``(m, n)``, entries in {-1, 0, +1}."""
    n = net.arc_count
    cols = np.arange(n)
    rows = np.concatenate([net.tails - 1, net.heads - 1])
    vals = np.concatenate([-np.ones(n, dtype=np.int64), np.ones(n, dtype=np.int64)])
    D = csr_matrix((vals, (rows, np.concatenate([cols, cols]))), shape=(net.node_count, n))
    return D if sparse else D.toarray()


def enumerate_od_pairs(net: Network) -> list[ODPair]:
    """All ordered pairs of distinct nodes, origin-major."""
    m = net.node_count
    if m < 2:
        raise NetworkError("need at least two nodes for an OD pair")
    return [ODPair(o, d) for o in range(1, m + 1) for d in range(1, m + 1) if o != d]


def demand_vector(net: Network, od) -> np.ndarray:
    o, d = od
    m = net.node_count
    if o == d or not (1 <= o <= m and 1 <= d <= m):
        raise NetworkError(f"invalid OD pair {tuple(od)} for {m} nodes")
    f = np.zeros(m)
    f[o - 1] = -1.0
    f[d - 1] = 1.0
    return f


def sioux_falls_path() -> Path:
    """Bundled Sioux Falls link topology in TNTP format."""
    return Path(__file__).parent / "data" / "SiouxFalls_net.tntp"
