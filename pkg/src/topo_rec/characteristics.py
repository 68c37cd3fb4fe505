"""Classical and topological dataset characteristics.

Every quantity is computed exactly. Sums that involve floats go through
``math.fsum`` and the integer-valued ones (Gini, assortativity) are
accumulated as integers, so results do not depend on node labelling.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInput, Log10OfZero
from .graph import ITEM, USER, BipartiteGraph, ProjectedGraph, project

CHARACTERISTIC_NAMES = (
    "space_size_log",
    "shape_log",
    "density_log",
    "gini_u",
    "gini_i",
    "avg_deg_u_log",
    "avg_deg_i_log",
    "avg_clustc_u_log",
    "avg_clustc_i_log",
    "assort_u",
    "assort_i",
)


def format_float(x: Optional[float]) -> str:
    """Shortest round-tripping text for a float; empty for a missing value."""
    if x is None:
        return ""
    return repr(float(x))


def parse_float(text: str) -> Optional[float]:
    text = text.strip()
    return None if text == "" else float(text)


@dataclass(frozen=True)
class CharacteristicsVector:
    space_size_log: float
    shape_log: float
    density_log: float
    gini_u: float
    gini_i: float
    avg_deg_u_log: float
    avg_deg_i_log: float
    avg_clustc_u_log: float
    avg_clustc_i_log: float
    assort_u: Optional[float]
    assort_i: Optional[float]

    @property
    def complete(self) -> bool:
        return self.assort_u is not None and self.assort_i is not None

    def values(self) -> list[Optional[float]]:
        return [getattr(self, n) for n in CHARACTERISTIC_NAMES]

    def as_dict(self) -> dict[str, Optional[float]]:
        return asdict(self)

    def to_row(self) -> list[str]:
        return [format_float(v) for v in self.values()]

    @classmethod
    def from_row(cls, row: Sequence[str]) -> "CharacteristicsVector":
        if len(row) != len(CHARACTERISTIC_NAMES):
            raise ValueError(f"expected {len(CHARACTERISTIC_NAMES)} fields, got {len(row)}")
        vals = [parse_float(v) for v in row]
        for name, v in zip(CHARACTERISTIC_NAMES[:9], vals[:9]):
            if v is None:
                raise ValueError(f"{name} may not be missing")
        return cls(*vals)

    @classmethod
    def from_mapping(cls, mapping) -> "CharacteristicsVector":
        return cls.from_row([mapping[n] for n in CHARACTERISTIC_NAMES])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CHARACTERISTIC_NAMES)
        w.writerow(self.to_row())
        return buf.getvalue()


assert tuple(f.name for f in fields(CharacteristicsVector)) == CHARACTERISTIC_NAMES


def space_size(graph: BipartiteGraph) -> float:
    return math.sqrt(graph.user_count * graph.item_count)


def shape(graph: BipartiteGraph) -> float:
    return graph.user_count / graph.item_count


def density(graph: BipartiteGraph) -> float:
    return graph.edge_count / (graph.user_count * graph.item_count)


def gini(degrees: Sequence[int]) -> float:
    """Concentration of a degree sequence.

    Equal to ``sum_{u<v} |d_u - d_v| / (n * sum(d))``; evaluated through the
    sorted form ``sum_k (2k - n - 1) d_(k) / (n * sum(d))`` with integer
    arithmetic, which is the same number without the quadratic cost.
    """
    d = np.sort(np.asarray(degrees, dtype=np.int64))
    n = d.size
    if n == 0:
        raise EmptyInput("gini of an empty degree sequence")
    total = int(d.sum())
    if total == 0:
        raise EmptyInput("gini needs at least one positive degree")
    weights = 2 * np.arange(1, n + 1, dtype=np.int64) - n - 1
    numerator = int(np.dot(weights, d))
    return numerator / (n * total)


def avg_degree(graph: BipartiteGraph, side: str) -> float:
    return graph.edge_count / graph.side_count(side)


def node_clustering(graph: BipartiteGraph, side: str) -> np.ndarray:
    """Per-node mean Jaccard overlap with every 2-hop same-side node.

    Nodes without 2-hop neighbors get 0.
    """
    proj = project(graph, side)
    deg = graph.degrees(side).astype(np.int64)
    co = proj.weighted_adjacency
    rows = np.repeat(np.arange(proj.node_count), np.diff(co.indptr))
    shared = co.data.astype(np.int64)
    iou = shared / (deg[rows] + deg[co.indices] - shared)
    out = np.zeros(proj.node_count, dtype=np.float64)
    indptr = co.indptr
    for v in range(proj.node_count):
        lo, hi = indptr[v], indptr[v + 1]
        if hi > lo:
            out[v] = math.fsum(iou[lo:hi]) / (hi - lo)
    return out


def clustering_coefficient(graph: BipartiteGraph, side: str) -> float:
    per_node = node_clustering(graph, side)
    return math.fsum(per_node) / per_node.size


def degree_assortativity(projected: ProjectedGraph) -> Optional[float]:
    """Newman degree assortativity of the binarized, loop-free projection.

    Pearson correlation of endpoint degrees over both orientations of every
    edge. Returns ``None`` when undefined (no edges, or all endpoint degrees
    equal).
    """
    pairs = projected.edge_list_binarized
    if pairs.shape[0] == 0:
        return None
    deg = projected.binarized_degrees
    x = deg[pairs[:, 0]]
    y = deg[pairs[:, 1]]
    n = 2 * pairs.shape[0]
    s1 = int(x.sum()) + int(y.sum())
    s2 = int((x * x).sum()) + int((y * y).sum())
    sxy = 2 * int((x * y).sum())
    denom = n * s2 - s1 * s1
    if denom == 0:
        return None
    return (n * sxy - s1 * s1) / denom


def _log10(value: float, name: str) -> float:
    if value <= 0:
        raise Log10OfZero(f"{name} is {value!r}; log10 undefined")
    return math.log10(value)


def compute_all(graph: BipartiteGraph) -> CharacteristicsVector:
    """All eleven characteristics of a (connected) graph, log10-scaled where named ``*_log``."""
    return CharacteristicsVector(
        space_size_log=_log10(space_size(graph), "space size"),
        shape_log=_log10(shape(graph), "shape"),
        density_log=_log10(density(graph), "density"),
        gini_u=gini(graph.user_degrees),
        gini_i=gini(graph.item_degrees),
        avg_deg_u_log=_log10(avg_degree(graph, USER), "user average degree"),
        avg_deg_i_log=_log10(avg_degree(graph, ITEM), "item average degree"),
        avg_clustc_u_log=_log10(clustering_coefficient(graph, USER), "user clustering coefficient"),
        avg_clustc_i_log=_log10(clustering_coefficient(graph, ITEM), "item clustering coefficient"),
        assort_u=degree_assortativity(project(graph, USER)),
        assort_i=degree_assortativity(project(graph, ITEM)),
    )
