"""Topology-aware evaluation of graph collaborative filtering on sampled sub-datasets."""

from .characteristics import CHARACTERISTIC_NAMES, CharacteristicsVector, compute_all
from .graph import BipartiteGraph, ProjectedGraph, build_graph, largest_connected_component, project

__version__ = "0.1.0"

__all__ = [
    "BipartiteGraph", "CHARACTERISTIC_NAMES", "CharacteristicsVector", "ProjectedGraph",
    "build_graph", "compute_all", "largest_connected_component", "project",
]
