"""Weight-space distances between client models and the similarity graph.

The distance between two models sums per-layer Euclidean norms of the flat
weight blocks (biases included).  Distances are reversed into similarity
edge weights via ``S = -d + d_min + d_max`` so that a large weight means
high similarity while preserving the ordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import kernels
from .errors import InputError
from .model import ModelParams


@dataclass
class SimilarityGraph:
    n: int
    d: np.ndarray          # symmetric distances, zero diagonal
    s: np.ndarray          # similarity weights, zero diagonal (never read)
    d_min: float
    d_max: float

    @property
    def degenerate(self) -> bool:
        """All pairwise distances equal: similarity carries no signal."""
        return self.d_min == self.d_max


def pair_distance(a: ModelParams, b: ModelParams) -> float:
    """Sum over layers of the Euclidean distance between weight blocks."""
    if not a.same_structure(b):
        raise InputError("models must share an identical layer structure")
    return float(kernels.pair_distance_flat(a.theta, b.theta, a.offsets))


def build_graph(models) -> SimilarityGraph:
    models = list(models)
    n = len(models)
    if n < 2:
        raise InputError("similarity graph needs at least 2 clients")
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = pair_distance(models[i], models[j])
    off = d[np.triu_indices(n, k=1)]
    d_min = float(off.min())
    d_max = float(off.max())
    s = -d + d_min + d_max
    np.fill_diagonal(s, 0.0)
    return SimilarityGraph(n, d, s, d_min, d_max)


def export_edge_list(g: SimilarityGraph, path) -> None:
    """Plain-text edges for offline visualization: ``i j d_ij S_ij``."""
    with open(path, "w") as f:
        for i in range(g.n):
            for j in range(i + 1, g.n):
                f.write(f"{i} {j} {float(g.d[i, j])!r} {float(g.s[i, j])!r}\n")
