"""Weighted Louvain community detection pinned to exactly K clusters.

The two-phase Louvain greedy (local moves, then community aggregation)
runs unconstrained first; the result is then coarsened to the requested
cluster count by merging the pair of communities whose merge costs the
least modularity, or by detaching the internally weakest member of the
largest community, followed by a strict-improvement single-node polish
that keeps all K clusters nonempty.  Every tie anywhere breaks toward the
lowest client id so runs are reproducible.

A constant-similarity graph carries no clustering signal; it falls back
to index-contiguous balanced clusters instead of letting visit order
decide.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .similarity import SimilarityGraph

log = logging.getLogger(__name__)


@dataclass
class Clustering:
    assignment: np.ndarray        # client -> cluster id in [0, K)
    leaders: list = field(default_factory=list)
    K: int = 0

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if self.K == 0:
            self.K = int(self.assignment.max()) + 1 if self.assignment.size else 0

    def clusters(self) -> list:
        """Member lists per cluster id, members ascending."""
        out = [[] for _ in range(self.K)]
        for i, c in enumerate(self.assignment):
            out[int(c)].append(i)
        return out

    def to_dict(self) -> dict:
        return {"clusters": self.clusters(), "leaders": list(self.leaders)}

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)


def _canonical(assignment: np.ndarray) -> np.ndarray:
    """Relabel cluster ids by ascending smallest member."""
    first = {}
    for i, c in enumerate(assignment):
        first.setdefault(int(c), i)
    order = sorted(first, key=lambda c: first[c])
    remap = {c: idx for idx, c in enumerate(order)}
    return np.array([remap[int(c)] for c in assignment], dtype=np.int64)


def modularity(g: SimilarityGraph, assignment) -> float:
    """Weighted modularity of the partition against a degree null model."""
    assignment = np.asarray(assignment)
    if g.n == 0 or assignment.shape != (g.n,):
        raise InputError("assignment must cover every client")
    s = g.s
    degrees = s.sum(axis=1)
    two_m = degrees.sum()
    if two_m <= 0:
        raise InputError("graph has no edge weight")
    same = assignment[:, None] == assignment[None, :]
    q = (s[same].sum() - np.outer(degrees, degrees)[same].sum() / two_m) / two_m
    return float(q)


def _local_moves(a: np.ndarray, visit_order: np.ndarray) -> np.ndarray:
    """Greedy node-to-community moves; every accepted move strictly
    increases modularity of the current (possibly aggregated) graph."""
    m = a.shape[0]
    k = a.sum(axis=1)
    w = k.sum()
    comm = np.arange(m)
    sigma = k.copy()                      # total degree per community
    improved = True
    while improved:
        improved = False
        for i in visit_order:
            ci = comm[i]
            sigma[ci] -= k[i]
            links = np.bincount(comm, weights=a[i], minlength=m)
            links[ci] -= a[i, i]          # exclude the self-loop
            gains = links - k[i] * sigma / w
            # only nonempty communities (plus the current one) are candidates
            gains[(sigma <= 0) & (np.arange(m) != ci)] = -np.inf
            best = int(np.argmax(gains))
            if gains[best] <= gains[ci] + 1e-12:
                best = ci
            sigma[best] += k[i]
            if best != ci:
                comm[i] = best
                improved = True
    return comm


def _aggregate(a: np.ndarray, comm: np.ndarray, groups: list) -> tuple:
    labels = np.unique(comm)
    idx = {int(c): i for i, c in enumerate(labels)}
    z = np.zeros((a.shape[0], labels.size))
    for i, c in enumerate(comm):
        z[i, idx[int(c)]] = 1.0
    a2 = z.T @ a @ z
    groups2 = [[] for _ in labels]
    for i, c in enumerate(comm):
        groups2[idx[int(c)]].extend(groups[i])
    return a2, groups2


def louvain(g: SimilarityGraph, seed: int) -> Clustering:
    """Two-phase Louvain on the similarity graph, unconstrained K.

    Node visit order is a seeded shuffle fixed for the run.  A degenerate
    (constant-similarity) graph yields singleton communities; callers are
    expected to apply the balanced fallback when pinning K.
    """
    if g.n < 2:
        raise InputError("need at least 2 clients to cluster")
    if g.degenerate:
        log.warning("constant similarity graph: no community structure")
        return Clustering(np.arange(g.n))
    rng = np.random.default_rng(seed)
    a = g.s.copy()
    groups = [[i] for i in range(g.n)]
    while True:
        comm = _local_moves(a, rng.permutation(a.shape[0]))
        if np.unique(comm).size == a.shape[0]:
            break
        a, groups = _aggregate(a, comm, groups)
    assignment = np.zeros(g.n, dtype=np.int64)
    for c, members in enumerate(groups):
        assignment[members] = c
    return Clustering(_canonical(assignment))


def _balanced_contiguous(n: int, k: int) -> Clustering:
    sizes = [n // k + (1 if i < n % k else 0) for i in range(k)]
    assignment = np.repeat(np.arange(k), sizes)
    return Clustering(assignment, K=k)


def _merge_once(g: SimilarityGraph, assignment: np.ndarray) -> np.ndarray:
    """Merge the community pair losing the least modularity."""
    labels = sorted(set(int(c) for c in assignment))
    best = None
    for ai in range(len(labels)):
        for bi in range(ai + 1, len(labels)):
            trial = assignment.copy()
            trial[trial == labels[bi]] = labels[ai]
            q = modularity(g, trial)
            if best is None or q > best[0] + 1e-15:
                best = (q, trial)
    return best[1]


def _split_once(g: SimilarityGraph, assignment: np.ndarray) -> np.ndarray:
    """Detach the weakest member of the largest community into a new one."""
    labels = sorted(set(int(c) for c in assignment))
    sizes = {c: int(np.sum(assignment == c)) for c in labels}
    target = max(labels, key=lambda c: (sizes[c], -c))
    members = np.flatnonzero(assignment == target)
    intra = [float(g.s[i, members].sum()) for i in members]
    weakest = members[int(np.argmin(intra))]
    out = assignment.copy()
    out[weakest] = max(labels) + 1
    return out


def _kl_pass(s: np.ndarray, degrees: np.ndarray, w: float,
             assignment: np.ndarray, k: int) -> tuple:
    """One Kernighan-Lin chain over the K-way partition.

    Tentatively relocates every node once, always taking the currently
    best move even when its gain is negative, then keeps the best prefix
    of the chain.  Moves that would empty a cluster are skipped."""
    n = assignment.size
    work = assignment.copy()
    sigma = np.bincount(work, weights=degrees, minlength=k)
    sizes = np.bincount(work, minlength=k)
    moved = np.zeros(n, dtype=bool)
    cumulative = 0.0
    best_gain = 0.0
    best_state = None
    for _ in range(n):
        step = None
        for i in range(n):
            if moved[i]:
                continue
            ci = int(work[i])
            if sizes[ci] == 1:
                continue
            links = np.bincount(work, weights=s[i], minlength=k)
            li_home = links[ci]
            sig_home = sigma[ci] - degrees[i]
            for c in range(k):
                if c == ci:
                    continue
                gain = (2.0 / w) * (
                    links[c] - li_home - degrees[i] * (sigma[c] - sig_home) / w
                )
                if step is None or gain > step[0] + 1e-15:
                    step = (gain, i, c)
        if step is None:
            break
        gain, i, c = step
        ci = int(work[i])
        work[i] = c
        sigma[ci] -= degrees[i]
        sigma[c] += degrees[i]
        sizes[ci] -= 1
        sizes[c] += 1
        moved[i] = True
        cumulative += gain
        if cumulative > best_gain + 1e-12:
            best_gain = cumulative
            best_state = work.copy()
    if best_state is None:
        return assignment, False
    return best_state, True


def _kl_refine(g: SimilarityGraph, assignment: np.ndarray, k: int) -> np.ndarray:
    degrees = g.s.sum(axis=1)
    w = float(degrees.sum())
    improved = True
    while improved:
        assignment, improved = _kl_pass(g.s, degrees, w, assignment, k)
    return assignment


_PIN_RESTARTS = 16


def _seeded_k_partition(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    """Random assignment guaranteed to use all K labels."""
    assignment = rng.integers(0, k, size=n)
    anchors = rng.permutation(n)[:k]
    assignment[anchors] = np.arange(k)
    return assignment.astype(np.int64)


def _pin_refine(g: SimilarityGraph, assignment: np.ndarray, k: int) -> np.ndarray:
    """Kernighan-Lin polish with deterministic multi-start.

    The merge/split result seeds the first search; a fixed number of
    seeded random K-partitions seed the rest, and the best-modularity
    local optimum wins.  Ties keep the earliest candidate."""
    if k < 2 or k >= g.n:
        return assignment
    rng = np.random.default_rng(g.n * 1009 + k)
    candidates = [_kl_refine(g, assignment, k)]
    for _ in range(_PIN_RESTARTS):
        candidates.append(_kl_refine(g, _seeded_k_partition(rng, g.n, k), k))
    scores = [modularity(g, a) for a in candidates]
    return candidates[int(np.argmax(scores))]


def coarsen_to_k(g: SimilarityGraph, clustering: Clustering, k: int) -> Clustering:
    """Pin the community count to exactly K."""
    if k < 1 or k > g.n:
        raise InputError(f"K={k} must lie in [1, {g.n}]")
    if g.degenerate:
        log.warning("constant similarity graph: balanced contiguous fallback")
        return _balanced_contiguous(g.n, k)
    assignment = clustering.assignment.copy()
    while np.unique(assignment).size > k:
        assignment = _merge_once(g, assignment)
    while np.unique(assignment).size < k:
        assignment = _split_once(g, assignment)
    assignment = _pin_refine(g, _canonical(assignment), k)
    return Clustering(_canonical(assignment), K=k)


def select_leaders(g: SimilarityGraph, clustering: Clustering) -> Clustering:
    """Leader per cluster: the member with the largest intra-cluster
    similarity sum; ties break toward the lowest client id."""
    leaders = []
    for members in clustering.clusters():
        if not members:
            raise InputError("clusters must be nonempty")
        sums = [float(g.s[i, members].sum() - g.s[i, i]) for i in members]
        leaders.append(members[int(np.argmax(sums))])
    return Clustering(clustering.assignment.copy(), leaders, clustering.K)


def cluster_clients(g: SimilarityGraph, k: int, seed: int) -> Clustering:
    """Full pipeline: Louvain, coarsen to K, pick leaders."""
    return select_leaders(g, coarsen_to_k(g, louvain(g, seed), k))
