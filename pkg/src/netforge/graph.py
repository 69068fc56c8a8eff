"""Weighted undirected graphs stored as flat upper-triangular weight lists.

Pairs are ordered row-major over the strict upper triangle:
``(0,1), (0,2), ..., (0,N-1), (1,2), ..., (N-2,N-1)``.  Agent ids are 0-based
everywhere in the library; files use 1-based ids (see :mod:`netforge.io`).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, fields
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import shortest_path

UNREACHABLE = math.inf


def n_pairs(n: int) -> int:
    return n * (n - 1) // 2


def n_agents_from_pairs(m: int) -> int:
    n = int(round((1 + math.sqrt(1 + 8 * m)) / 2))
    if n_pairs(n) != m:
        raise ValueError(f"{m} is not a triangular pair count")
    return n


def pair_to_flat(i: int, j: int, n: int) -> int:
    """Flat index of the unordered pair ``{i, j}``."""
    if i == j:
        raise ValueError("self-loop index")
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"pair ({i}, {j}) out of range for n={n}")
    if i > j:
        i, j = j, i
    return i * n - i * (i + 1) // 2 + (j - i - 1)


def flat_to_pair(k: int, n: int) -> tuple[int, int]:
    m = n_pairs(n)
    if not 0 <= k < m:
        raise IndexError(f"flat index {k} out of range for n={n}")
    # closed-form row recovery, then fix rounding
    i = int(n - 2 - math.floor(math.sqrt(-8 * k + 4 * n * (n - 1) - 7) / 2.0 - 0.5))
    while i > 0 and i * n - i * (i + 1) // 2 > k:
        i -= 1
    while (i + 1) * n - (i + 1) * (i + 2) // 2 <= k:
        i += 1
    j = k - (i * n - i * (i + 1) // 2) + i + 1
    return i, j


def triu_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n, k=1)


def to_matrix(values: np.ndarray, n: int) -> np.ndarray:
    """Symmetric ``n x n`` matrix with zero diagonal from a flat pair vector."""
    mat = np.zeros((n, n), dtype=float)
    iu, ju = triu_indices(n)
    mat[iu, ju] = values
    mat[ju, iu] = values
    return mat


def to_flat(mat: np.ndarray) -> np.ndarray:
    n = mat.shape[0]
    iu, ju = triu_indices(n)
    return np.array(mat[iu, ju], dtype=float)


class _PairList:
    """Shared machinery of :class:`WeightList` and :class:`CompatibilityList`."""

    values: np.ndarray
    n_agents: int

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, pair: tuple[int, int]) -> float:
        i, j = pair
        return float(self.values[pair_to_flat(i, j, self.n_agents)])

    def matrix(self) -> np.ndarray:
        return to_matrix(self.values, self.n_agents)

    def row(self, i: int) -> np.ndarray:
        """The ``N-1`` entries incident to agent ``i``, other agents in id order."""
        m = self.matrix()
        return np.delete(m[i], i)

    def pairs(self) -> Iterable[tuple[int, int]]:
        n = self.n_agents
        for i in range(n):
            for j in range(i + 1, n):
                yield i, j


class WeightList(_PairList):
    """Edge intensities in ``[0, 1)``; an edge is present iff its weight is > 0."""

    def __init__(self, values, n_agents: Optional[int] = None):
        arr = np.array(values, dtype=float).reshape(-1)
        if n_agents is None:
            n_agents = n_agents_from_pairs(arr.size)
        if arr.size != n_pairs(n_agents):
            raise ValueError(f"expected {n_pairs(n_agents)} weights, got {arr.size}")
        if np.any(~np.isfinite(arr)) or np.any(arr < 0) or np.any(arr >= 1):
            raise ValueError("weights must lie in [0, 1)")
        arr.setflags(write=False)
        self.values = arr
        self.n_agents = int(n_agents)

    @classmethod
    def from_matrix(cls, mat: np.ndarray) -> "WeightList":
        return cls(to_flat(np.asarray(mat)), mat.shape[0])

    @classmethod
    def zeros(cls, n: int) -> "WeightList":
        return cls(np.zeros(n_pairs(n)), n)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]], weight: float = 0.5) -> "WeightList":
        vals = np.zeros(n_pairs(n))
        for i, j in edges:
            vals[pair_to_flat(i, j, n)] = weight
        return cls(vals, n)

    def present(self) -> np.ndarray:
        return self.values > 0

    def adjacency(self) -> np.ndarray:
        """Binarized adjacency matrix (bool)."""
        return self.matrix() > 0

    def degrees(self) -> np.ndarray:
        return self.adjacency().sum(axis=1)

    def isolated(self) -> np.ndarray:
        """Ids of agents with no incident edge."""
        return np.flatnonzero(self.degrees() == 0)

    def is_sop_feasible(self) -> bool:
        return self.n_agents >= 2 and self.isolated().size == 0

    def edge_count(self) -> int:
        return int(np.count_nonzero(self.values))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, WeightList)
            and other.n_agents == self.n_agents
            and np.array_equal(other.values, self.values)
        )

    def __repr__(self) -> str:
        return f"WeightList(n_agents={self.n_agents}, edges={self.edge_count()})"


class CompatibilityList(_PairList):
    """Strictly positive pairwise affinities."""

    def __init__(self, values, n_agents: Optional[int] = None):
        arr = np.array(values, dtype=float).reshape(-1)
        if n_agents is None:
            n_agents = n_agents_from_pairs(arr.size)
        if arr.size != n_pairs(n_agents):
            raise ValueError(f"expected {n_pairs(n_agents)} compatibilities, got {arr.size}")
        if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
            bad = [flat_to_pair(int(k), n_agents) for k in np.flatnonzero(~(arr > 0))[:10]]
            raise ValueError(f"compatibilities must be strictly positive (offending pairs: {bad})")
        arr.setflags(write=False)
        self.values = arr
        self.n_agents = int(n_agents)

    @classmethod
    def from_matrix(cls, mat: np.ndarray) -> "CompatibilityList":
        mat = np.asarray(mat, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("compatibility matrix must be square")
        if not np.allclose(mat, mat.T, rtol=0, atol=1e-12 * max(1.0, np.abs(mat).max())):
            raise ValueError("compatibility matrix must be symmetric")
        return cls(to_flat(mat), mat.shape[0])

    @classmethod
    def uniform(cls, n: int, value: float) -> "CompatibilityList":
        return cls(np.full(n_pairs(n), float(value)), n)

    def __repr__(self) -> str:
        return f"CompatibilityList(n_agents={self.n_agents})"


# --------------------------------------------------------------------- distance


def _neighbors(adj: np.ndarray) -> list[list[int]]:
    return [list(np.flatnonzero(adj[i])) for i in range(adj.shape[0])]


def graph_distance(g: WeightList, i: int, j: int) -> float:
    """Number of intermediaries on a shortest path (neighbors are at 0).

    Returns :data:`UNREACHABLE` when no path exists.
    """
    if i == j:
        raise ValueError("distance to self is undefined")
    nbrs = _neighbors(g.adjacency())
    seen = {i: 0}
    queue = deque([i])
    while queue:
        u = queue.popleft()
        for v in nbrs[u]:
            if v not in seen:
                seen[v] = seen[u] + 1
                if v == j:
                    return seen[v] - 1
                queue.append(v)
    return UNREACHABLE


def hop_matrix(adj: np.ndarray) -> np.ndarray:
    """All-pairs shortest-path edge counts (inf if unreachable)."""
    return shortest_path(adj.astype(float), method="D", directed=False, unweighted=True)


# ---------------------------------------------------------------------- metrics


def gini(values: Sequence[float]) -> float:
    """Mean-absolute-difference Gini coefficient."""
    x = np.asarray(values, dtype=float).reshape(-1)
    if x.size == 0 or np.any(x < 0):
        raise ValueError("gini needs a non-empty non-negative sequence")
    mu = x.mean()
    if mu <= 0:
        raise ValueError("undefined Gini: all values are zero")
    n = x.size
    # sum_ij |xi - xj| via the sorted form, O(n log n)
    xs = np.sort(x)
    idx = np.arange(1, n + 1)
    mad_sum = 2.0 * np.sum((2 * idx - n - 1) * xs)
    return float(mad_sum / (2.0 * n * n * mu))


def global_clustering(adj: np.ndarray) -> float:
    """Transitivity: 3 * triangles / connected triples (0 when no triple)."""
    a = adj.astype(float)
    deg = a.sum(axis=1)
    triples = float(np.sum(deg * (deg - 1)))
    if triples == 0:
        return 0.0
    closed = float(np.trace(a @ a @ a))
    return closed / triples


def degree_assortativity(adj: np.ndarray) -> float:
    """Pearson correlation of endpoint degrees over edges; nan when undefined."""
    deg = adj.sum(axis=1).astype(float)
    iu, ju = np.nonzero(np.triu(adj, k=1))
    if iu.size == 0:
        return math.nan
    x = np.concatenate([deg[iu], deg[ju]])
    y = np.concatenate([deg[ju], deg[iu]])
    vx = x.var()
    if vx <= 1e-15 * max(1.0, x.mean() ** 2):
        return math.nan
    return float(np.mean((x - x.mean()) * (y - y.mean())) / vx)


def compat_correlations(c: CompatibilityList) -> np.ndarray:
    """Pearson coefficients between every pair of agents' compatibility vectors.

    When correlating columns ``i`` and ``j`` the entries at rows ``i`` and ``j``
    are dropped.  Pairs with a constant column give nan.
    """
    n = c.n_agents
    mat = c.matrix()
    out = np.full(n_pairs(n), math.nan)
    if n < 4:
        return out
    k = 0
    for i in range(n):
        for j in range(i + 1, n):
            keep = np.ones(n, dtype=bool)
            keep[[i, j]] = False
            x = mat[keep, i]
            y = mat[keep, j]
            xc = x - x.mean()
            yc = y - y.mean()
            den = math.sqrt(float(xc @ xc) * float(yc @ yc))
            if den > 0:
                out[k] = float(xc @ yc) / den
            k += 1
    return out


METRIC_FIELDS = (
    "edge_count",
    "clustering",
    "gini",
    "density",
    "avg_distance",
    "unreachable_fraction",
    "assortativity",
    "avg_degree",
    "var_degree",
    "sd_comp",
    "cor_comp",
    "sd_cor",
    "avg_utility",
    "sd_utility",
)


@dataclass(frozen=True)
class MetricsReport:
    edge_count: int
    clustering: float
    gini: float
    density: float
    avg_distance: float
    unreachable_fraction: float
    assortativity: float
    avg_degree: float
    var_degree: float
    sd_comp: float
    cor_comp: float
    sd_cor: float
    avg_utility: Optional[float] = None
    sd_utility: Optional[float] = None
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "extra"}

    @property
    def assortativity_defined(self) -> bool:
        return not math.isnan(self.assortativity)


def distance_summary(adj: np.ndarray) -> tuple[float, float]:
    """Mean intermediary distance over reachable pairs, and unreachable fraction."""
    n = adj.shape[0]
    if n < 2:
        return math.nan, 0.0
    hops = hop_matrix(adj)
    iu, ju = triu_indices(n)
    h = hops[iu, ju]
    finite = np.isfinite(h)
    frac_unreach = 1.0 - finite.mean()
    if not finite.any():
        return math.nan, frac_unreach
    return float(np.mean(h[finite] - 1.0)), float(frac_unreach)


def compute_metrics(
    g: WeightList,
    c: Optional[CompatibilityList] = None,
    utility=None,
    with_compat_stats: bool = True,
) -> MetricsReport:
    """Benchmark metric suite on the binarized graph.

    ``utility`` may be a single utility model or one per agent; when given,
    per-agent utilities are summarised in ``avg_utility``/``sd_utility``.
    """
    if c is not None and c.n_agents != g.n_agents:
        raise ValueError("graph and compatibility list sizes differ")
    adj = g.adjacency()
    deg = adj.sum(axis=1).astype(float)
    m = g.edge_count()
    npairs = n_pairs(g.n_agents)
    avg_dist, unreach = distance_summary(adj)
    try:
        gi = gini(deg)
    except ValueError:
        gi = math.nan
    sd_comp = cor_comp = sd_cor = math.nan
    if c is not None and with_compat_stats:
        sd_comp = float(np.std(c.values))
        cors = compat_correlations(c)
        cors = cors[~np.isnan(cors)]
        if cors.size:
            cor_comp = float(cors.mean())
            sd_cor = float(cors.std())
    avg_u = sd_u = None
    if utility is not None:
        if c is None:
            raise ValueError("utility statistics need a compatibility list")
        from netforge.utility import agent_utilities

        us = agent_utilities(g, c, utility)
        avg_u = float(us.mean())
        sd_u = float(us.std())
    return MetricsReport(
        edge_count=m,
        clustering=global_clustering(adj),
        gini=gi,
        density=m / npairs if npairs else math.nan,
        avg_distance=avg_dist,
        unreachable_fraction=unreach,
        assortativity=degree_assortativity(adj),
        avg_degree=float(deg.mean()),
        var_degree=float(deg.var()),
        sd_comp=sd_comp,
        cor_comp=cor_comp,
        sd_cor=sd_cor,
        avg_utility=avg_u,
        sd_utility=sd_u,
    )
