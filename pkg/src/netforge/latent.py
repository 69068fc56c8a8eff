"""Latent characteristic vectors and white-noise clone pipelines."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from netforge.errors import DataError, NetforgeError, NumericalError
from netforge.graph import (
    METRIC_FIELDS,
    CompatibilityList,
    MetricsReport,
    WeightList,
    compute_metrics,
    global_clustering,
    to_flat,
)
from netforge.sop import DEFAULT_MAX_ITER, recover_compat, solve_sop
from netforge.utility import UtilitySpec

log = logging.getLogger(__name__)

ON_P = "on_P"
ON_C = "on_C"
TARGETS = (ON_P, ON_C)
DEFAULT_CLAMP = 1e-6
# slack pairs sit exactly on their bound after recovery; only a tight
# stationarity test separates a small weight from a zero one
CLONE_TOL = 1e-12


@dataclass
class LatentPositions:
    rows: np.ndarray
    epsilon: float = 0.0
    residual: float = 0.0

    @property
    def n_agents(self) -> int:
        return int(self.rows.shape[0])

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def gram(self) -> np.ndarray:
        return self.rows @ self.rows.T

    def violations(self) -> list[tuple[int, int]]:
        """Pairs whose inner product is not strictly positive."""
        gm = self.gram()
        iu, ju = np.triu_indices(self.n_agents, k=1)
        bad = gm[iu, ju] <= 0
        return list(zip(iu[bad].tolist(), ju[bad].tolist()))


def _factor(c: CompatibilityList, eps: float):
    mat = c.matrix()
    loaded = mat.copy()
    np.fill_diagonal(loaded, mat.sum(axis=1) + eps)
    vals, vecs = np.linalg.eigh(loaded)
    return mat, vals, vecs


def embed_compat(c: CompatibilityList, dim: Optional[int] = None, epsilon: Optional[float] = None) -> LatentPositions:
    """Rows ``P`` with ``P_i . P_j = c_ij`` off the diagonal.

    The diagonal is loaded to ``sum_j c_ij + epsilon`` so the completed matrix
    is strictly diagonally dominant, then factored by eigendecomposition.
    """
    n = c.n_agents
    dim = n if dim is None else int(dim)
    if dim < n:
        raise DataError(f"insufficient latent dimension: K={dim} < N={n}")
    eps = 1e-6 * float(c.values.max()) if epsilon is None else float(epsilon)
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    mat, vals, vecs = _factor(c, eps)
    if vals.min() <= 0:
        # loading is a certificate in exact arithmetic; round-off can still bite
        eps *= 1e3
        log.warning("loaded matrix not positive definite, retrying with epsilon=%g", eps)
        mat, vals, vecs = _factor(c, eps)
        if vals.min() <= 0:
            raise NumericalError(f"loaded matrix not positive definite (min eigenvalue {vals.min():.3e})")
    P = vecs * np.sqrt(vals)
    if dim > n:
        P = np.hstack([P, np.zeros((n, dim - n))])
    gm = P @ P.T
    off = ~np.eye(n, dtype=bool)
    resid = float(np.abs(gm - mat)[off].max()) if n > 1 else 0.0
    return LatentPositions(P, eps, resid)


def compat_from_positions(p: LatentPositions, clamp_floor: Optional[float] = None) -> tuple[CompatibilityList, int]:
    """Inner products as a compatibility list, plus the number of clamped pairs.

    Without ``clamp_floor`` a non-positive inner product is a data error.
    """
    vals = to_flat(p.gram())
    bad = vals <= 0 if clamp_floor is None else vals < clamp_floor
    if clamp_floor is None:
        if bad.any():
            pairs = p.violations()
            raise DataError(f"non-positive compatibility on {len(pairs)} pairs: {pairs[:10]}")
        return CompatibilityList(vals, p.n_agents), 0
    if not clamp_floor > 0:
        raise ValueError("clamp_floor must be positive")
    return CompatibilityList(np.where(bad, clamp_floor, vals), p.n_agents), int(bad.sum())


@dataclass(frozen=True)
class PerturbConfig:
    sigma: float = 0.0
    target: str = ON_P
    clamp_floor: float = DEFAULT_CLAMP
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")
        if not self.clamp_floor > 0:
            raise ValueError("clamp_floor must be positive")
        if self.target not in TARGETS:
            raise ValueError(f"target must be one of {TARGETS}")


def perturb_compat(c_bar: CompatibilityList, cfg: PerturbConfig, rng: np.random.Generator,
                   dim: Optional[int] = None) -> tuple[CompatibilityList, int]:
    """One noisy copy of ``c_bar`` and its clamp count."""
    if cfg.target == ON_C:
        noisy = c_bar.values + rng.normal(0.0, cfg.sigma, c_bar.values.size)
        low = noisy < cfg.clamp_floor
        return CompatibilityList(np.where(low, cfg.clamp_floor, noisy), c_bar.n_agents), int(low.sum())
    pos = embed_compat(c_bar, dim)
    rows = pos.rows + rng.normal(0.0, cfg.sigma, pos.rows.shape)
    return compat_from_positions(LatentPositions(rows, pos.epsilon), cfg.clamp_floor)


def edge_diff(original: WeightList, clone: WeightList) -> tuple[int, int, int]:
    """Deleted, new and kept edge counts by presence."""
    a, b = original.present(), clone.present()
    return int((a & ~b).sum()), int((~a & b).sum()), int((a & b).sum())


@dataclass
class CloneBatchReport:
    reports: list
    graphs: list
    deleted_edges: np.ndarray
    new_edges: np.ndarray
    kept_edges: np.ndarray
    clamped: np.ndarray
    original: MetricsReport
    original_edges: int
    failures: list = field(default_factory=list)
    config: Optional[PerturbConfig] = None

    @property
    def n_ok(self) -> int:
        return len(self.reports)

    def _column(self, name: str) -> np.ndarray:
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in self.reports], dtype=float)

    @property
    def means(self) -> dict:
        return {k: float(np.nanmean(self._column(k))) if self.reports else math.nan for k in METRIC_FIELDS}

    @property
    def sds(self) -> dict:
        return {k: float(np.nanstd(self._column(k))) if self.reports else math.nan for k in METRIC_FIELDS}

    @property
    def new_fraction(self) -> float:
        """Mean share of clone edges absent from the original."""
        tot = self.new_edges + self.kept_edges
        return float(np.mean(np.where(tot > 0, self.new_edges / np.maximum(tot, 1), 0.0)))

    def table_rows(self) -> list[dict]:
        """Rows named like the clone comparison table: one per metric, mean and sd."""
        rows = [
            {"metric": "edges", "original": self.original_edges,
             "mean": float(np.mean(self.kept_edges + self.new_edges)), "sd": float(np.std(self.kept_edges + self.new_edges))},
            {"metric": "deleted_edges", "original": 0, "mean": float(np.mean(self.deleted_edges)), "sd": float(np.std(self.deleted_edges))},
            {"metric": "new_edges", "original": 0, "mean": float(np.mean(self.new_edges)), "sd": float(np.std(self.new_edges))},
        ]
        means, sds = self.means, self.sds
        for k in METRIC_FIELDS:
            if k == "edge_count":
                continue
            rows.append({"metric": k, "original": getattr(self.original, k), "mean": means[k], "sd": sds[k]})
        return rows


def _one_clone(job):
    idx, c_bar, utility, cfg, tol, max_iter, dim = job
    rng = np.random.default_rng([cfg.seed, idx])
    try:
        if cfg.sigma == 0:
            c, clamps = c_bar, 0
        else:
            c, clamps = perturb_compat(c_bar, cfg, rng, dim)
        sol = solve_sop(c, utility, tol=tol, max_iter=max_iter, n_starts=1, seed=int(rng.integers(2**31)))
        g = sol.alpha_star
        return idx, g, compute_metrics(g, c, utility), clamps, None
    except NetforgeError as exc:
        return idx, None, None, 0, f"{type(exc).__name__}: {exc}"


def perturb_and_regenerate(
    original: WeightList,
    utility: UtilitySpec,
    cfg: PerturbConfig,
    n_clones: int = 1,
    tol: float = CLONE_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    dim: Optional[int] = None,
    workers: int = 1,
) -> CloneBatchReport:
    """Recover, perturb, re-solve and compare ``n_clones`` similar networks.

    Clone ``k`` draws from ``default_rng([cfg.seed, k])`` so results do not
    depend on ``workers``.
    """
    if n_clones < 1:
        raise ValueError("n_clones must be >= 1")
    c_bar = recover_compat(original, utility).c_bar
    jobs = [(k, c_bar, utility, cfg, tol, max_iter, dim) for k in range(n_clones)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_clone, jobs))
    else:
        results = [_one_clone(j) for j in jobs]
    reports, graphs, diffs, clamps, failures = [], [], [], [], []
    for idx, g, rep, ncl, err in results:
        if err is not None:
            failures.append((idx, err))
            log.warning("clone %d failed: %s", idx, err)
            continue
        reports.append(rep)
        graphs.append(g)
        diffs.append(edge_diff(original, g))
        clamps.append(ncl)
    if not reports:
        raise NumericalError(f"all {n_clones} clones failed; first error: {failures[0][1]}")
    d = np.array(diffs, dtype=np.int64).reshape(-1, 3)
    return CloneBatchReport(
        reports=reports,
        graphs=graphs,
        deleted_edges=d[:, 0],
        new_edges=d[:, 1],
        kept_edges=d[:, 2],
        clamped=np.array(clamps, dtype=np.int64),
        original=compute_metrics(original, c_bar, utility),
        original_edges=original.edge_count(),
        failures=failures,
        config=cfg,
    )


@dataclass
class ProbeSummary:
    mean: float
    sd: float
    values: np.ndarray
    removed: int
    mode: str


def robustness_probe(
    original: WeightList,
    removal_fraction: float,
    n_trials: int = 1000,
    mode: str = "vertices",
    seed: int = 0,
) -> ProbeSummary:
    """Clustering after removing a uniform random share of edges or vertices."""
    if not 0 < removal_fraction < 1:
        raise ValueError("removal_fraction must lie in (0, 1)")
    if mode not in ("edges", "vertices"):
        raise ValueError("mode must be 'edges' or 'vertices'")
    adj = original.adjacency()
    n = original.n_agents
    rng = np.random.default_rng(seed)
    if mode == "vertices":
        k = int(round(removal_fraction * n))
        if n - k < 3:
            raise DataError(f"removing {k} of {n} vertices leaves fewer than 3")
    else:
        iu, ju = np.nonzero(np.triu(adj, 1))
        k = int(round(removal_fraction * iu.size))
    if k == 0:
        base = global_clustering(adj)
        return ProbeSummary(base, 0.0, np.full(n_trials, base), 0, mode)
    out = np.empty(n_trials)
    for t in range(n_trials):
        if mode == "vertices":
            keep = np.sort(rng.choice(n, n - k, replace=False))
            out[t] = global_clustering(adj[np.ix_(keep, keep)])
        else:
            drop = rng.choice(iu.size, k, replace=False)
            a = adj.copy()
            a[iu[drop], ju[drop]] = False
            a[ju[drop], iu[drop]] = False
            out[t] = global_clustering(a)
    return ProbeSummary(float(out.mean()), float(out.std()), out, k, mode)
