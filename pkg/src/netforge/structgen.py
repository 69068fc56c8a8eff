"""Seeded generators for compatibility structures and initial weight lists."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from netforge.graph import CompatibilityList, WeightList, n_pairs, to_flat

RANDOM_LATENT = "random_latent"
CIRCULANT = "circulant_symmetric"
KINDS = (RANDOM_LATENT, CIRCULANT)


@dataclass(frozen=True)
class StructureSpec:
    """Recipe for one compatibility structure.

    For ``random_latent`` the latent dimension, log-normal spread and scale
    (the largest compatibility) are drawn per structure from the ``*_range``
    bounds, scale log-uniformly;
    ``boost`` multiplies one home coordinate per agent, planting communities.
    For ``circulant_symmetric`` either ``profile`` is given explicitly or one is
    drawn from a decaying log-normal family.
    """

    n_agents: int
    kind: str = RANDOM_LATENT
    seed: int = 0
    dim_range: tuple = (2, 12)
    spread_range: tuple = (0.1, 1.0)
    scale_range: tuple = (0.5, 3.0)
    boost_range: tuple = (0.0, 10.0)
    profile: Optional[tuple] = None
    decay_range: tuple = (0.5, 12.0)
    level_range: tuple = (0.2, 2.5)
    jitter_range: tuple = (0.0, 0.6)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown structure kind {self.kind!r}")
        if self.n_agents < 2:
            raise ValueError("need at least 2 agents")

    def to_json(self) -> dict:
        return asdict(self)


def _uniform(rng, bounds):
    lo, hi = bounds
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def _log_uniform(rng, bounds):
    lo, hi = bounds
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi)))) if hi > lo else float(lo)


def latent_compat(positions: np.ndarray) -> CompatibilityList:
    p = np.asarray(positions, dtype=float)
    return CompatibilityList(to_flat(p @ p.T), p.shape[0])


def gen_random_structure(spec: StructureSpec, rng: Optional[np.random.Generator] = None) -> CompatibilityList:
    """Inner products of positive latent vectors with per-structure random law."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    dim = int(rng.integers(spec.dim_range[0], spec.dim_range[1] + 1))
    spread = _uniform(rng, spec.spread_range)
    scale = _log_uniform(rng, spec.scale_range)
    boost = _uniform(rng, spec.boost_range)
    p = rng.lognormal(mean=0.0, sigma=spread, size=(spec.n_agents, dim))
    # planted communities: each agent leans towards one latent axis
    home = rng.integers(0, dim, size=spec.n_agents)
    p[np.arange(spec.n_agents), home] *= 1.0 + boost
    # normalise so the largest compatibility is `scale`; keeps optima off the barrier
    gram = p @ p.T
    np.fill_diagonal(gram, 0.0)
    p *= np.sqrt(scale / gram.max())
    c = latent_compat(p)
    assert np.all(c.values > 0)
    return c


def circulant_compat(profile, n: int) -> CompatibilityList:
    """``c_ij = profile[ring_distance(i, j) - 1]`` with ring distance ``min(|i-j|, n-|i-j|)``."""
    f = np.asarray(profile, dtype=float).reshape(-1)
    if f.size != n // 2:
        raise ValueError(f"profile must have n // 2 = {n // 2} entries, got {f.size}")
    if np.any(~(f > 0)):
        raise ValueError("profile entries must be strictly positive")
    i, j = np.triu_indices(n, k=1)
    gap = j - i
    ring = np.minimum(gap, n - gap)
    return CompatibilityList(f[ring - 1], n)


def gen_invisible_hand_structure(spec: StructureSpec, rng: Optional[np.random.Generator] = None) -> CompatibilityList:
    """Circulant structure: every column of the matrix permutes every other."""
    n = spec.n_agents
    if spec.profile is not None:
        return circulant_compat(spec.profile, n)
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    decay = _uniform(rng, spec.decay_range)
    level = _uniform(rng, spec.level_range)
    jitter = _uniform(rng, spec.jitter_range)
    d = np.arange(n // 2)
    f = level * np.exp(-d / decay) * rng.lognormal(0.0, jitter, size=d.size) if d.size else d
    return circulant_compat(np.maximum(f, 1e-9), n)


def generate_structure(spec: StructureSpec) -> CompatibilityList:
    if spec.kind == CIRCULANT:
        return gen_invisible_hand_structure(spec)
    return gen_random_structure(spec)


def column_multisets_equal(c: CompatibilityList, rtol: float = 1e-12) -> bool:
    """Invisible-hand hypothesis: all columns are permutations of one another."""
    mat = c.matrix()
    cols = np.sort(mat, axis=0)
    ref = cols[:, :1]
    return bool(np.allclose(cols, ref, rtol=rtol, atol=0.0))


def structure_hash(c: CompatibilityList) -> str:
    return hashlib.sha256(np.ascontiguousarray(c.values).tobytes()).hexdigest()


@dataclass(frozen=True)
class InitConfig:
    iota: float = 4.0
    omega_min: float = 0.05
    seed: int = 0


def gen_init_weights(n: int, cfg: InitConfig, rng: Optional[np.random.Generator] = None) -> WeightList:
    """Each pair independently at ``omega_min / 2`` with probability ``iota / n``."""
    if not 0 <= cfg.iota <= n:
        raise ValueError(f"iota must lie in [0, {n}]")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    present = rng.random(n_pairs(n)) < cfg.iota / n
    return WeightList(np.where(present, cfg.omega_min / 2, 0.0), n)


def manifest_entry(index: int, spec: StructureSpec, c: CompatibilityList, path: str) -> dict:
    return {"index": index, "path": path, "spec": spec.to_json(), "sha256": structure_hash(c)}


def dumps_manifest(entries: list, **extra) -> str:
    return json.dumps({"structures": entries, **extra}, indent=2, sort_keys=True)
