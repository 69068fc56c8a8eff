"""World state, configuration and the per-agent request/response protocol.

Weights live in one symmetric matrix shared by all agents.  Every mutation
goes through :func:`take_action` or :func:`respond_to_request` (plus the
pruning sweep), so no weight moves without the counterparty's consent or a
unilateral decrease by an incident agent.

Steps act on the logistic pre-image of a weight rather than on the weight.
The pure-Python code here is the reference; the compiled round kernel must
reproduce it bit for bit on the homogeneous ALKY path.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from netforge.graph import CompatibilityList, WeightList
from netforge.utility import ALPHA_CAP, UtilitySpec, homogeneous_alky, per_agent

UNLIMITED = None
VARPI_MODES = ("magnitude", "signed")
# logistic argument clamp; keeps exp() finite in both backends
_XMAX = 700.0
_TINY = 5e-324  # smallest positive double; a step never deletes an edge


@dataclass(frozen=True)
class AbmConfig:
    lam: float = 0.1
    omega_cap: float = 0.1
    omega_min: float = 0.05
    varpi: float = 1e-4
    memory_size: int = 3
    scope_depth: Optional[int] = UNLIMITED
    max_rounds: int = 2000
    inactive_stop: int = 53
    prune_after_fraction: float = 0.10
    softmax_temperature: float = 1.0
    seed: int = 0
    snapshot_every: int = 10
    reset_inactive: bool = False
    varpi_mode: str = "magnitude"
    # pre-image used for a weight of exactly zero
    zero_preimage: float = 0.05
    # rounds an entry blocks its target; None keeps entries until evicted
    memory_ttl: Optional[int] = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if not 0 < self.omega_min < self.omega_cap < 1:
            raise ValueError("need 0 < omega_min < omega_cap < 1")
        if not self.varpi > 0:
            raise ValueError("varpi must be > 0")
        if self.memory_size < 0:
            raise ValueError("memory_size must be >= 0")
        if self.scope_depth is not None and self.scope_depth < 0:
            raise ValueError("scope_depth must be >= 0 or None (unlimited)")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if not self.softmax_temperature > 0:
            raise ValueError("softmax_temperature must be > 0")
        if self.varpi_mode not in VARPI_MODES:
            raise ValueError(f"varpi_mode must be one of {VARPI_MODES}")
        if not 0 < self.zero_preimage < 1:
            raise ValueError("zero_preimage must lie in (0, 1)")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")
        if self.memory_ttl is not None and self.memory_ttl < 1:
            raise ValueError("memory_ttl must be >= 1 or None")

    @property
    def prune_onset(self) -> float:
        return self.max_rounds * self.prune_after_fraction

    @classmethod
    def from_mapping(cls, m: dict) -> "AbmConfig":
        m = dict(m)
        if "lambda" in m:
            m["lam"] = m.pop("lambda")
        depth = m.get("scope_depth")
        if isinstance(depth, str):
            m["scope_depth"] = parse_depth(depth)
        known = {f.name for f in fields(cls)}
        unknown = set(m) - known
        if unknown:
            raise ValueError(f"unknown ABM config keys: {sorted(unknown)}")
        return cls(**m)

    def to_json(self) -> dict:
        return asdict(self)


def parse_depth(text) -> Optional[int]:
    if text is None:
        return None
    if isinstance(text, str) and text.strip().lower() in ("inf", "unlimited", "none", "-1"):
        return None
    d = int(text)
    if d < 0:
        return None
    return d


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _sigmoid(x: float) -> float:
    if x > _XMAX:
        x = _XMAX
    elif x < -_XMAX:
        # 1 / (1 + e^-x) == e^x to double precision here; clamping would break monotonicity
        return max(math.exp(x), _TINY)
    return 1.0 / (1.0 + math.exp(-x))


def sigmoid_step(alpha: float, delta_u: float, floor: float = 1e-6) -> float:
    """Move ``alpha`` by ``delta_u`` on the logistic scale.

    A zero weight has no pre-image, so it starts from ``floor`` instead.
    The result stays below the barrier pole.
    """
    p = floor if alpha <= 0.0 else min(alpha, ALPHA_CAP)
    out = _sigmoid(_logit(p) + delta_u)
    return out if out < ALPHA_CAP else ALPHA_CAP


class World:
    """Mutable simulation state: weights, adjacency lists and agent memories."""

    def __init__(self, c: CompatibilityList, utility: UtilitySpec, init: WeightList,
                 cfg: AbmConfig, log_events: bool = False):
        if c.n_agents != init.n_agents:
            raise ValueError("compatibility and initial weights disagree on N")
        n = c.n_agents
        self.n = n
        self.cfg = cfg
        self.C = np.ascontiguousarray(c.matrix(), dtype=np.float64)
        self.W = np.ascontiguousarray(init.matrix(), dtype=np.float64)
        self.models = per_agent(utility, n)
        self.alky = homogeneous_alky(utility)
        self.nbr = np.full((n, max(n - 1, 1)), -1, dtype=np.int64)
        self.deg = np.zeros(n, dtype=np.int64)
        for i in range(n):
            for j in np.flatnonzero(self.W[i] > 0):
                self.nbr[i, self.deg[i]] = j
                self.deg[i] += 1
        cap = max(cfg.memory_size, 1)
        self.mem = np.full((n, cap), -1, dtype=np.int64)
        self.mem_start = np.zeros(n, dtype=np.int64)
        self.mem_count = np.zeros(n, dtype=np.int64)
        self.mem_time = np.zeros((n, cap), dtype=np.int64)
        self.events: Optional[list] = [] if log_events else None
        # (round, agent, target, memory at selection) for every issued action
        self.targets: Optional[list] = [] if log_events else None
        self.round = 0

    # -- state helpers -------------------------------------------------
    def graph(self) -> WeightList:
        return WeightList.from_matrix(self.W)

    def memory(self, i: int) -> list[int]:
        cap = self.mem.shape[1]
        s, k = int(self.mem_start[i]), int(self.mem_count[i])
        return [int(self.mem[i, (s + q) % cap]) for q in range(k)]

    def in_memory(self, i: int, j: int) -> bool:
        cap = self.mem.shape[1]
        s = self.mem_start[i]
        for q in range(self.mem_count[i]):
            if self.mem[i, (s + q) % cap] == j:
                return True
        return False

    def remember(self, i: int, k: int) -> None:
        """FIFO insert; the oldest entry is evicted first when full."""
        if self.targets is not None:
            self.targets.append((self.round, int(i), int(k), tuple(self.memory(i))))
        size = self.cfg.memory_size
        if size == 0:
            return
        if self.mem_count[i] == size:
            self.mem_start[i] = (self.mem_start[i] + 1) % size
            self.mem_count[i] -= 1
        slot = (self.mem_start[i] + self.mem_count[i]) % size
        self.mem[i, slot] = k
        self.mem_time[i, slot] = self.round
        self.mem_count[i] += 1

    def expire(self, i: int) -> None:
        """Drop entries older than ``memory_ttl`` rounds, oldest first."""
        ttl = self.cfg.memory_ttl
        if ttl is None:
            return
        cap = self.mem.shape[1]
        while self.mem_count[i] > 0 and self.round - self.mem_time[i, self.mem_start[i]] > ttl:
            self.mem_start[i] = (self.mem_start[i] + 1) % cap
            self.mem_count[i] -= 1

    def _unlink(self, i: int, j: int) -> None:
        d = self.deg[i]
        for q in range(d):
            if self.nbr[i, q] == j:
                self.nbr[i, q] = self.nbr[i, d - 1]
                self.nbr[i, d - 1] = -1
                self.deg[i] = d - 1
                return

    def set_weight(self, i: int, k: int, new: float, kind: str, actor: int) -> None:
        old = self.W[i, k]
        self.W[i, k] = new
        self.W[k, i] = new
        if old == 0.0 and new > 0.0:
            self.nbr[i, self.deg[i]] = k
            self.deg[i] += 1
            self.nbr[k, self.deg[k]] = i
            self.deg[k] += 1
        elif old > 0.0 and new == 0.0:
            self._unlink(i, k)
            self._unlink(k, i)
        if self.events is not None:
            self.events.append((self.round, kind, actor, int(i), int(k), float(old), float(new)))

    def row_sum(self, i: int) -> float:
        s = 0.0
        row = self.W[i]
        for j in range(self.n):
            s += row[j]
        return s

    def prune(self) -> int:
        """Zero every weight strictly between 0 and ``omega_min``."""
        lo = self.cfg.omega_min
        hits = np.argwhere(np.triu((self.W > 0) & (self.W < lo), 1))
        for i, j in hits:
            self.set_weight(int(i), int(j), 0.0, "prune", -1)
        return len(hits)


def compute_scope(g, i: int, depth: Optional[int]) -> set:
    """Agents within ``depth`` intermediaries of ``i`` (neighbors are depth 0)."""
    if isinstance(g, World):
        return set(_scope_ids(g, i, depth))
    adj = g.adjacency() if isinstance(g, WeightList) else np.asarray(g) > 0
    n = adj.shape[0]
    if depth is None:
        return set(range(n)) - {i}
    seen = {i}
    frontier = [i]
    for _ in range(depth + 1):
        nxt = []
        for v in frontier:
            for w in np.flatnonzero(adj[v]):
                w = int(w)
                if w not in seen:
                    seen.add(w)
                    nxt.append(w)
        frontier = nxt
    seen.discard(i)
    return seen


def _scope_ids(world: World, i: int, depth: Optional[int]) -> list[int]:
    n = world.n
    if depth is None:
        return [j for j in range(n) if j != i]
    mark = [False] * n
    mark[i] = True
    frontier = [i]
    for _ in range(depth + 1):
        nxt = []
        for v in frontier:
            for q in range(world.deg[v]):
                w = int(world.nbr[v, q])
                if not mark[w]:
                    mark[w] = True
                    nxt.append(w)
        if not nxt:
            break
        frontier = nxt
    mark[i] = False
    return [j for j in range(n) if mark[j]]


def _alky_grad(world: World, i: int, j: int, shift: float) -> float:
    p = world.alky
    a = world.W[i, j]
    x = a ** p.gamma
    d = 1.0 - x
    return p.kappa * world.C[i, j] - p.gamma * a ** (p.gamma - 1.0) / (d * d) + shift


def _alky_shift(world: World, i: int) -> float:
    p = world.alky
    return -p.delta * world.row_sum(i) ** (p.delta - 1.0)


def scoped_gradient(world: World, i: int, ids: list[int]) -> list[float]:
    """Gradient of agent ``i``'s utility on its scoped sub-row, in ``ids`` order."""
    if world.alky is not None:
        # every neighbor is in scope, so the shared term sees the full row sum
        shift = _alky_shift(world, i)
        return [_alky_grad(world, i, j, shift) for j in ids]
    idx = np.asarray(ids, dtype=np.int64)
    g = world.models[i].gradient(world.W[i, idx], world.C[i, idx])
    return [float(v) for v in g]


def softargmax_pick(values: list[float], u: float, temperature: float) -> int:
    """Inverse-CDF draw from ``exp(v / T)`` using uniform ``u``."""
    m = max(values)
    weights = [math.exp((v - m) / temperature) for v in values]
    total = 0.0
    for w in weights:
        total += w
    target = u * total
    cum = 0.0
    for q, w in enumerate(weights):
        cum += w
        if cum > target:
            return q
    return len(values) - 1


def take_action(world: World, i: int, u: float) -> bool:
    """Agent ``i`` picks a target in scope and asks for, or makes, a weight change.

    Returns True iff some weight changed.
    """
    cfg = world.cfg
    world.expire(i)
    ids = _scope_ids(world, i, cfg.scope_depth)
    if not ids:
        return False
    grad = scoped_gradient(world, i, ids)
    signed = cfg.varpi_mode == "signed"
    W = world.W
    for q, j in enumerate(ids):
        gq = grad[q]
        if world.in_memory(i, j) or (gq <= cfg.varpi if signed else abs(gq) <= cfg.varpi):
            grad[q] = 0.0
        elif gq < 0.0 and W[i, j] == 0.0:
            # projected gradient: an absent edge cannot be decreased
            grad[q] = 0.0
    q = softargmax_pick([abs(v) for v in grad], u, cfg.softmax_temperature)
    k, gk = ids[q], grad[q]
    if gk > 0.0:
        world.remember(i, k)
        proposal = sigmoid_step(world.W[i, k], cfg.lam * gk, cfg.zero_preimage)
        return respond_to_request(world, k, i, proposal)
    if gk < 0.0:
        old = world.W[i, k]
        if old == 0.0:
            # nothing to decrease
            return False
        world.remember(i, k)
        new = max(sigmoid_step(old, cfg.lam * gk, cfg.zero_preimage), old - cfg.omega_cap)
        world.set_weight(i, k, new, "decrease", i)
        return bool(new != old)
    return False


def _response_gradient(world: World, k: int, i: int) -> float:
    if world.alky is not None:
        return _alky_grad(world, k, i, _alky_shift(world, k))
    ids = _scope_ids(world, k, world.cfg.scope_depth)
    if i not in ids:
        ids = sorted(ids + [i])
    return scoped_gradient(world, k, ids)[ids.index(i)]


def respond_to_request(world: World, k: int, i: int, a: float) -> bool:
    """Agent ``k`` judges ``i``'s proposal ``a`` with its own gradient toward ``i``."""
    cfg = world.cfg
    g = _response_gradient(world, k, i)
    old = world.W[i, k]
    if g > 0.0:
        own = sigmoid_step(old, cfg.lam * g, cfg.zero_preimage)
        offer = min(a, own)
        if offer > cfg.omega_min:
            new = min(offer, old + cfg.omega_cap) if old > 0.0 else cfg.omega_cap
            world.set_weight(i, k, new, "accept" if old > 0.0 else "create", k)
            return bool(new != old)
        return False
    if g < 0.0:
        if old == 0.0:
            return False
        new = max(sigmoid_step(old, cfg.lam * g, cfg.zero_preimage), old - cfg.omega_cap, 0.0)
        world.set_weight(i, k, new, "backfire", k)
        return bool(new != old)
    return False


def audit_events(events: list, cfg: AbmConfig) -> list[str]:
    """Check logged weight changes against the per-branch step bounds."""
    bad = []
    tol = 1e-12
    for rnd, kind, actor, i, k, old, new in events:
        if not 0.0 <= new < 1.0:
            bad.append(f"round {rnd}: weight {new!r} outside [0, 1)")
        if kind == "create" and not (old == 0.0 and new == cfg.omega_cap):
            bad.append(f"round {rnd}: creation {old}->{new} not exactly omega_cap")
        elif kind == "accept" and not 0.0 < new - old <= cfg.omega_cap + tol:
            bad.append(f"round {rnd}: increase {old}->{new} exceeds omega_cap")
        elif kind in ("decrease", "backfire") and not 0.0 <= old - new <= cfg.omega_cap + tol:
            bad.append(f"round {rnd}: decrease {old}->{new} exceeds omega_cap")
        elif kind == "prune" and not (new == 0.0 and 0.0 < old < cfg.omega_min):
            bad.append(f"round {rnd}: prune of {old} outside (0, omega_min)")
        if actor >= 0 and actor not in (i, k):
            bad.append(f"round {rnd}: agent {actor} changed non-incident pair ({i}, {k})")
    return bad


def python_round(world: World, order, u, prune: bool) -> int:
    """One round in the given agent order; returns the number of agents that acted."""
    acted = 0
    for pos in range(len(order)):
        if take_action(world, int(order[pos]), float(u[pos])):
            acted += 1
    if prune:
        world.prune()
    return acted
