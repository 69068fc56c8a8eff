"""Round loop, stopping rules, traces and backend selection."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from netforge.abm.core import AbmConfig, World, python_round
from netforge.graph import CompatibilityList, MetricsReport, WeightList, compute_metrics
from netforge.utility import UtilitySpec

log = logging.getLogger(__name__)

try:
    from netforge.abm import _kernel
except ImportError:  # pragma: no cover - exercised only without a compiler
    _kernel = None

HAVE_KERNEL = _kernel is not None
TRACE_COLUMNS = (
    "round", "accepted_actions", "edges", "density", "clustering",
    "gini", "avg_degree", "avg_utility", "sd_utility",
)
MAX_ROUNDS = "max_rounds"
INACTIVE_QUORUM = "inactive_quorum"


def default_backend() -> str:
    forced = os.environ.get("NETFORGE_BACKEND", "").strip().lower()
    if forced in ("python", "cython"):
        return forced
    return "cython" if HAVE_KERNEL else "python"


def _kernel_params(world: World) -> dict:
    cfg, p = world.cfg, world.alky
    return {
        "kappa": p.kappa, "gamma": p.gamma, "delta": p.delta,
        "lam": cfg.lam, "omega_cap": cfg.omega_cap, "omega_min": cfg.omega_min,
        "varpi": cfg.varpi, "temperature": cfg.softmax_temperature,
        "zero_floor": cfg.zero_preimage, "signed_varpi": int(cfg.varpi_mode == "signed"),
        "mem_size": cfg.memory_size,
        "depth": -1 if cfg.scope_depth is None else int(cfg.scope_depth),
        "mem_ttl": 0 if cfg.memory_ttl is None else int(cfg.memory_ttl),
    }


@dataclass
class SimulationTrace:
    rounds: np.ndarray
    acted: np.ndarray
    inactive: np.ndarray
    snapshots: list
    terminal: WeightList
    reason: str
    inactive_rounds: int
    backend: str
    config: AbmConfig
    events: Optional[list] = None
    targets: Optional[list] = None
    plateau: dict = field(default_factory=dict)

    @property
    def n_rounds(self) -> int:
        return int(self.rounds.size)

    @property
    def final_metrics(self) -> MetricsReport:
        return self.snapshots[-1][1]

    def rows(self) -> list[dict]:
        out = []
        for t, m in self.snapshots:
            out.append({
                "round": t, "accepted_actions": int(self.acted[t - 1]), "edges": m.edge_count,
                "density": m.density, "clustering": m.clustering, "gini": m.gini,
                "avg_degree": m.avg_degree, "avg_utility": m.avg_utility, "sd_utility": m.sd_utility,
            })
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
            w.writeheader()
            w.writerows(self.rows())

    def same_as(self, other: "SimulationTrace") -> bool:
        """Bit-level equality of counters and terminal weights."""
        return (
            np.array_equal(self.acted, other.acted)
            and self.reason == other.reason
            and self.terminal.values.tobytes() == other.terminal.values.tobytes()
        )


_PLATEAU_FIELDS = ("edge_count", "density", "clustering", "avg_degree", "avg_utility")


def plateau_report(snapshots: list, n_rounds: int, fraction: float = 0.05) -> dict:
    """Relative change of each metric across the final ``fraction`` of rounds."""
    start = n_rounds - max(1, math.ceil(fraction * n_rounds))
    tail = [m for t, m in snapshots if t >= start]
    if len(tail) < 2:
        return {k: math.nan for k in _PLATEAU_FIELDS}
    out = {}
    for k in _PLATEAU_FIELDS:
        a, b = float(getattr(tail[0], k)), float(getattr(tail[-1], k))
        out[k] = (b - a) / abs(a) if a != 0 else (0.0 if b == a else math.inf)
    return out


def run_simulation(
    c: CompatibilityList,
    utility: UtilitySpec,
    init: WeightList,
    cfg: AbmConfig,
    backend: Optional[str] = None,
    log_events: bool = False,
    round_hook=None,
) -> SimulationTrace:
    """Run rounds until ``max_rounds`` or until the inactivity counter passes its quorum.

    ``round_hook(t, world)`` is called after every round, pruning included.
    """
    world = World(c, utility, init, cfg, log_events=log_events)
    backend = backend or default_backend()
    if backend == "cython" and (world.alky is None or log_events or not HAVE_KERNEL):
        if backend == "cython" and not HAVE_KERNEL and os.environ.get("NETFORGE_BACKEND"):
            raise RuntimeError("compiled kernel requested but not built")
        backend = "python"
    params = _kernel_params(world) if backend == "cython" else None

    n = world.n
    rng = np.random.default_rng(cfg.seed)
    acted_log = []
    snapshots = []
    snap = lambda t: snapshots.append((t, compute_metrics(world.graph(), c, utility, with_compat_stats=False)))
    t, v = 1, 0
    while t <= cfg.max_rounds and v <= cfg.inactive_stop:
        world.round = t
        order = rng.permutation(n).astype(np.int64)
        u = rng.random(n)
        prune = t > cfg.prune_onset
        if params is not None:
            acted = _kernel.run_round(
                world.W, world.C, world.nbr, world.deg, world.mem, world.mem_start,
                world.mem_count, world.mem_time, t, order, u, params, prune,
            )
        else:
            acted = python_round(world, order, u, prune)
        acted_log.append(acted)
        if round_hook is not None:
            round_hook(t, world)
        if acted == 0:
            v += 1
        elif cfg.reset_inactive:
            v = 0
        if t % cfg.snapshot_every == 0:
            snap(t)
        t += 1
    last = t - 1
    if not snapshots or snapshots[-1][0] != last:
        snap(last)
    reason = INACTIVE_QUORUM if v > cfg.inactive_stop else MAX_ROUNDS
    acted_arr = np.asarray(acted_log, dtype=np.int64)
    log.debug("abm stopped after %d rounds (%s)", last, reason)
    return SimulationTrace(
        rounds=np.arange(1, last + 1),
        acted=acted_arr,
        inactive=n - acted_arr,
        snapshots=snapshots,
        terminal=world.graph(),
        reason=reason,
        inactive_rounds=v,
        backend=backend,
        config=cfg,
        events=world.events,
        targets=world.targets,
        plateau=plateau_report(snapshots, last),
    )
