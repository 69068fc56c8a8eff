"""Seeded batches of SOP references and ABM replicates over a config grid."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from netforge import __version__
from netforge.abm import AbmConfig, run_simulation
from netforge.errors import NetforgeError, NumericalError
from netforge.graph import METRIC_FIELDS, CompatibilityList, compute_metrics
from netforge.io import write_compat_file, write_graph_file, write_json
from netforge.sop import solve_sop
from netforge.structgen import InitConfig, StructureSpec, gen_init_weights, generate_structure, structure_hash
from netforge.utility import Alky, AlkyParams

log = logging.getLogger(__name__)

LONG_COLUMNS = ("structure_id", "replicate", "iota", "scope_depth", "metric", "value", "sop_value", "deviation")
SOP_REPLICATE = "sop"
# grid slot reserved for the SOP reference start
_SOP_POINT = 0xFFFF


def sub_seed(master: int, structure: int, replicate: int, grid_point: int) -> int:
    return int(np.random.SeedSequence([master, structure, replicate, grid_point]).generate_state(1)[0])


def depth_label(d: Optional[int]) -> str:
    return "inf" if d is None else str(d)


@dataclass
class BatchPlan:
    structures: list
    out_dir: str
    replicates: int = 3
    iotas: tuple = (4.0,)
    scope_depths: tuple = (None,)
    master_seed: int = 0
    abm: AbmConfig = field(default_factory=AbmConfig)
    alky: AlkyParams = field(default_factory=AlkyParams)
    workers: int = 1
    write_graphs: bool = False

    def grid(self) -> list:
        return [(iota, d) for iota in self.iotas for d in self.scope_depths]

    def echo(self) -> dict:
        return {
            "replicates": self.replicates, "iotas": list(self.iotas),
            "scope_depths": [depth_label(d) for d in self.scope_depths],
            "master_seed": self.master_seed, "abm": self.abm.to_json(),
            "alky": asdict(self.alky), "structures": len(self.structures),
        }


def structures_from_spec(spec: StructureSpec, count: int) -> list:
    """``count`` structures with seeds ``spec.seed + k``."""
    return [generate_structure(replace(spec, seed=spec.seed + k)) for k in range(count)]


def _metric_rows(m) -> dict:
    return {k: getattr(m, k) for k in METRIC_FIELDS}


def _run_one(job):
    s_idx, rep, g_idx, iota, depth, c, plan_abm, alky, seed = job
    u = Alky(alky)
    try:
        init = gen_init_weights(c.n_agents, InitConfig(iota, plan_abm.omega_min, seed))
        cfg = replace(plan_abm, scope_depth=depth, seed=seed)
        tr = run_simulation(c, u, init, cfg)
        m = compute_metrics(tr.terminal, c, u)
        return job[:5], _metric_rows(m) | {"rounds": tr.n_rounds}, tr.terminal, None
    except (NetforgeError, ValueError) as exc:
        return job[:5], None, None, f"{type(exc).__name__}: {exc}"


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


@dataclass
class BatchResult:
    rows: list
    dispersion: list
    failures: list
    n_runs: int
    out_dir: Path

    @property
    def failure_rate(self) -> float:
        return len(self.failures) / self.n_runs if self.n_runs else 0.0


def dispersion_table(rows: list) -> list:
    """Intra-replicate sd (mean over structures) against inter-structure sd of replicate means."""
    cells: dict = {}
    for r in rows:
        if r["replicate"] == SOP_REPLICATE:
            continue
        key = (r["iota"], r["scope_depth"], r["metric"])
        cells.setdefault(key, {}).setdefault(r["structure_id"], []).append(r["value"])
    out = []
    for (iota, depth, metric), by_s in sorted(cells.items(), key=lambda kv: tuple(map(str, kv[0]))):
        groups = [np.asarray(v, dtype=float) for _, v in sorted(by_s.items())]
        groups = [g[np.isfinite(g)] for g in groups]
        groups = [g for g in groups if g.size]
        intra = float(np.mean([g.std() for g in groups])) if groups else math.nan
        inter = float(np.std([g.mean() for g in groups])) if len(groups) > 1 else math.nan
        ratio = intra / inter if inter and inter > 0 else math.nan
        out.append({"iota": iota, "scope_depth": depth, "metric": metric,
                    "intra_sd": intra, "inter_sd": inter, "ratio": ratio})
    return out


def run_batch(plan: BatchPlan) -> BatchResult:
    out = Path(plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    u = Alky(plan.alky)
    rows = []
    sop_ref = {}
    for s_idx, c in enumerate(plan.structures):
        try:
            sol = solve_sop(c, u, seed=sub_seed(plan.master_seed, s_idx, 0, _SOP_POINT))
            sop_ref[s_idx] = _metric_rows(compute_metrics(sol.alpha_star, c, u))
            if plan.write_graphs:
                write_graph_file(sol.alpha_star, out / f"sop_{s_idx:03d}.tsv")
        except NumericalError as exc:
            log.warning("structure %d: SOP reference failed (%s)", s_idx, exc)
            sop_ref[s_idx] = {}
        for metric, v in sop_ref[s_idx].items():
            rows.append({"structure_id": s_idx, "replicate": SOP_REPLICATE, "iota": "", "scope_depth": "",
                         "metric": metric, "value": v, "sop_value": v, "deviation": 0.0})
    jobs = []
    for s_idx, c in enumerate(plan.structures):
        for g_idx, (iota, depth) in enumerate(plan.grid()):
            for rep in range(plan.replicates):
                seed = sub_seed(plan.master_seed, s_idx, rep, g_idx)
                jobs.append((s_idx, rep, g_idx, iota, depth, c, plan.abm, plan.alky, seed))
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            results = list(pool.map(_run_one, jobs, chunksize=1))
    else:
        results = [_run_one(j) for j in jobs]
    failures = []
    for (s_idx, rep, g_idx, iota, depth), metrics, terminal, err in results:
        if err is not None:
            failures.append({"structure_id": s_idx, "replicate": rep, "iota": iota,
                             "scope_depth": depth_label(depth), "error": err})
            continue
        if plan.write_graphs:
            write_graph_file(terminal, out / f"abm_{s_idx:03d}_{g_idx:02d}_{rep:02d}.tsv")
        ref = sop_ref.get(s_idx, {})
        for metric, v in metrics.items():
            sv = ref.get(metric)
            dev = v - sv if sv is not None and v is not None else None
            rows.append({"structure_id": s_idx, "replicate": rep, "iota": iota, "scope_depth": depth_label(depth),
                         "metric": metric, "value": v, "sop_value": sv, "deviation": dev})
    disp = dispersion_table(rows)
    _write_rows(out / "results.csv", LONG_COLUMNS, rows)
    _write_rows(out / "dispersion.csv", ("iota", "scope_depth", "metric", "intra_sd", "inter_sd", "ratio"), disp)
    write_json(out / "manifest.json", {
        "tool": "netforge", "version": __version__, "plan": plan.echo(),
        "structure_sha256": [structure_hash(c) for c in plan.structures],
        "runs": len(jobs), "failures": failures,
    })
    return BatchResult(rows, disp, failures, len(jobs), out)


def _write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(k)) for k in columns])


def wide_table(rows: list) -> tuple[list, list]:
    """Metric-by-grid-point layout of means and sds over all ABM runs."""
    cols, cells = [], {}
    for r in rows:
        label = "sop" if r["replicate"] == SOP_REPLICATE else f"iota={_fmt(r['iota'])},depth={r['scope_depth']}"
        if label not in cols:
            cols.append(label)
        cells.setdefault((r["metric"], label), []).append(r["value"])
    header = ["metric"] + [f"{c} {stat}" for c in cols for stat in ("mean", "sd")]
    table = []
    for metric in list(METRIC_FIELDS) + ["rounds"]:
        line = {"metric": metric}
        for c in cols:
            v = np.asarray([x for x in cells.get((metric, c), []) if x is not None], dtype=float)
            line[f"{c} mean"] = float(np.nanmean(v)) if v.size and np.isfinite(v).any() else math.nan
            line[f"{c} sd"] = float(np.nanstd(v)) if v.size and np.isfinite(v).any() else math.nan
        table.append(line)
    return header, table


def write_structures(structures: list, out_dir, specs: Optional[list] = None) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, c in enumerate(structures):
        name = f"structure_{k:03d}.tsv"
        write_compat_file(c, out / name)
        entry = {"index": k, "path": name, "sha256": structure_hash(c)}
        if specs is not None:
            entry["spec"] = specs[k].to_json()
        entries.append(entry)
    return entries
