"""Edge-list files in the Konect TSV layout, sidecars and dense CSV matrices."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from netforge.errors import DataError
from netforge.graph import CompatibilityList, WeightList, pair_to_flat, n_pairs

log = logging.getLogger(__name__)

SCALE = "scale"
IDENTITY = "none"
AUTO = "auto"


@dataclass
class Transform:
    """How raw file weights were mapped into ``[0, 1)``."""

    kind: str = IDENTITY
    max_raw: Optional[float] = None
    default_weight: float = 1.0
    lines: int = 0
    pairs: int = 0

    def apply(self, raw: np.ndarray) -> np.ndarray:
        return raw / (self.max_raw + 1.0) if self.kind == SCALE else raw

    def invert(self, w: np.ndarray) -> np.ndarray:
        return w * (self.max_raw + 1.0) if self.kind == SCALE else w


def _rows(path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("%") or s.startswith("#"):
                continue
            yield lineno, s.split()


def read_triples(path, default_weight: float = 1.0, n_agents: Optional[int] = None):
    """Undirected ``(i, j) -> value`` map (0-based) and the number of agents.

    Repeated pairs in either orientation must carry the same value; self
    loops are dropped.
    """
    vals: dict = {}
    top = 0
    lines = 0
    for lineno, tok in _rows(path):
        if len(tok) < 2:
            raise DataError(f"{path}:{lineno}: expected at least two columns")
        try:
            a, b = int(tok[0]), int(tok[1])
            w = float(tok[2]) if len(tok) > 2 else float(default_weight)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        if a <= 0 or b <= 0:
            raise DataError(f"{path}:{lineno}: ids are 1-based, got {a} {b}")
        lines += 1
        top = max(top, a, b)
        if a == b:
            log.warning("%s:%d: dropping self loop on %d", path, lineno, a)
            continue
        key = (min(a, b) - 1, max(a, b) - 1)
        if key in vals and vals[key] != w:
            raise DataError(f"{path}:{lineno}: pair {key[0] + 1}-{key[1] + 1} repeated with conflicting values")
        vals[key] = w
    n = top if n_agents is None else int(n_agents)
    if n < top:
        raise DataError(f"id {top} exceeds declared agent count {n}")
    if n < 2:
        raise DataError(f"{path}: need at least two agents")
    return vals, n, lines


def parse_graph_file(path, default_weight: float = 1.0, transform: str = AUTO,
                     n_agents: Optional[int] = None) -> tuple[WeightList, Transform]:
    """Weight list from an edge-list file.

    ``transform="scale"`` maps raw weights by ``w / (max_raw + 1)`` so an
    unweighted file lands at 0.5; ``"auto"`` keeps weights untouched when all
    of them already lie in ``(0, 1)``.
    """
    vals, n, lines = read_triples(path, default_weight, n_agents)
    raw = np.array(list(vals.values()), dtype=float)
    if raw.size and np.any(raw <= 0):
        raise DataError(f"{path}: non-positive edge weight")
    kind = transform
    if kind == AUTO:
        kind = IDENTITY if raw.size and np.all(raw < 1.0) else SCALE
    if kind not in (SCALE, IDENTITY):
        raise ValueError(f"unknown transform {transform!r}")
    tr = Transform(kind, float(raw.max()) if raw.size else None, float(default_weight), lines, len(vals))
    flat = np.zeros(n_pairs(n))
    w = tr.apply(raw)
    if np.any(w >= 1.0):
        raise DataError(f"{path}: weight outside [0, 1) after transform")
    for (i, j), x in zip(vals, w):
        flat[pair_to_flat(i, j, n)] = x
    return WeightList(flat, n), tr


def parse_compat_file(path) -> CompatibilityList:
    """Compatibility list from triples (every pair listed) or a dense CSV matrix."""
    if str(path).endswith(".csv"):
        mat = np.loadtxt(path, delimiter=",", ndmin=2)
        try:
            return CompatibilityList.from_matrix(mat)
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
    vals, n, _ = read_triples(path)
    if len(vals) != n_pairs(n):
        raise DataError(f"{path}: {len(vals)} pairs listed, {n_pairs(n)} needed for {n} agents")
    flat = np.empty(n_pairs(n))
    for (i, j), x in vals.items():
        flat[pair_to_flat(i, j, n)] = x
    try:
        return CompatibilityList(flat, n)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def dump_triples(fh, n: int, pairs, values, header: str, skip_zero: bool) -> None:
    """Write ``i j value`` lines with 1-based ids to an open text stream."""
    fh.write(f"% {header}\n% {n} agents\n")
    for (i, j), x in zip(pairs, values):
        if skip_zero and x == 0:
            continue
        fh.write(f"{i + 1}\t{j + 1}\t{float(x)!r}\n")


def _write_triples(path, n: int, pairs, values, header: str, skip_zero: bool):
    with open(path, "w") as fh:
        dump_triples(fh, n, pairs, values, header, skip_zero)


def write_graph_file(g: WeightList, path, transform: Optional[Transform] = None) -> None:
    """Sorted ``i j w`` triples of present edges; a sidecar records the transform."""
    _write_triples(path, g.n_agents, g.pairs(), g.values.tolist(), "sym weighted", True)
    if transform is not None:
        write_json(sidecar_path(path), {"transform": asdict(transform)})


def write_compat_file(c: CompatibilityList, path) -> None:
    if str(path).endswith(".csv"):
        write_matrix_csv(c.matrix(), path)
        return
    _write_triples(path, c.n_agents, c.pairs(), c.values.tolist(), "sym compatibility", False)


def write_matrix_csv(mat: np.ndarray, path) -> None:
    np.savetxt(path, np.asarray(mat), delimiter=",", fmt="%.17g")


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (set, tuple)):
        return list(x)
    return str(x)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
