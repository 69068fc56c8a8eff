"""``netforge`` command line."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from netforge import __version__
from netforge.errors import DataError, NumericalError
from netforge.graph import METRIC_FIELDS, compute_metrics
from netforge.utility import Alky, AlkyParams

log = logging.getLogger("netforge")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
_KINDS = {"random": "random_latent", "circulant": "circulant_symmetric"}
_TARGETS = {"P": "on_P", "C": "on_C", "on_P": "on_P", "on_C": "on_C"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="master RNG seed")
    p.add_argument("--config", default=d, metavar="FILE", help="JSON file with parameter defaults")
    p.add_argument("--out", default=d, help="output file or directory")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS if suppress else False)


def _alky_flags(p) -> None:
    p.add_argument("--kappa", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--delta", type=float)


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="netforge", description="Utility-maximizing social network generation.")
    top.add_argument("--version", action="version", version=f"netforge {__version__}")
    _globals(top, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _globals(common, suppress=True)
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", parents=[common], help="solve the social optimization problem")
    p.add_argument("--compat", required=True)
    _alky_flags(p)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--starts", type=int)

    p = sub.add_parser("recover", parents=[common], help="compatibility list that rationalizes a graph")
    p.add_argument("--graph", required=True)
    _alky_flags(p)
    p.add_argument("--default-weight", type=float, default=1.0)

    p = sub.add_parser("embed", parents=[common], help="latent positions for a compatibility list")
    p.add_argument("--compat", required=True)
    p.add_argument("--dim", type=int)
    p.add_argument("--epsilon", type=float)

    p = sub.add_parser("perturb", parents=[common], help="white-noise copy of a compatibility list")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--compat")
    src.add_argument("--graph")
    _alky_flags(p)
    p.add_argument("--target", choices=sorted(_TARGETS), default="P")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--clamp-floor", type=float, default=1e-6)

    p = sub.add_parser("clone", parents=[common], help="similar networks by perturb-and-resolve")
    p.add_argument("--graph", required=True)
    _alky_flags(p)
    p.add_argument("--target", choices=sorted(_TARGETS), default="P")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--n-clones", type=int, default=10)
    p.add_argument("--clamp-floor", type=float, default=1e-6)
    p.add_argument("--tol", type=float)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--wide", action="store_true", help="also write the metric-by-column table")

    p = sub.add_parser("abm", parents=[common], help="decentralized agent-based simulation")
    p.add_argument("--compat", required=True)
    _alky_flags(p)
    p.add_argument("--init", default="4", help="initial density iota, or a graph file")
    p.add_argument("--scope-depth", default=None, help="0..4 or inf")
    p.add_argument("--rounds", type=int)
    p.add_argument("--trace", help="per-snapshot trace CSV")
    p.add_argument("--backend", choices=("cython", "python"))
    p.add_argument("--memory-ttl", type=int, help="rounds a memory entry blocks its target")

    p = sub.add_parser("genstruct", parents=[common], help="generate compatibility structures")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--kind", choices=sorted(_KINDS), default="random")
    p.add_argument("--count", type=int, default=50)

    p = sub.add_parser("metrics", parents=[common], help="benchmark metrics of a graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--compat")
    _alky_flags(p)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("batch", parents=[common], help="SOP references and ABM replicates over a grid")
    p.add_argument("--structures", nargs="*", help="compatibility files or directories")
    p.add_argument("--gen-kind", choices=sorted(_KINDS))
    p.add_argument("--gen-count", type=int, default=50)
    p.add_argument("--n", type=int, default=64)
    _alky_flags(p)
    p.add_argument("--replicates", type=int)
    p.add_argument("--iota", type=float, nargs="+")
    p.add_argument("--scope-depth", nargs="+")
    p.add_argument("--rounds", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--write-graphs", action="store_true")
    p.add_argument("--wide", action="store_true")
    return top


# ------------------------------------------------------------------ helpers


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise DataError(f"config {path}: expected a JSON object")
    return cfg


def _pick(args, cfg: dict, name: str, default=None):
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(name, default)


def _alky(args, cfg) -> Alky:
    vals = {k: _pick(args, cfg, k) for k in ("kappa", "gamma", "delta")}
    return Alky(AlkyParams.from_mapping({k: v for k, v in vals.items() if v is not None}))


def _seed(args, cfg) -> int:
    return int(_pick(args, cfg, "seed", 0))


def _out_dir(args) -> Path:
    if not args.out:
        raise UsageError(f"{args.command} needs --out DIR")
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _emit_text(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _manifest(path, args, inputs: dict, extra: dict | None = None) -> None:
    from netforge.io import file_sha256, write_json

    echo = {k: v for k, v in vars(args).items() if k != "func"}
    hashes = {k: file_sha256(v) for k, v in inputs.items() if v}
    write_json(path, {"tool": "netforge", "version": __version__, "command": args.command,
                      "config": echo, "inputs": hashes, **(extra or {})})


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _stdout_graph(g) -> None:
    from netforge.io import dump_triples

    dump_triples(sys.stdout, g.n_agents, g.pairs(), g.values, "sym weighted", True)


def _stdout_compat(c) -> None:
    from netforge.io import dump_triples

    dump_triples(sys.stdout, c.n_agents, c.pairs(), c.values, "sym compatibility", False)


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


# ---------------------------------------------------------------- commands


def cmd_solve(args, cfg) -> int:
    from netforge.io import parse_compat_file, write_graph_file, write_json
    from netforge.sop import DEFAULT_MAX_ITER, DEFAULT_STARTS, DEFAULT_TOL, solve_sop

    c = parse_compat_file(args.compat)
    sol = solve_sop(
        c, _alky(args, cfg),
        tol=float(_pick(args, cfg, "tol", DEFAULT_TOL)),
        max_iter=int(_pick(args, cfg, "max_iter", DEFAULT_MAX_ITER)),
        n_starts=int(_pick(args, cfg, "starts", DEFAULT_STARTS)),
        seed=_seed(args, cfg),
    )
    if args.out:
        write_graph_file(sol.alpha_star, args.out)
        write_json(f"{args.out}.json", sol.sidecar())
    else:
        _stdout_graph(sol.alpha_star)
    log.info("objective %.10g, residual %.2e, %d iterations", sol.objective_value, sol.kkt_residual, sol.iterations)
    return EXIT_OK


def cmd_recover(args, cfg) -> int:
    from netforge.io import parse_graph_file, write_compat_file, write_json
    from netforge.sop import recover_compat

    g, tr = parse_graph_file(args.graph, default_weight=args.default_weight)
    rec = recover_compat(g, _alky(args, cfg))
    side = {"slack_pairs": [[i + 1, j + 1] for i, j in rec.slack_pairs], "transform": asdict(tr)}
    if args.out:
        write_compat_file(rec.c_bar, args.out)
        write_json(f"{args.out}.json", side)
    else:
        _stdout_compat(rec.c_bar)
    log.info("%d slack pairs", len(rec.slack_pairs))
    return EXIT_OK


def cmd_embed(args, cfg) -> int:
    from netforge.io import parse_compat_file, write_matrix_csv
    from netforge.latent import embed_compat

    c = parse_compat_file(args.compat)
    pos = embed_compat(c, args.dim, args.epsilon)
    if args.out:
        write_matrix_csv(pos.rows, args.out)
        _manifest(f"{args.out}.manifest.json", args, {"compat": args.compat},
                  {"residual": pos.residual, "epsilon": pos.epsilon})
    else:
        np.savetxt(sys.stdout, pos.rows, delimiter=",", fmt="%.17g")
    log.info("reconstruction residual %.3e", pos.residual)
    return EXIT_OK


def cmd_perturb(args, cfg) -> int:
    from netforge.io import parse_compat_file, parse_graph_file, write_compat_file
    from netforge.latent import PerturbConfig, perturb_compat
    from netforge.sop import recover_compat

    if args.compat:
        c = parse_compat_file(args.compat)
    else:
        g, _ = parse_graph_file(args.graph)
        c = recover_compat(g, _alky(args, cfg)).c_bar
    pc = PerturbConfig(args.sigma, _TARGETS[args.target], args.clamp_floor, _seed(args, cfg))
    noisy, clamped = perturb_compat(c, pc, np.random.default_rng([pc.seed, 0]))
    if args.out:
        write_compat_file(noisy, args.out)
    else:
        _stdout_compat(noisy)
    log.info("%d entries clamped", clamped)
    return EXIT_OK


def cmd_clone(args, cfg) -> int:
    from netforge.io import parse_graph_file, write_graph_file
    from netforge.latent import CLONE_TOL, PerturbConfig, perturb_and_regenerate

    out = _out_dir(args)
    g, _ = parse_graph_file(args.graph)
    pc = PerturbConfig(args.sigma, _TARGETS[args.target], args.clamp_floor, _seed(args, cfg))
    rep = perturb_and_regenerate(g, _alky(args, cfg), pc, args.n_clones,
                                 tol=float(_pick(args, cfg, "tol", CLONE_TOL)), workers=args.workers)
    for k, cg in enumerate(rep.graphs):
        write_graph_file(cg, out / f"clone_{k:03d}.tsv")
    rows = rep.table_rows()
    _write_csv(out / "aggregate.csv", ("metric", "original", "mean", "sd"),
               [[r["metric"], _num(r["original"]), _num(r["mean"]), _num(r["sd"])] for r in rows])
    per = [[k, int(d), int(nw), int(kp), int(cl)] + [_num(getattr(m, f)) for f in METRIC_FIELDS]
           for k, (d, nw, kp, cl, m) in enumerate(zip(rep.deleted_edges, rep.new_edges, rep.kept_edges,
                                                     rep.clamped, rep.reports))]
    _write_csv(out / "clones.csv", ("clone", "deleted_edges", "new_edges", "kept_edges", "clamped") + METRIC_FIELDS, per)
    if args.wide:
        _write_csv(out / "aggregate_wide.csv", ["row"] + [r["metric"] for r in rows],
                   [["original"] + [_num(r["original"]) for r in rows],
                    [f"{pc.target} {pc.sigma:g}"] + [_num(r["mean"]) for r in rows]])
    _manifest(out / "manifest.json", args, {"graph": args.graph},
              {"failures": rep.failures, "clones_ok": rep.n_ok})
    log.info("%d/%d clones ok, mean new-edge fraction %.3f", rep.n_ok, args.n_clones, rep.new_fraction)
    return EXIT_OK


def _init_weights(spec: str, n: int, omega_min: float, seed: int):
    from netforge.io import parse_graph_file
    from netforge.structgen import InitConfig, gen_init_weights

    try:
        iota = float(spec)
    except ValueError:
        g, _ = parse_graph_file(spec, n_agents=n)
        return g
    return gen_init_weights(n, InitConfig(iota, omega_min, seed))


def cmd_abm(args, cfg) -> int:
    from netforge.abm import AbmConfig, parse_depth, run_simulation
    from netforge.io import parse_compat_file, write_graph_file

    c = parse_compat_file(args.compat)
    seed = _seed(args, cfg)
    abm_keys = {k: v for k, v in cfg.get("abm", {}).items()}
    base = AbmConfig.from_mapping(abm_keys)
    depth = args.scope_depth if args.scope_depth is not None else cfg.get("scope_depth", "inf")
    rounds = _pick(args, cfg, "rounds", base.max_rounds)
    acfg = replace(base, scope_depth=parse_depth(depth), max_rounds=int(rounds), seed=seed)
    if args.memory_ttl is not None:
        acfg = replace(acfg, memory_ttl=args.memory_ttl)
    init = _init_weights(str(_pick(args, cfg, "init", "4")), c.n_agents, acfg.omega_min, seed)
    trace = run_simulation(c, _alky(args, cfg), init, acfg, backend=args.backend)
    if args.trace:
        trace.write_csv(args.trace)
        _manifest(f"{args.trace}.manifest.json", args, {"compat": args.compat},
                  {"abm": acfg.to_json(), "reason": trace.reason, "rounds": trace.n_rounds,
                   "backend": trace.backend, "plateau": trace.plateau})
    if args.out:
        write_graph_file(trace.terminal, args.out)
    else:
        _stdout_graph(trace.terminal)
    log.info("stopped after %d rounds (%s), %d edges", trace.n_rounds, trace.reason, trace.terminal.edge_count())
    return EXIT_OK


def cmd_genstruct(args, cfg) -> int:
    from netforge.batch import write_structures
    from netforge.io import write_json
    from netforge.structgen import StructureSpec, generate_structure

    out = _out_dir(args)
    seed = _seed(args, cfg)
    specs = [StructureSpec(args.n, kind=_KINDS[args.kind], seed=seed + k) for k in range(args.count)]
    structures = [generate_structure(s) for s in specs]
    entries = write_structures(structures, out, specs)
    write_json(out / "manifest.json", {"tool": "netforge", "version": __version__,
                                       "kind": _KINDS[args.kind], "seed": seed, "structures": entries})
    log.info("wrote %d structures to %s", len(entries), out)
    return EXIT_OK


def cmd_metrics(args, cfg) -> int:
    from netforge.io import parse_compat_file, parse_graph_file

    g, _ = parse_graph_file(args.graph)
    c = parse_compat_file(args.compat) if args.compat else None
    m = compute_metrics(g, c, _alky(args, cfg) if c is not None else None)
    d = m.as_dict()
    if args.json:
        text = json.dumps({k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()},
                          indent=2) + "\n"
    else:
        text = ",".join(d) + "\n" + ",".join(_num(v) for v in d.values()) + "\n"
    _emit_text(args, text)
    if args.out and not args.json:
        _manifest(f"{args.out}.manifest.json", args, {"graph": args.graph, "compat": args.compat})
    return EXIT_OK


def _structure_files(items) -> list:
    files = []
    for it in items:
        p = Path(it)
        if p.is_dir():
            files.extend(sorted(q for q in p.iterdir() if q.suffix in (".tsv", ".csv")))
        else:
            files.append(p)
    return files


def cmd_batch(args, cfg) -> int:
    from netforge.abm import AbmConfig, parse_depth
    from netforge.batch import BatchPlan, run_batch, structures_from_spec, wide_table, write_structures
    from netforge.io import parse_compat_file
    from netforge.structgen import StructureSpec

    out = _out_dir(args)
    seed = _seed(args, cfg)
    if args.structures:
        structures = [parse_compat_file(f) for f in _structure_files(args.structures)]
        if not structures:
            raise DataError("no structure files found")
    elif args.gen_kind:
        structures = structures_from_spec(StructureSpec(args.n, kind=_KINDS[args.gen_kind], seed=seed), args.gen_count)
        write_structures(structures, out / "structures")
    else:
        raise UsageError("batch needs --structures or --gen-kind")
    base = AbmConfig.from_mapping(cfg.get("abm", {}))
    rounds = _pick(args, cfg, "rounds")
    if rounds is not None:
        base = replace(base, max_rounds=int(rounds))
    depths = args.scope_depth or cfg.get("scope_depths", ["inf"])
    plan = BatchPlan(
        structures=structures,
        out_dir=str(out),
        replicates=int(_pick(args, cfg, "replicates", 3)),
        iotas=tuple(float(x) for x in (args.iota or cfg.get("iotas", [4.0]))),
        scope_depths=tuple(parse_depth(str(d)) for d in depths),
        master_seed=seed,
        abm=base,
        alky=_alky(args, cfg).params,
        workers=args.workers,
        write_graphs=args.write_graphs,
    )
    res = run_batch(plan)
    if args.wide:
        header, table = wide_table(res.rows)
        _write_csv(out / "results_wide.csv", header, [[_num(r[h]) for h in header] for r in table])
    log.info("%d runs, %d failures", res.n_runs, len(res.failures))
    if res.failure_rate > 0.5:
        log.error("more than half of the runs failed")
        return EXIT_NUMERIC
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve, "recover": cmd_recover, "embed": cmd_embed, "perturb": cmd_perturb,
    "clone": cmd_clone, "abm": cmd_abm, "genstruct": cmd_genstruct, "metrics": cmd_metrics,
    "batch": cmd_batch,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = _load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"netforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"netforge: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"netforge: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"netforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
