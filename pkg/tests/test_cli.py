import json
from pathlib import Path

import numpy as np
import pytest

from netforge.cli import main
from netforge.graph import CompatibilityList, WeightList
from netforge.io import parse_compat_file, parse_graph_file, write_compat_file, write_graph_file
from netforge.structgen import CIRCULANT, StructureSpec, generate_structure


@pytest.fixture
def compat_file(tmp_path):
    p = tmp_path / "c.tsv"
    write_compat_file(generate_structure(StructureSpec(8, seed=3)), p)
    return p


@pytest.fixture
def graph_file(tmp_path):
    p = tmp_path / "g.tsv"
    p.write_text("% sym unweighted\n1 2\n2 3\n3 1\n3 4\n4 5\n5 6\n6 4\n")
    return p


def test_solve_to_stdout(compat_file, capsys):
    assert main(["solve", "--compat", str(compat_file), "--quiet"]) == 0
    out = capsys.readouterr().out
    rows = [l.split("\t") for l in out.splitlines() if not l.startswith("%")]
    assert rows and all(0 < float(r[2]) < 1 for r in rows)
    assert "np.float64" not in out


def test_solve_sidecar(compat_file, tmp_path):
    out = tmp_path / "sol.tsv"
    assert main(["solve", "--compat", str(compat_file), "--out", str(out), "--tol", "1e-10"]) == 0
    side = json.loads(Path(f"{out}.json").read_text())
    assert side["kkt_residual"] < 1e-10
    g, _ = parse_graph_file(out, transform="none")
    assert g.n_agents == 8


def test_recover_then_solve_round_trip(graph_file, tmp_path):
    cpath = tmp_path / "cbar.tsv"
    assert main(["recover", "--graph", str(graph_file), "--out", str(cpath)]) == 0
    side = json.loads(Path(f"{cpath}.json").read_text())
    assert [1, 4] in side["slack_pairs"]
    assert side["transform"]["kind"] == "scale"
    gpath = tmp_path / "back.tsv"
    assert main(["solve", "--compat", str(cpath), "--out", str(gpath), "--tol", "1e-12", "--starts", "1"]) == 0
    back, _ = parse_graph_file(gpath, transform="none")
    orig, _ = parse_graph_file(graph_file)
    assert np.abs(back.values - orig.values).max() < 1e-5


def test_embed_and_perturb(compat_file, tmp_path):
    emb = tmp_path / "p.csv"
    assert main(["embed", "--compat", str(compat_file), "--out", str(emb)]) == 0
    assert np.loadtxt(emb, delimiter=",").shape == (8, 8)
    assert json.loads(Path(f"{emb}.manifest.json").read_text())["residual"] < 1e-8
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    for dest in (a, b):
        assert main(["perturb", "--compat", str(compat_file), "--sigma", "0.05", "--seed", "7", "--out", str(dest)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert not np.array_equal(parse_compat_file(a).values, parse_compat_file(compat_file).values)


def test_clone_outputs(graph_file, tmp_path):
    out = tmp_path / "clones"
    argv = ["clone", "--graph", str(graph_file), "--sigma", "0", "--n-clones", "2", "--out", str(out), "--wide"]
    assert main(argv) == 0
    for name in ("clone_000.tsv", "clone_001.tsv", "aggregate.csv", "clones.csv", "aggregate_wide.csv", "manifest.json"):
        assert (out / name).exists()
    agg = (out / "aggregate.csv").read_text().splitlines()
    assert agg[0] == "metric,original,mean,sd"
    assert any(l.startswith("deleted_edges,0,0.0,0.0") for l in agg)


def test_abm_trace_and_determinism(compat_file, tmp_path):
    outs = []
    for k in range(2):
        g, tr = tmp_path / f"g{k}.tsv", tmp_path / f"t{k}.csv"
        argv = ["abm", "--compat", str(compat_file), "--init", "4", "--rounds", "60",
                "--seed", "5", "--trace", str(tr), "--out", str(g), "--quiet"]
        assert main(argv) == 0
        outs.append((g.read_bytes(), tr.read_bytes()))
    assert outs[0] == outs[1]
    header = outs[0][1].decode().splitlines()[0]
    assert header == "round,accepted_actions,edges,density,clustering,gini,avg_degree,avg_utility,sd_utility"
    man = json.loads(Path(f"{tmp_path / 't0.csv'}.manifest.json").read_text())
    assert man["abm"]["seed"] == 5 and man["inputs"]["compat"]


def test_abm_init_from_file(compat_file, tmp_path):
    init = tmp_path / "init.tsv"
    write_graph_file(WeightList.from_edges(8, [(0, 1), (2, 3)], 0.3), init)
    assert main(["abm", "--compat", str(compat_file), "--init", str(init), "--scope-depth", "0",
                 "--rounds", "20", "--memory-ttl", "3", "--out", str(tmp_path / "o.tsv")]) == 0


def test_genstruct(tmp_path):
    out = tmp_path / "s"
    assert main(["genstruct", "--n", "6", "--kind", "circulant", "--count", "3", "--seed", "2", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert len(man["structures"]) == 3
    c = parse_compat_file(out / man["structures"][0]["path"])
    assert c.n_agents == 6


def test_metrics_formats(graph_file, tmp_path, capsys):
    assert main(["metrics", "--graph", str(graph_file), "--json"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["edge_count"] == 7 and d["clustering"] == pytest.approx(0.6)
    out = tmp_path / "m.csv"
    assert main(["metrics", "--graph", str(graph_file), "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0].startswith("edge_count,clustering")


def test_config_file(compat_file, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"kappa": 12.0, "tol": 1e-9}))
    assert main(["solve", "--compat", str(compat_file), "--config", str(cfg), "--quiet"]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    assert main(["solve", "--compat", str(compat_file), "--config", str(bad)]) == 2


def test_exit_codes(compat_file, graph_file, tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["solve"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 1
    assert main(["solve", "--compat", str(tmp_path / "missing.tsv")]) == 2
    partial = tmp_path / "partial.tsv"
    partial.write_text("1 2 0.3\n")
    partial.write_text("1 2 0.3\n1 3 0.2\n")
    assert main(["solve", "--compat", str(partial)]) == 2
    assert main(["clone", "--graph", str(graph_file), "--sigma", "0"]) == 1
    assert main(["batch", "--out", str(tmp_path / "b")]) == 1
    assert main(["solve", "--compat", str(compat_file), "--max-iter", "1", "--starts", "1"]) == 3
    isolated = tmp_path / "iso.tsv"
    isolated.write_text("1 2\n")
    assert main(["recover", "--graph", str(isolated)]) == 0
    isolated.write_text("1 2\n% 3 is isolated\n1 2\n")
    assert main(["metrics", "--graph", str(isolated)]) == 0


def test_batch_minimal_plan_and_bytes(tmp_path):
    spath = tmp_path / "s.tsv"
    write_compat_file(generate_structure(StructureSpec(8, kind=CIRCULANT, seed=1)), spath)
    dirs = [tmp_path / "r1", tmp_path / "r2"]
    for d in dirs:
        argv = ["batch", "--structures", str(spath), "--replicates", "1", "--rounds", "80",
                "--seed", "3", "--out", str(d), "--wide", "--quiet"]
        assert main(argv) == 0
    for name in ("results.csv", "dispersion.csv", "results_wide.csv"):
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()
    lines = (dirs[0] / "results.csv").read_text().splitlines()
    assert lines[0] == "structure_id,replicate,iota,scope_depth,metric,value,sop_value,deviation"
    rows = [l.split(",") for l in lines[1:]]
    sop = [r for r in rows if r[1] == "sop"]
    abm = [r for r in rows if r[1] == "0"]
    assert len(sop) == 14 and len(abm) == 15  # abm rows also carry the round count
    man = json.loads((dirs[0] / "manifest.json").read_text())
    assert man["runs"] == 1 and man["failures"] == []


def test_batch_generated(tmp_path):
    out = tmp_path / "g"
    argv = ["batch", "--gen-kind", "circulant", "--gen-count", "2", "--n", "8", "--replicates", "2",
            "--scope-depth", "0", "inf", "--rounds", "60", "--out", str(out), "--quiet"]
    assert main(argv) == 0
    assert len(list((out / "structures").iterdir())) == 2
    assert json.loads((out / "manifest.json").read_text())["runs"] == 8
