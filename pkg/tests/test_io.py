import json

import numpy as np
import pytest

from netforge.errors import DataError
from netforge.graph import CompatibilityList, WeightList, n_pairs
from netforge.io import (
    SCALE,
    parse_compat_file,
    parse_graph_file,
    sidecar_path,
    write_compat_file,
    write_graph_file,
    write_json,
)


def _write(tmp_path, text, name="g.tsv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_minimal_file(tmp_path):
    g, tr = parse_graph_file(_write(tmp_path, "% comment\n1\t2\t0.5\n"))
    assert g.n_agents == 2 and g.values[0] == 0.5
    assert tr.kind == "none"


def test_unweighted_lands_at_half(tmp_path):
    g, tr = parse_graph_file(_write(tmp_path, "% sym unweighted\n1 2\n2 3\n3 1\n"))
    assert tr.kind == SCALE and tr.max_raw == 1.0
    np.testing.assert_array_equal(g.values, [0.5, 0.5, 0.5])


def test_scale_transform_round_trip(tmp_path):
    g, tr = parse_graph_file(_write(tmp_path, "1 2 3\n2 3 1\n"), transform="scale")
    np.testing.assert_allclose(g.values, [0.75, 0.0, 0.25])
    np.testing.assert_allclose(tr.invert(g.values[[0, 2]]), [3.0, 1.0])


def test_reverse_orientation_duplicate_is_collapsed(tmp_path):
    g, tr = parse_graph_file(_write(tmp_path, "1 2\n2 1\n2 3\n"))
    assert g.edge_count() == 2 and tr.lines == 3 and tr.pairs == 2


def test_conflicting_duplicate(tmp_path):
    with pytest.raises(DataError, match="conflicting"):
        parse_graph_file(_write(tmp_path, "1 2 0.3\n2 1 0.4\n"))


def test_bad_ids_and_weights(tmp_path):
    with pytest.raises(DataError, match="1-based"):
        parse_graph_file(_write(tmp_path, "0 2 0.3\n"))
    with pytest.raises(DataError, match="outside"):
        parse_graph_file(_write(tmp_path, "1 2 1.5\n"), transform="none")
    with pytest.raises(DataError):
        parse_graph_file(_write(tmp_path, "1 2 abc\n"))
    with pytest.raises(DataError):
        parse_graph_file(_write(tmp_path, "1\n"))


def test_self_loop_dropped(tmp_path, caplog):
    g, _ = parse_graph_file(_write(tmp_path, "1 1 0.2\n1 2 0.3\n"))
    assert g.edge_count() == 1
    assert "self loop" in caplog.text


def test_declared_agent_count(tmp_path):
    g, _ = parse_graph_file(_write(tmp_path, "1 2 0.3\n"), n_agents=5)
    assert g.n_agents == 5
    with pytest.raises(DataError):
        parse_graph_file(_write(tmp_path, "1 7 0.3\n"), n_agents=5)


def test_graph_round_trip(tmp_path, rng):
    n = 9
    vals = np.where(rng.random(n_pairs(n)) < 0.4, rng.uniform(0.01, 0.99, n_pairs(n)), 0.0)
    vals[-1] = 0.123  # keep the top id present so N is inferred
    g = WeightList(vals, n)
    p = tmp_path / "out.tsv"
    write_graph_file(g, p)
    back, _ = parse_graph_file(p, transform="none")
    assert back == g
    lines = [l for l in p.read_text().splitlines() if not l.startswith("%")]
    keys = [tuple(map(int, l.split()[:2])) for l in lines]
    assert keys == sorted(keys)


def test_sidecar_records_transform(tmp_path):
    g, tr = parse_graph_file(_write(tmp_path, "1 2\n"))
    out = tmp_path / "o.tsv"
    write_graph_file(g, out, tr)
    side = json.loads(sidecar_path(out).read_text())
    assert side["transform"]["kind"] == SCALE


def test_compat_formats(tmp_path, rng):
    c = CompatibilityList(rng.uniform(0.1, 2.0, n_pairs(6)), 6)
    for name in ("c.tsv", "c.csv"):
        write_compat_file(c, tmp_path / name)
        back = parse_compat_file(tmp_path / name)
        np.testing.assert_array_equal(back.values, c.values)


def test_compat_must_be_complete(tmp_path):
    with pytest.raises(DataError, match="pairs listed"):
        parse_compat_file(_write(tmp_path, "1 2 0.3\n1 3 0.2\n"))
    with pytest.raises(DataError):
        parse_compat_file(_write(tmp_path, "1 2 0.3\n1 3 0.2\n2 3 -1\n"))
    with pytest.raises(DataError):
        parse_compat_file(_write(tmp_path, "0,1\n2,0\n", name="m.csv"))


def test_write_json_numpy(tmp_path):
    write_json(tmp_path / "x.json", {"a": np.float64(1.5), "b": np.arange(3), "c": (1, 2)})
    assert json.loads((tmp_path / "x.json").read_text()) == {"a": 1.5, "b": [0, 1, 2], "c": [1, 2]}
