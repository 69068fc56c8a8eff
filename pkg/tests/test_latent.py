import numpy as np
import pytest

from conftest import random_feasible_alpha
from netforge.errors import DataError
from netforge.graph import CompatibilityList, WeightList, global_clustering, n_pairs
from netforge.latent import (
    ON_C,
    ON_P,
    LatentPositions,
    PerturbConfig,
    compat_from_positions,
    edge_diff,
    embed_compat,
    perturb_and_regenerate,
    perturb_compat,
    robustness_probe,
)


def _reconstruct_err(c, pos):
    gm = pos.gram()
    off = ~np.eye(c.n_agents, dtype=bool)
    return np.abs(gm - c.matrix())[off].max()


def test_embed_uniform_three():
    c = CompatibilityList.uniform(3, 1.0)
    pos = embed_compat(c, dim=3, epsilon=0.1)
    assert pos.dim == 3 and pos.n_agents == 3
    assert _reconstruct_err(c, pos) < 1e-8


def test_embed_two_agents():
    c = CompatibilityList([0.25])
    pos = embed_compat(c)
    assert abs(pos.rows[0] @ pos.rows[1] - 0.25) < 1e-10
    assert pos.residual < 1e-10


@pytest.mark.parametrize("n", [8, 20, 64])
def test_embed_random(rng, n):
    c = CompatibilityList(rng.uniform(0.01, 3.0, n_pairs(n)), n)
    pos = embed_compat(c)
    assert _reconstruct_err(c, pos) < 1e-8
    back, clamped = compat_from_positions(pos)
    assert clamped == 0
    np.testing.assert_allclose(back.values, c.values, atol=1e-8, rtol=0)


def test_embed_padding_and_dimension_check(rng):
    c = CompatibilityList(rng.uniform(0.1, 1.0, n_pairs(5)), 5)
    pos = embed_compat(c, dim=9)
    assert pos.dim == 9 and np.all(pos.rows[:, 5:] == 0)
    with pytest.raises(DataError, match="insufficient latent dimension"):
        embed_compat(c, dim=4)
    with pytest.raises(ValueError):
        embed_compat(c, epsilon=0.0)


def test_orthonormal_plus_constant_rows():
    n = 5
    rows = np.hstack([np.eye(n), np.full((n, 1), 0.7)])
    c, clamped = compat_from_positions(LatentPositions(rows))
    np.testing.assert_allclose(c.values, 0.49, rtol=1e-14)
    assert clamped == 0


def test_negative_inner_products():
    rows = np.array([[1.0, 0.0], [-1.0, 0.2], [0.5, 0.5]])
    p = LatentPositions(rows)
    assert (0, 1) in p.violations()
    with pytest.raises(DataError, match="non-positive compatibility"):
        compat_from_positions(p)
    c, clamped = compat_from_positions(p, clamp_floor=1e-6)
    assert clamped >= 1 and c.values.min() == 1e-6


def test_perturb_config_validation():
    with pytest.raises(ValueError):
        PerturbConfig(sigma=-1.0)
    with pytest.raises(ValueError):
        PerturbConfig(clamp_floor=0.0)
    with pytest.raises(ValueError):
        PerturbConfig(target="on_Q")


def test_perturb_on_c_noise_scale(rng):
    c = CompatibilityList.uniform(40, 5.0)
    noisy, clamped = perturb_compat(c, PerturbConfig(sigma=0.01, target=ON_C), rng)
    d = noisy.values - c.values
    assert clamped == 0
    assert abs(d.std() - 0.01) < 1e-3 and abs(d.mean()) < 1e-3


def test_perturb_on_p_zero_noise_identity(rng):
    c = CompatibilityList(rng.uniform(0.1, 1.0, n_pairs(10)), 10)
    out, clamped = perturb_compat(c, PerturbConfig(sigma=0.0, target=ON_P), rng)
    np.testing.assert_allclose(out.values, c.values, atol=1e-8)


def test_edge_diff_counts():
    a = WeightList.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    b = WeightList.from_edges(4, [(0, 1), (0, 3)])
    dele, new, kept = edge_diff(a, b)
    assert (dele, new, kept) == (2, 1, 1)
    assert dele + kept == a.edge_count() and new + kept == b.edge_count()


@pytest.fixture(scope="module")
def small_graph():
    return random_feasible_alpha(np.random.default_rng(5), 12, 0.3)


def test_zero_noise_clone_is_identity(small_graph, alky):
    rep = perturb_and_regenerate(small_graph, alky, PerturbConfig(sigma=0.0), n_clones=2)
    assert rep.n_ok == 2
    assert np.all(rep.deleted_edges == 0) and np.all(rep.new_edges == 0)
    for g in rep.graphs:
        assert np.abs(g.values - small_graph.values).max() < 1e-5
    assert rep.new_fraction == 0.0


def test_report_invariants(small_graph, alky):
    rep = perturb_and_regenerate(small_graph, alky, PerturbConfig(sigma=0.1, seed=3), n_clones=3)
    for d, nw, k, g in zip(rep.deleted_edges, rep.new_edges, rep.kept_edges, rep.graphs):
        assert d + k == small_graph.edge_count()
        assert nw + k == g.edge_count()
    rows = {r["metric"]: r for r in rep.table_rows()}
    assert rows["edges"]["original"] == small_graph.edge_count()
    assert {"clustering", "density", "avg_degree"} <= set(rows)
    assert set(rep.means) == set(rep.sds)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_clones_independent_of_workers(small_graph, alky):
    cfg = PerturbConfig(sigma=0.05, seed=9)
    a = perturb_and_regenerate(small_graph, alky, cfg, n_clones=2, workers=1)
    b = perturb_and_regenerate(small_graph, alky, cfg, n_clones=2, workers=2)
    for x, y in zip(a.graphs, b.graphs):
        assert x == y


def test_monotone_disruption(alky):
    g = random_feasible_alpha(np.random.default_rng(5), 24, 0.2)
    overlap = []
    for sigma in (0.0, 0.05, 0.1, 0.2):
        rep = perturb_and_regenerate(g, alky, PerturbConfig(sigma=sigma, seed=1), n_clones=10)
        union = rep.kept_edges + rep.new_edges + rep.deleted_edges
        overlap.append(float(np.mean(rep.kept_edges / union)))
    assert overlap[0] == 1.0
    assert all(b <= a for a, b in zip(overlap, overlap[1:]))


def test_n_clones_validated(small_graph, alky):
    with pytest.raises(ValueError):
        perturb_and_regenerate(small_graph, alky, PerturbConfig(), n_clones=0)


def _complete(n):
    return WeightList(np.full(n_pairs(n), 0.5), n)


def test_probe_complete_graph_edges():
    s = robustness_probe(_complete(8), 0.10, n_trials=300, mode="edges", seed=0)
    assert s.removed == 3
    assert np.all(s.values < 1.0) and np.all(s.values > 0.8)
    assert 0.8 < s.mean < 1.0


def test_probe_zero_removals_exact(small_graph):
    s = robustness_probe(small_graph, 0.01, n_trials=5, mode="vertices")
    assert s.removed == 0 and s.sd == 0.0
    assert s.mean == global_clustering(small_graph.adjacency())


def test_probe_validation():
    with pytest.raises(DataError):
        robustness_probe(_complete(4), 0.5, n_trials=3)
    with pytest.raises(ValueError):
        robustness_probe(_complete(8), 1.5)
    with pytest.raises(ValueError):
        robustness_probe(_complete(8), 0.1, mode="faces")


def test_probe_seeded(small_graph):
    a = robustness_probe(small_graph, 0.25, n_trials=20, seed=4)
    b = robustness_probe(small_graph, 0.25, n_trials=20, seed=4)
    assert np.array_equal(a.values, b.values)
