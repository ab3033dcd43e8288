import numpy as np
import pytest
from scipy.sparse import csr_matrix

from oracles import dijkstra_costs
from skinsynth.anatomy import (
    AnatomyError, BloodConfig, FieldGrid, HairConfig, LayerConfig, SkinConfig, bake_blood_field,
    build_layers, build_skin_model, embed_lesion, generate_blood_network, generate_hair,
    knn_graph, load_skin_model, save_skin_model, shortest_paths,
)
from skinsynth.anatomy import BloodNetwork
from skinsynth.lesion import LesionParams, grow, project_mask

BOX = (-2.0, 2.0, -2.0, 2.0, -1.0, 0.0)
SMALL_BLOOD = BloodConfig(n_nodes=(300, 400), n_start=(5, 10), n_end=(5, 10))


def test_flat_boundaries_without_roughness(rng):
    s = build_layers(LayerConfig(resolution=32, roughness_um=(0, 0, 0, 0)), rng)
    t = s.thickness_um
    nominal = [0, -t["epidermis"], -t["epidermis"] - t["papillary_dermis"],
               -t["epidermis"] - t["papillary_dermis"] - t["dermis"]]
    for k in range(4):
        np.testing.assert_allclose(s.heights_um[k], nominal[k])


def test_fixed_roughness_bounds_thickness(rng):
    cfg = LayerConfig(resolution=64, epidermis_um=(85, 85), fixed_roughness_um=(0, 10, 0, 0))
    s = build_layers(cfg, rng)
    assert s.layer_thickness_um(0).min() >= 75 - 1e-9
    with pytest.raises(AnatomyError):
        build_layers(LayerConfig(epidermis_um=(50, 50), fixed_roughness_um=(0, 60, 0, 0)), rng)


def test_thickness_ranges_over_many_configs():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        s = build_layers(LayerConfig(resolution=8), rng)
        ep = s.layer_thickness_um(0)
        de = s.layer_thickness_um(2)
        assert ep.min() >= 20 - 1e-6 and ep.max() <= 150 + 1e-6
        assert de.min() >= 1000 - 1e-6 and de.max() <= 4000 + 1e-6
        assert np.all(s.layer_thickness_um(1) > 0)


def test_paths_match_heap_oracle():
    rng = np.random.default_rng(2)
    checked = 0
    while checked < 100:
        net = generate_blood_network(SMALL_BLOOD, rng, BOX)
        for i, path in enumerate(net.paths):
            dist = dijkstra_costs(net.graph, int(path[0]))
            best = min(dist.get(int(e), np.inf) for e in net.ends)
            assert net.path_cost(i) == pytest.approx(best, rel=1e-12, abs=1e-12)
            assert int(path[-1]) in set(net.ends.tolist())
            checked += 1


def test_two_node_network_is_single_edge():
    g = csr_matrix(np.array([[0.0, 1.5], [1.5, 0.0]]))
    paths, costs = shortest_paths(g, [0], [1])
    assert paths[0].tolist() == [0, 1] and costs == [1.5]
    disconnected = csr_matrix((3, 3))
    assert shortest_paths(disconnected, [0], [2]) == (None, None)


def test_endpoints_on_faces_and_counts():
    rng = np.random.default_rng(4)
    for _ in range(10):
        net = generate_blood_network(SMALL_BLOOD, rng, BOX)
        assert 5 <= len(net.starts) <= 10 and 5 <= len(net.ends) <= 10
        np.testing.assert_allclose(net.nodes[net.starts, 2], BOX[4])
        np.testing.assert_allclose(net.nodes[net.ends, 2], BOX[5])
        for p in net.paths:
            assert net.nodes[p[0], 2] == BOX[4] and net.nodes[p[-1], 2] == BOX[5]


def test_knn_graph_symmetric():
    pts = np.random.default_rng(1).uniform(size=(50, 3))
    g = knn_graph(pts, 4)
    assert (g != g.T).nnz == 0
    assert np.all(g.data > 0)


def _grid():
    return FieldGrid(-1.0, 1.0, 0.0, 0.05, (20, 40, 40))


def test_blood_field_empty_and_bounded():
    assert not bake_blood_field(None, _grid(), 0.06).any()
    rng = np.random.default_rng(5)
    for _ in range(100):
        net = generate_blood_network(BloodConfig(n_nodes=(150, 200), n_start=(2, 4), n_end=(2, 4)),
                                     rng, (-1.0, 1.0, -1.0, 1.0, -1.0, 0.0))
        f = bake_blood_field(net, _grid(), 0.06)
        assert f.min() >= 0.0 and f.max() <= 1.0


def test_single_segment_field_profile():
    nodes = np.array([[-0.8, 0.025, -0.525], [0.8, 0.025, -0.525]])
    net = BloodNetwork(nodes, csr_matrix((2, 2)), np.array([0]), np.array([1]),
                       [np.array([0, 1])], np.array([20.0]), (-1, 1, -1, 1, -1, 0))
    f = bake_blood_field(net, _grid(), 0.1)
    zc, yc, xc = _grid().centers()
    k = int(np.argmin(np.abs(zc - nodes[0, 2])))
    i = int(np.argmin(np.abs(yc - nodes[0, 1])))
    column = f[:, i, 20]
    assert np.argmax(column) == k
    assert np.all(np.diff(column[k:]) <= 0) and np.all(np.diff(column[:k + 1]) >= 0)


def _stack(rng, **kw):
    return build_layers(LayerConfig(resolution=64, **kw), rng)


def test_hair_properties(rng):
    s = _stack(rng)
    assert len(generate_hair(HairConfig(density_per_cm2=0.0), rng, s)) == 0
    hair = generate_hair(HairConfig(density_per_cm2=20.0, curvature_per_mm=0.3), rng, s)
    assert len(hair) > 0
    for pts in hair.strands:
        root_h = float(s.elevation_um(0, pts[0, 0], pts[0, 1])) / 1000.0
        assert abs(pts[0, 2] - root_h) < 1e-9
        arc = np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()
        assert 3.0 * 0.95 <= arc <= 8.0 * 1.05
    with pytest.raises(AnatomyError):
        generate_hair(HairConfig(density_per_cm2=-1), rng, s)


def test_embed_lesion_placement(rng):
    lesion, _ = grow(LesionParams(timepoints=10, seed=3, grid_shape=(64, 64, 64)))
    s = _stack(rng)
    m = embed_lesion(s, lesion)
    c = m.lesion_voxel_centers()
    p = lesion.pitch_um / 1000.0
    idx = np.argwhere(lesion.depth_first())
    centroid = np.array([(idx[:, 2] - 32).mean(), -(idx[:, 1] - 32).mean()]) * p
    np.testing.assert_allclose(c[:, :2].mean(axis=0), centroid, atol=1e-12)
    assert abs(m.placement.x_mm) < p and abs(m.placement.y_mm) < p
    top = s.elevation_um(0, c[:, 0], c[:, 1]) / 1000.0
    assert np.all(c[:, 2] + p / 2 < top)
    # translation only: the top view of placed voxels equals the raw projection
    cols = np.round((c[:, 0] - m.placement.x_mm) / p).astype(int) + 32
    rows = np.round(-(c[:, 1] - m.placement.y_mm) / p).astype(int) + 32
    top_view = np.zeros((64, 64), bool)
    top_view[rows, cols] = True
    np.testing.assert_array_equal(top_view, project_mask(lesion))


def test_build_save_load_roundtrip(tmp_path):
    lesion, _ = grow(LesionParams(timepoints=5, seed=1, grid_shape=(32, 32, 32)))
    cfg = SkinConfig(layers=LayerConfig(resolution=32), blood=SMALL_BLOOD,
                     hair=HairConfig(density_per_cm2=5.0))
    a = build_skin_model(cfg, np.random.default_rng(8), lesion)
    b = build_skin_model(cfg, np.random.default_rng(8), lesion)
    np.testing.assert_array_equal(a.stack.heights_um, b.stack.heights_um)
    np.testing.assert_array_equal(a.blood_field, b.blood_field)
    save_skin_model(a, tmp_path / "m")
    c = load_skin_model(tmp_path / "m")
    np.testing.assert_allclose(c.stack.heights_um, a.stack.heights_um, rtol=1e-6)
    assert len(c.hair) == len(a.hair)
    np.testing.assert_array_equal(c.lesion.occupancy, a.lesion.occupancy)
    assert c.placement == a.placement
    assert np.abs(c.blood_field - a.blood_field).max() <= 0.5 / 255 + 1e-6
