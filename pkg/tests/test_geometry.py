import itertools
import math

import numpy as np
import pytest

from defectline import exact, geometry as g
from defectline.lattice import EdgeConfig, PercParams, build_box, cluster_of, sample_config
from defectline.rng import replica_seed


def config_with(box, edges):
    bits = np.zeros(box.edge_count, dtype=bool)
    bits[list(edges)] = True
    return EdgeConfig(box, bits)


def axis_path(box):
    return [int(e) for e in box.axis_edges if 0 <= box.coords(box.endpoints(e)[0])[0] < box.n]


def brute_cone_points(cluster, lo, hi):
    xs = cluster.coords()
    out = []
    for i, z in enumerate(xs):
        if not lo < z[0] < hi:
            continue
        if all(np.max(np.abs(u[1:] - z[1:])) <= abs(u[0] - z[0])
               for j, u in enumerate(xs) if j != i):
            out.append(int(cluster.vertices[i]))
    return sorted(out, key=lambda v: cluster.box.coords(v)[0])


def test_straight_segment():
    box = build_box(2, 6, 2)
    cfg = config_with(box, axis_path(box))
    cl = cluster_of(cfg, box.origin)
    assert cl.size == 7 and len(cl.edges) == 6
    pts = g.cone_points(cl)
    assert pts == [box.axis_vertex(k) for k in range(1, 6)]
    assert g.cone_renewals_on_line(cl) == pts
    dec = g.irreducible_decomposition(cl, pts)
    pieces = dec.pieces()
    assert len(pieces) == 6 and all(len(e) == 1 for _, e in pieces)
    assert dec.displacements().tolist() == [[1, 0]] * 4
    verts, edges = dec.concatenate()
    assert np.array_equal(verts, cl.vertices) and np.array_equal(edges, cl.edges)


def test_transverse_arm_shades_neighbours():
    box = build_box(2, 8, 3)
    arm = [box.edge_id(box.vertex((4, h)), 1) for h in range(0, 2)]  # (4,0)-(4,1)-(4,2)
    cl = cluster_of(config_with(box, axis_path(box) + arm), box.origin)
    pts = g.cone_points(cl)
    # column 4 holds three vertices; columns 3 and 5 are within distance 1 < height 2
    assert [box.coords(v)[0] for v in pts] == [1, 2, 6, 7]
    assert pts == brute_cone_points(cl, 0, 8)


def test_off_axis_cone_point():
    box = build_box(2, 6, 2)
    # detour through (2,1)-(3,1)-(4,1) replaces the axis edges 2-3 and 3-4
    ax = [e for e in axis_path(box) if box.coords(box.endpoints(e)[0])[0] not in (2, 3)]
    detour = [box.edge_id(box.vertex((2, 0)), 1), box.edge_id(box.vertex((2, 1)), 0),
              box.edge_id(box.vertex((3, 1)), 0), box.edge_id(box.vertex((4, 0)), 1)]
    cl = cluster_of(config_with(box, ax + detour), box.origin)
    pts = g.cone_points(cl)
    assert box.vertex((3, 1)) in pts
    assert box.vertex((3, 1)) not in g.cone_renewals_on_line(cl)
    assert pts == brute_cone_points(cl, 0, 6)


@pytest.mark.parametrize("d", [2, 3])
def test_random_clusters_against_brute_force(d):
    box = build_box(d, 8, 3, margin=2)
    prm = PercParams(d, 0.45 if d == 2 else 0.24, 0.9)
    checked = 0
    for r in range(400):
        cfg = sample_config(box, prm, replica_seed(5, r))
        cl = cluster_of(cfg, box.origin)
        if box.axis_vertex(8) not in cl:
            continue
        pts = g.cone_points(cl)
        assert pts == brute_cone_points(cl, 0, 8)
        ren = g.cone_renewals_on_line(cl)
        assert set(ren) <= set(pts)
        dec = g.irreducible_decomposition(cl, pts)
        verts, edges = dec.concatenate()
        assert np.array_equal(verts, cl.vertices) and np.array_equal(edges, cl.edges)
        checked += 1
    assert checked > 20


def test_decomposition_degenerate_and_invalid():
    box = build_box(2, 4, 2)
    cl = cluster_of(EdgeConfig.all_open(box), box.origin)
    dec = g.irreducible_decomposition(cl, [])
    assert dec.degenerate and dec.components == []
    assert np.array_equal(dec.backward[0], cl.vertices)
    with pytest.raises(ValueError):
        g.irreducible_decomposition(cl, [box.axis_vertex(2)])  # column 2 is full
    seg = cluster_of(config_with(box, axis_path(box)), box.origin)
    with pytest.raises(ValueError):
        g.irreducible_decomposition(seg, [box.axis_vertex(3), box.axis_vertex(1)])


def test_cone_points_need_endpoints():
    box = build_box(2, 4, 1)
    cl = cluster_of(EdgeConfig.all_closed(box), box.origin)
    with pytest.raises(ValueError):
        g.cone_points(cl)


def test_line_stats_single_edge():
    box = build_box(2, 1, 0)
    cfg = EdgeConfig.all_open(box)
    st = g.line_interaction_stats(cluster_of(cfg, box.origin), cfg, PercParams(2, 0.3, 0.8))
    assert (st.edges_on_line, st.closed_boundary_on_line) == (1, 0)
    assert st.interaction == pytest.approx(math.log(0.8 / 0.3))
    st = g.line_interaction_stats(cluster_of(cfg, box.origin), cfg, PercParams(2, 0.3, 0.3))
    assert st.interaction == 0.0


def test_line_stats_reproduce_change_of_measure():
    box = build_box(2, 2, 1)
    p, pl = 0.4, 0.7
    x, y = exact.axis_pair(box)
    lhs = exact.enumerate_connectivity(box, PercParams(2, p, pl), x, y)
    prm = PercParams(2, p, pl)
    axis = set(box.axis_edges.tolist())
    terms = []
    for bits in itertools.product((False, True), repeat=box.edge_count):
        cfg = EdgeConfig(box, np.array(bits))
        cl = cluster_of(cfg, x)
        if y not in cl:
            continue
        w = math.prod(p if b else 1 - p for e, b in enumerate(bits))
        st = g.line_interaction_stats(cl, cfg, prm)
        terms.append(w * math.exp(st.interaction))
    assert math.fsum(terms) == pytest.approx(lhs, abs=1e-12)
    assert len(axis) == 2


def test_pivotal_edges():
    box = build_box(2, 4, 1)
    chain = axis_path(box)
    cfg = config_with(box, chain)
    assert g.pivotal_edges_on_line(cfg, box.origin, box.axis_vertex(4)).tolist() == sorted(chain)
    # bypass around the axis edge (1,0)-(2,0) through row 1
    bypass = [box.edge_id(box.vertex((1, 0)), 1), box.edge_id(box.vertex((1, 1)), 0),
              box.edge_id(box.vertex((2, 0)), 1)]
    cfg = config_with(box, chain + bypass)
    piv = g.pivotal_edges_on_line(cfg, box.origin, box.axis_vertex(4)).tolist()
    assert box.edge_id(box.vertex((1, 0)), 0) not in piv and len(piv) == 3
    # disconnected: the single missing axis edge is the only pivotal one
    missing = box.edge_id(box.vertex((2, 0)), 0)
    cfg = config_with(box, [e for e in chain if e != missing])
    assert g.pivotal_edges_on_line(cfg, box.origin, box.axis_vertex(4)).tolist() == [missing]


def test_pivotal_matches_flip_definition():
    box = build_box(2, 5, 2)
    prm = PercParams(2, 0.45, 0.8)
    from defectline.lattice import connected
    x, y = box.origin, box.axis_vertex(5)
    for r in range(60):
        cfg = sample_config(box, prm, replica_seed(13, r))
        piv = set(g.pivotal_edges_on_line(cfg, x, y).tolist())
        for e in box.axis_edges:
            on, off = cfg.bits.copy(), cfg.bits.copy()
            on[e], off[e] = True, False
            flip = connected(EdgeConfig(box, on), x, y) != connected(EdgeConfig(box, off), x, y)
            assert (int(e) in piv) == flip


def test_renewals_have_pivotal_incident_edges():
    box = build_box(2, 6, 2)
    prm = PercParams(2, 0.4, 0.9)
    seen = 0
    for r in range(300):
        cfg = sample_config(box, prm, replica_seed(21, r))
        cl = cluster_of(cfg, box.origin)
        if box.axis_vertex(6) not in cl:
            continue
        piv = set(g.pivotal_edges_on_line(cfg, box.origin, box.axis_vertex(6)).tolist())
        for v in g.cone_renewals_on_line(cl):
            k = box.coords(v)[0]
            left = box.edge_id(box.axis_vertex(k - 1), 0)
            right = box.edge_id(v, 0)
            assert left in piv and right in piv
            seen += 1
    assert seen > 0


def test_diamond_overlap():
    assert g.diamond_line_overlap((0, 0), (5, 0)) == 5
    assert g.diamond_line_overlap((0, 4), (3, 1)) == 0
    with pytest.raises(ValueError):
        g.diamond_line_overlap((0, 0), (2, 3))


def _diamond_scan(z, z2):
    z, z2 = np.asarray(z), np.asarray(z2)
    inside = lambda u: (np.max(np.abs(u[1:] - z[1:])) <= u[0] - z[0]
                        and np.max(np.abs(z2[1:] - u[1:])) <= z2[0] - u[0])
    count = 0
    for k in range(z[0] - 1, z2[0] + 2):
        a = np.array([k] + [0] * (len(z) - 1))
        b = a.copy()
        b[0] += 1
        if inside(a) and inside(b):
            count += 1
    return count


def test_diamond_random_pairs():
    rng = np.random.default_rng(3)
    for _ in range(500):
        d = int(rng.integers(2, 4))
        z = rng.integers(-4, 5, size=d)
        gap = int(rng.integers(0, 9))
        z2 = z.copy()
        z2[0] += gap
        z2[1:] += rng.integers(-gap, gap + 1, size=d - 1)
        ov = g.diamond_line_overlap(z, z2)
        assert ov == _diamond_scan(z, z2)
        assert ov <= gap * (np.max(np.abs(z[1:])) <= gap)


def test_conditioned_sampling_and_records():
    prm = PercParams(2, 0.35, 0.9)
    samples = g.geometry_samples(prm, 10, 40, 4)
    assert len(samples) == 40
    reps = [s.replica for s in samples]
    assert reps == sorted(reps) and len(set(reps)) == 40
    assert all(s.renewals <= s.cone_points for s in samples)
    rec = samples[0].to_json()
    assert '"renewals"' in rec and '"interaction"' in rec
    again = g.geometry_samples(prm, 10, 40, 4)
    assert [s.to_json() for s in again] == [s.to_json() for s in samples]


def test_component_law_and_tail():
    prm = PercParams(2, 0.25, 0.9)
    samples = g.geometry_samples(prm, 20, 300, 8)
    lengths = [l for s in samples for l in s.lengths]
    f, mean, var = g.component_length_law(lengths)
    assert mean >= 1 and np.isfinite(var)
    assert f.sum() == pytest.approx(1.0)
    assert g.increment_tail_slope(lengths) < -0.1
