import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from defectline import _kernels
from defectline.lattice import (
    EdgeConfig, LatticeBox, PercParams, build_box, cluster_of, connected, default_width,
    sample_config,
)
from defectline.rng import (
    GAMMA, REFERENCE_OUTPUT, REFERENCE_SEED, _mix_array, replica_seed, splitmix64, uniforms,
)


def test_reference_vector():
    assert splitmix64(REFERENCE_SEED, 5).tolist() == list(REFERENCE_OUTPUT)


def test_uniforms_in_unit_interval():
    u = uniforms(7, 10000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.02


def test_box_counts():
    b = build_box(2, 2, 1)
    assert (b.vertex_count, b.edge_count, len(b.axis_edges)) == (9, 12, 2)
    b3 = build_box(3, 1, 1)
    assert b3.vertex_count == 18
    assert b3.edge_count == 33


def test_default_width():
    assert default_width(4) == 10
    assert default_width(40) == 20
    assert build_box(2, 40).w == 20


def test_axis_edges_lie_on_axis():
    b = build_box(3, 3, 1, margin=2, transverse=[(0, 1), (-1, 1)])
    starts = [b.coords(b.endpoints(e)[0]) for e in b.axis_edges]
    assert starts == [(k, 0, 0) for k in range(-2, 5)]
    assert b.axis_mask.sum() == len(b.axis_edges)


def test_edge_roundtrip():
    b = build_box(3, 2, 1)
    for e in range(b.edge_count):
        v, k = b.edge(e)
        assert b.edge_id(v, k) == e
        u, w = b.endpoints(e)
        diff = np.subtract(b.coords(w), b.coords(u))
        assert diff.tolist() == np.eye(3, dtype=int)[k].tolist()


def test_invalid_inputs():
    with pytest.raises(ValueError):
        PercParams(2, 1.2, 0.5)
    with pytest.raises(ValueError):
        PercParams(1, 0.2, 0.5)
    with pytest.raises(ValueError):
        build_box(2, 0, 1)
    with pytest.raises(ValueError):
        build_box(2, 3, 1, transverse=[(1, 2)])
    with pytest.warns(RuntimeWarning):
        PercParams(2, 0.6, 0.5)


def test_extreme_configurations():
    b = build_box(2, 3, 1)
    assert connected(EdgeConfig.all_open(b), b.origin, b.axis_vertex(3))
    assert not connected(EdgeConfig.all_closed(b), b.origin, b.axis_vertex(3))
    assert connected(EdgeConfig.all_closed(b), b.origin, b.origin)


def _bfs_cluster(box, bits, x):
    ends = box.edge_endpoints[bits]
    adj = {}
    for a, c in ends:
        adj.setdefault(a, []).append(c)
        adj.setdefault(c, []).append(a)
    seen = {x}
    stack = [x]
    while stack:
        v = stack.pop()
        for u in adj.get(v, []):
            if u not in seen:
                seen.add(u)
                stack.append(u)
    return seen


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), p=st.floats(0.05, 0.49), pl=st.floats(0.05, 0.95))
def test_union_find_matches_bfs(seed, p, pl):
    b = build_box(2, 4, 2)
    cfg = sample_config(b, PercParams(2, p, pl), seed)
    ref = _bfs_cluster(b, cfg.bits, b.origin)
    assert set(cluster_of(cfg, b.origin).vertices.tolist()) == ref


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**63), pl=st.floats(0.05, 0.9))
def test_monotone_coupling(seed, pl):
    b = build_box(2, 5, 2)
    lo = sample_config(b, PercParams(2, 0.4, pl), seed)
    hi = sample_config(b, PercParams(2, 0.4, min(pl + 0.1, 1.0)), seed)
    assert np.all(hi.bits >= lo.bits)
    assert np.array_equal(hi.bits[~b.axis_mask], lo.bits[~b.axis_mask])
    assert set(cluster_of(lo, b.origin).vertices) <= set(cluster_of(hi, b.origin).vertices)


@pytest.mark.parametrize("d,margin", [(2, 0), (2, 3), (3, 1)])
def test_lazy_explorer_reproduces_sampled_cluster(d, margin):
    b = build_box(d, 4, 2, margin=margin)
    params = PercParams(d, 0.45 if d == 2 else 0.24, 0.8)
    shape, strides, offsets, rstrides, axis_index = b.kernel_args()
    stamp = np.zeros(b.vertex_count, np.int64)
    queue = np.empty(b.vertex_count, np.int64)
    coords = np.empty(d, np.int64)
    for r in range(50):
        key = replica_seed(99, r)
        size = _kernels.explore(shape, strides, offsets, rstrides, axis_index, params.p,
                                params.p_line, np.uint64(key), b.origin, stamp, queue,
                                r + 1, coords)
        cfg = sample_config(b, params, key)
        assert sorted(queue[:size].tolist()) == cluster_of(cfg, b.origin).vertices.tolist()


def test_open_fraction_over_replicas():
    b = build_box(2, 2, 1)
    with pytest.warns(RuntimeWarning, match="threshold"):
        params = PercParams(2, 0.5, 0.5)
    e = 5
    keys = splitmix64(2718, 10**6)
    assert keys[3] == replica_seed(2718, 3)
    with np.errstate(over="ignore"):
        u = (_mix_array(keys + np.uint64(e + 1) * GAMMA) >> np.uint64(11)) * 2.0**-53
    for r in range(20):
        assert sample_config(b, params, int(keys[r])).bits[e] == (u[r] < 0.5)
    assert abs(np.mean(u < 0.5) - 0.5) <= 3 * 5e-4


def test_connected_matches_bfs_on_3x3_box():
    b = build_box(2, 2, 1)
    params = PercParams(2, 0.45, 0.7)
    x = b.origin
    for r in range(10**4):
        cfg = sample_config(b, params, replica_seed(4, r))
        ref = _bfs_cluster(b, cfg.bits, x)
        for y in range(b.vertex_count):
            assert connected(cfg, x, y) == (y in ref)
