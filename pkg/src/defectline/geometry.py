"""Cone-points, renewal structure and line statistics of sampled clusters.

Cones are the 45 degree cones ``Y = {u : u_1 >= |u_perp|_inf}``.  A vertex
``z`` of a cluster ``C`` containing ``x`` and ``y`` is a cone-point if
``x_1 < z_1 < y_1`` and every ``u`` in ``C`` lies in ``z + Y`` or ``z - Y``;
it is a cone-renewal if in addition ``z`` is on the axis.  A cone-point is
necessarily the only cluster vertex of its column, so cutting the cluster
at the columns of a chosen set of cone-points splits vertices and edges
into slabs that only share the cut vertices.
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .lattice import Cluster, PercParams, build_box, cluster_of, default_width, sample_config
from .rng import replica_seed


def _endpoints(cluster, x, y):
    box = cluster.box
    x = box.origin if x is None else int(x)
    y = box.axis_vertex(box.n) if y is None else int(y)
    if x not in cluster or y not in cluster:
        raise ValueError("the cluster must contain both endpoints")
    return x, y


def cone_points(cluster, x=None, y=None):
    """Cone-points of ``cluster`` strictly between ``x`` and ``y`` (default ``0`` and ``n e_1``).

    Returns vertex ids ordered by first coordinate.  Each column is reduced
    to its transverse bounding box, so a candidate costs O(columns * d).
    """
    x, y = _endpoints(cluster, x, y)
    box = cluster.box
    xs = cluster.coords()
    lo1, hi1 = box.coords(x)[0], box.coords(y)[0]
    col = xs[:, 0]
    cols, inverse, counts = np.unique(col, return_inverse=True, return_counts=True)
    perp = xs[:, 1:]
    kmin = np.full((len(cols), box.d - 1), np.iinfo(np.int64).max)
    kmax = np.full((len(cols), box.d - 1), np.iinfo(np.int64).min)
    np.minimum.at(kmin, inverse, perp)
    np.maximum.at(kmax, inverse, perp)
    out = []
    for i in np.argsort(col, kind="stable"):
        c = col[i]
        if not lo1 < c < hi1 or counts[inverse[i]] != 1:
            continue
        dist = np.abs(cols - c)[:, None]
        z = perp[i]
        if np.all(kmax - z <= dist) and np.all(z - kmin <= dist):
            out.append(int(cluster.vertices[i]))
    return out


def cone_renewals_on_line(cluster, x=None, y=None):
    """Cone-points with zero transverse coordinates."""
    box = cluster.box
    coords = box.vertex_coords
    return [v for v in cone_points(cluster, x, y) if not np.any(coords[v, 1:])]


@dataclass
class ClusterDecomposition:
    """Slab pieces of a cluster cut at ordered cut vertices.

    Each piece is a pair ``(vertices, edges)`` of sorted id arrays.  With no
    cut vertex the whole cluster is the backward piece and ``degenerate``
    is set.
    """

    box: object
    renewals: list
    backward: tuple
    components: list
    forward: tuple
    degenerate: bool

    def displacements(self):
        """``z_{j+1} - z_j`` for consecutive cut vertices, one row per component."""
        c = self.box.vertex_coords[np.asarray(self.renewals, dtype=np.int64)]
        return np.diff(c, axis=0)

    def lengths(self):
        """Longitudinal lengths of the components."""
        return self.displacements()[:, 0]

    def pieces(self):
        return [self.backward, *self.components, self.forward]

    def concatenate(self):
        """Glue the pieces back together; returns ``(vertices, edges)``."""
        verts = np.unique(np.concatenate([v for v, _ in self.pieces()]))
        edges = np.concatenate([e for _, e in self.pieces()])
        if len(np.unique(edges)) != len(edges):
            raise AssertionError("pieces share an edge")
        return verts, np.sort(edges)


def _slab(cluster, lo, hi):
    coords = cluster.box.vertex_coords
    vc = coords[cluster.vertices, 0]
    verts = cluster.vertices[(vc >= lo) & (vc <= hi)]
    ends = cluster.box.edge_endpoints[cluster.edges]
    a = coords[ends[:, 0], 0]
    b = coords[ends[:, 1], 0]
    edges = cluster.edges[(a >= lo) & (b <= hi)]
    return verts, edges


def irreducible_decomposition(cluster, renewals):
    """Cut ``cluster`` at the columns of ``renewals`` (cone-points, increasing)."""
    box = cluster.box
    renewals = [int(v) for v in renewals]
    if not renewals:
        empty = (np.empty(0, np.int64), np.empty(0, np.int64))
        return ClusterDecomposition(box, [], (cluster.vertices, cluster.edges), [], empty, True)
    cols = [box.coords(v)[0] for v in renewals]
    if any(b <= a for a, b in zip(cols, cols[1:])):
        raise ValueError("renewal points must strictly increase in first coordinate")
    coords = box.vertex_coords
    vc = coords[cluster.vertices, 0]
    for v, c in zip(renewals, cols):
        if v not in cluster or np.count_nonzero(vc == c) != 1:
            raise ValueError(f"vertex {v} is not a cut vertex of the cluster")
    lo, hi = cluster.span
    backward = _slab(cluster, lo, cols[0])
    comps = [_slab(cluster, a, b) for a, b in zip(cols, cols[1:])]
    forward = _slab(cluster, cols[-1], hi)
    return ClusterDecomposition(box, renewals, backward, comps, forward, False)


@dataclass
class LineStats:
    edges_on_line: int
    closed_boundary_on_line: int
    interaction: float
    span: tuple


def _line_edges_touching(cluster):
    box = cluster.box
    ends = box.edge_endpoints[box.axis_edges]
    member = np.zeros(box.vertex_count, dtype=bool)
    member[cluster.vertices] = True
    return box.axis_edges[member[ends[:, 0]] | member[ends[:, 1]]]


def interaction_weight(params, edges_on_line, closed_boundary):
    """``I(C)`` from the two line counts; zero when ``p_line == p``."""
    if params.p_line == params.p:
        return 0.0
    gain = math.log(params.p_line / params.p) if edges_on_line else 0.0
    loss = math.log((1 - params.p_line) / (1 - params.p)) if closed_boundary else 0.0
    return edges_on_line * gain + closed_boundary * loss


def line_interaction_stats(cluster, config, params):
    """Open axis edges of ``cluster`` and closed axis edges touching it, with ``I(C)``.

    Only axis edges inside the box are counted.
    """
    touching = _line_edges_touching(cluster)
    is_open = config.bits[touching]
    inside = int(np.count_nonzero(is_open))
    boundary = int(np.count_nonzero(~is_open))
    coords = cluster.coords()
    on_line = coords[~np.any(coords[:, 1:], axis=1), 0]
    span = (int(on_line.min()), int(on_line.max())) if on_line.size else None
    return LineStats(inside, boundary, interaction_weight(params, inside, boundary), span)


def pivotal_edges_on_line(config, x, y):
    """Axis edges whose state decides ``x <-> y``; returned as sorted edge ids."""
    box = config.box
    lab = config.labels()
    ends = box.edge_endpoints
    axis = box.axis_edges
    if lab[x] != lab[y]:
        # only a closed edge bridging the two clusters can be pivotal
        la, lb = lab[ends[axis, 0]], lab[ends[axis, 1]]
        bridge = ((la == lab[x]) & (lb == lab[y])) | ((la == lab[y]) & (lb == lab[x]))
        return np.sort(axis[bridge & ~config.bits[axis]])
    if x == y:
        return np.empty(0, np.int64)
    out = []
    cand = axis[config.bits[axis] & (lab[ends[axis, 0]] == lab[x])]
    for e in cand:
        bits = config.bits.copy()
        bits[e] = False
        sub = ends[bits]
        lab2 = _kernels.uf_labels(box.vertex_count, np.ascontiguousarray(sub[:, 0]),
                                  np.ascontiguousarray(sub[:, 1]))
        if lab2[x] != lab2[y]:
            out.append(int(e))
    return np.array(out, dtype=np.int64)


def diamond_line_overlap(z, z2):
    """Number of axis edges with both endpoints in ``(z + Y) n (z2 - Y)``."""
    z = np.asarray(z, dtype=np.int64)
    z2 = np.asarray(z2, dtype=np.int64)
    if z.shape != z2.shape or z.size < 2:
        raise ValueError("z and z2 must be points of the same dimension >= 2")
    gap = int(z2[0] - z[0])
    if np.max(np.abs(z2[1:] - z[1:])) > gap:
        raise ValueError("z2 is not in the forward cone of z")
    lo = int(z[0] + np.max(np.abs(z[1:])))
    hi = int(z2[0] - np.max(np.abs(z2[1:])))
    return max(0, hi - lo)


# -- conditioned sampling -------------------------------------------------------

@dataclass
class GeometrySample:
    """Summary of one cluster sampled conditionally on ``0 <-> n e_1``."""

    replica: int
    size: int
    span: tuple
    cone_points: int
    renewals: int
    lengths: list
    edges_on_line: int
    closed_boundary_on_line: int
    interaction: float

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def conditioned_clusters(params, n, count, seed, *, w=None, margin=None,
                         max_replicas=10**9, block=1 << 16):
    """Yield ``(replica, config, cluster)`` for the first ``count`` replicas with ``0 <-> n e_1``.

    Replicas are screened with the lazy explorer and the accepted ones are
    re-sampled in full, which gives exactly the configuration of that
    replica.  Raises RuntimeError if fewer than ``count`` replicas are
    accepted among the first ``max_replicas``.
    """
    w = default_width(n) if w is None else int(w)
    margin = w if margin is None else int(margin)
    box = build_box(params.d, n, w, margin=margin)
    geometry = box.kernel_args()
    target = box.axis_vertex(n)
    found = 0
    r = 0
    while found < count:
        if r >= max_replicas:
            raise RuntimeError(f"only {found} of {count} conditioned samples in {r} replicas")
        r1 = min(r + block, max_replicas)
        acc, r = _kernels.accepted_replicas(*geometry, params.p, params.p_line,
                                            np.uint64(seed), r, r1, box.origin, target,
                                            count - found)
        for rep in acc:
            cfg = sample_config(box, params, replica_seed(seed, int(rep)))
            yield int(rep), cfg, cluster_of(cfg, box.origin)
            found += 1


def summarize(replica, config, cluster, params):
    n = cluster.box.n
    y = cluster.box.axis_vertex(n)
    pts = cone_points(cluster, cluster.box.origin, y)
    ren = [v for v in pts if not np.any(cluster.box.vertex_coords[v, 1:])]
    dec = irreducible_decomposition(cluster, ren)
    st = line_interaction_stats(cluster, config, params)
    return GeometrySample(replica, cluster.size, cluster.span, len(pts), len(ren),
                          [int(v) for v in dec.lengths()] if ren else [],
                          st.edges_on_line, st.closed_boundary_on_line, st.interaction)


def geometry_samples(params, n, count, seed, **kwargs):
    """Summaries of ``count`` conditioned clusters."""
    return [summarize(r, cfg, cl, params)
            for r, cfg, cl in conditioned_clusters(params, n, count, seed, **kwargs)]


@dataclass
class RenewalDensity:
    mean: float
    stderr: float
    samples: int


def renewal_density(samples, n):
    """Mean number of cone-renewals per unit length over ``samples``."""
    x = np.array([s.renewals for s in samples], dtype=float) / n
    se = x.std(ddof=1) / math.sqrt(len(x)) if len(x) > 1 else math.nan
    return RenewalDensity(float(x.mean()), float(se), len(x))


def component_length_law(lengths):
    """Empirical law of component lengths: ``f[l]`` for ``l = 0..max``, with mean and variance."""
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.size == 0:
        raise ValueError("no component lengths")
    if lengths.min() < 1:
        raise ValueError("component lengths are positive")
    f = np.bincount(lengths).astype(float) / lengths.size
    return f, float(lengths.mean()), float(lengths.var(ddof=1)) if lengths.size > 1 else 0.0


def increment_tail_slope(lengths, min_count=5):
    """Slope of ``log P(V >= t)`` against ``t`` over values with at least ``min_count`` samples."""
    lengths = np.sort(np.asarray(lengths, dtype=np.int64))
    t = np.arange(1, lengths.max() + 1)
    counts = lengths.size - np.searchsorted(lengths, t, side="left")
    ok = counts >= min_count
    if ok.sum() < 2:
        raise ValueError("not enough tail points to fit")
    coef = np.polyfit(t[ok], np.log(counts[ok] / lengths.size), 1)
    return float(coef[0])
