"""Finite boxes of Z^d with a defect line, edge configurations and clusters.

The defect line is the first coordinate axis.  A box covers first
coordinates ``-margin .. n + margin`` and transverse coordinates in
``[lo_k, hi_k]`` (``[-w, w]`` by default), always containing the axis.
Boundary conditions are free: edges with an endpoint outside the box do not
exist.

Vertex ids are the C-order ravel of the coordinate offsets.  Edges are
stored as (vertex, positive direction k) and numbered block by block in k,
each block being the C-order ravel over the vertices whose k-th coordinate
is not maximal.  This numbering is dense and bijective.
"""

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels
from .rng import as_seed, uniforms

# Known bond percolation thresholds on the hypercubic lattice.
# d=2 is exact (Kesten); the others are numerical estimates.
BOND_THRESHOLDS = {
    2: 0.5,
    3: 0.2488126,
    4: 0.1601314,
    5: 0.1181718,
    6: 0.0942019,
    7: 0.0786752,
}

_INDEX_LIMIT = 2**62


@dataclass(frozen=True)
class PercParams:
    """Bulk probability ``p`` off the axis, ``p_line`` on the axis, in dimension ``d``."""

    d: int
    p: float
    p_line: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"dimension must be an integer >= 2, got {self.d}")
        if not 0.0 <= self.p < 1.0:
            raise ValueError(f"p must lie in [0, 1), got {self.p}")
        if not 0.0 <= self.p_line <= 1.0:
            raise ValueError(f"p_line must lie in [0, 1], got {self.p_line}")
        pc = BOND_THRESHOLDS.get(self.d)
        if pc is not None and self.p >= pc:
            warnings.warn(
                f"p={self.p} is not below the bond threshold {pc} for d={self.d}",
                RuntimeWarning,
                stacklevel=3,
            )

    @property
    def epsilon(self):
        """Log-ratio ``log(p_line / p)``."""
        return math.log(self.p_line / self.p)

    def with_line(self, p_line):
        return PercParams(self.d, self.p, p_line)


class LatticeBox:
    """Immutable finite box around the segment ``0 .. n e_1`` of the axis."""

    def __init__(self, d, n, w, margin=0, transverse=None):
        d, n, w, margin = int(d), int(n), int(w), int(margin)
        if d < 2:
            raise ValueError(f"dimension must be >= 2, got {d}")
        if n < 1:
            raise ValueError(f"longitudinal extent must be >= 1, got {n}")
        if w < 0 or margin < 0:
            raise ValueError("transverse radius and margin must be >= 0")
        if transverse is None:
            transverse = [(-w, w)] * (d - 1)
        transverse = [(int(a), int(b)) for a, b in transverse]
        if len(transverse) != d - 1:
            raise ValueError("need one transverse range per transverse dimension")
        for a, b in transverse:
            if not a <= 0 <= b:
                raise ValueError(f"transverse range {(a, b)} must contain 0")

        self.d = d
        self.n = n
        self.w = w
        self.margin = margin
        lower = [-margin] + [a for a, _ in transverse]
        upper = [n + margin] + [b for _, b in transverse]
        self.lower = np.array(lower, dtype=np.int64)
        self.upper = np.array(upper, dtype=np.int64)
        shape = self.upper - self.lower + 1

        count = 1
        for s in shape:
            count *= int(s)
        if count * d >= _INDEX_LIMIT:
            raise OverflowError(f"box with {count} vertices overflows the index type")
        self.shape = shape
        self.vertex_count = count
        self.strides = np.array(
            [int(np.prod(shape[k + 1:])) for k in range(d)], dtype=np.int64
        )

        offsets = np.zeros(d + 1, dtype=np.int64)
        rstrides = np.zeros((d, d), dtype=np.int64)
        for k in range(d):
            reduced = shape.copy()
            reduced[k] -= 1
            for j in range(d):
                rstrides[k, j] = int(np.prod(reduced[j + 1:]))
            offsets[k + 1] = offsets[k] + int(np.prod(reduced))
        self.edge_offsets = offsets
        self.rstrides = rstrides
        self.edge_count = int(offsets[-1])

        # index of the axis along each dimension (entry 0 unused)
        self.axis_index = -self.lower
        self.origin = self.vertex((0,) * d)
        first = self.edge_id(self.vertex((-margin,) + (0,) * (d - 1)), 0)
        self.axis_edges = first + rstrides[0, 0] * np.arange(n + 2 * margin, dtype=np.int64)
        self._axis_mask = None
        for arr in (self.lower, self.upper, self.shape, self.strides,
                    self.edge_offsets, self.rstrides, self.axis_index, self.axis_edges):
            arr.flags.writeable = False

    def __repr__(self):
        return (f"LatticeBox(d={self.d}, n={self.n}, w={self.w}, margin={self.margin}, "
                f"lower={self.lower.tolist()}, upper={self.upper.tolist()})")

    def __eq__(self, other):
        return (isinstance(other, LatticeBox)
                and np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper))

    def __hash__(self):
        return hash((tuple(self.lower.tolist()), tuple(self.upper.tolist())))

    # -- vertices -----------------------------------------------------------
    def contains(self, coords):
        c = np.asarray(coords, dtype=np.int64)
        return bool(np.all(c >= self.lower) and np.all(c <= self.upper))

    def vertex(self, coords):
        """Vertex id of the lattice point ``coords``."""
        c = np.asarray(coords, dtype=np.int64)
        if c.shape != (self.d,) or not self.contains(c):
            raise ValueError(f"{tuple(coords)} is not a point of {self!r}")
        return int(np.dot(c - self.lower, self.strides))

    def coords(self, v):
        """Lattice coordinates of vertex ``v`` as a tuple."""
        self._check_vertex(v)
        idx = np.unravel_index(int(v), tuple(self.shape))
        return tuple(int(i) + int(lo) for i, lo in zip(idx, self.lower))

    def axis_vertex(self, k):
        """Vertex id of the axis point ``k e_1``."""
        return self.vertex((k,) + (0,) * (self.d - 1))

    @cached_property
    def vertex_coords(self):
        """``(vertex_count, d)`` array of lattice coordinates."""
        idx = np.indices(tuple(self.shape)).reshape(self.d, -1).T
        out = idx + self.lower
        out.flags.writeable = False
        return out

    def _check_vertex(self, v):
        if not 0 <= int(v) < self.vertex_count:
            raise IndexError(f"vertex id {v} out of range [0, {self.vertex_count})")

    # -- edges --------------------------------------------------------------
    def edge_id(self, v, k):
        """Id of the edge from vertex ``v`` in positive direction ``k``."""
        self._check_vertex(v)
        idx = np.array(np.unravel_index(int(v), tuple(self.shape)), dtype=np.int64)
        if not 0 <= k < self.d or idx[k] + 1 >= self.shape[k]:
            raise ValueError(f"no edge from vertex {v} in direction {k}")
        return int(self.edge_offsets[k] + np.dot(idx, self.rstrides[k]))

    def edge(self, e):
        """Decode edge id ``e`` into ``(vertex, direction)``."""
        self._check_edge(e)
        k = int(np.searchsorted(self.edge_offsets, e, side="right") - 1)
        reduced = self.shape.copy()
        reduced[k] -= 1
        idx = np.unravel_index(int(e - self.edge_offsets[k]), tuple(reduced))
        return int(np.dot(idx, self.strides)), k

    def endpoints(self, e):
        v, k = self.edge(e)
        return v, v + int(self.strides[k])

    def is_axis_edge(self, e):
        self._check_edge(e)
        return bool(self.axis_mask[e])

    @cached_property
    def axis_mask(self):
        mask = np.zeros(self.edge_count, dtype=bool)
        mask[self.axis_edges] = True
        mask.flags.writeable = False
        return mask

    @cached_property
    def edge_endpoints(self):
        """``(edge_count, 2)`` array of endpoint vertex ids, in edge-id order."""
        out = np.empty((self.edge_count, 2), dtype=np.int64)
        for k in range(self.d):
            reduced = self.shape.copy()
            reduced[k] -= 1
            idx = np.indices(tuple(reduced)).reshape(self.d, -1)
            src = self.strides @ idx
            lo, hi = self.edge_offsets[k], self.edge_offsets[k + 1]
            out[lo:hi, 0] = src
            out[lo:hi, 1] = src + self.strides[k]
        out.flags.writeable = False
        return out

    @cached_property
    def edge_direction(self):
        out = np.repeat(np.arange(self.d), np.diff(self.edge_offsets))
        out.flags.writeable = False
        return out

    def _check_edge(self, e):
        if not 0 <= int(e) < self.edge_count:
            raise IndexError(f"edge id {e} out of range [0, {self.edge_count})")

    def kernel_args(self):
        """Geometry arrays in the layout the compiled kernels expect."""
        return (np.ascontiguousarray(self.shape), np.ascontiguousarray(self.strides),
                np.ascontiguousarray(self.edge_offsets), np.ascontiguousarray(self.rstrides),
                np.ascontiguousarray(self.axis_index))


def default_width(n):
    """Default transverse radius ``max(n // 2, 10)``."""
    return max(int(n) // 2, 10)


def build_box(d, n, w=None, *, margin=0, transverse=None):
    """Box ``[-margin, n + margin] x [-w, w]^(d-1)`` with the axis at its centre."""
    if w is None:
        w = default_width(n)
    return LatticeBox(d, n, w, margin=margin, transverse=transverse)


def edge_probability(params, box, e):
    """Opening probability of edge ``e``: ``p_line`` on the axis, ``p`` elsewhere."""
    return params.p_line if box.is_axis_edge(e) else params.p


def edge_probabilities(params, box):
    probs = np.full(box.edge_count, params.p, dtype=np.float64)
    probs[box.axis_edges] = params.p_line
    return probs


@dataclass(eq=False)
class EdgeConfig:
    """One open/closed configuration of the edges of ``box``."""

    box: LatticeBox
    bits: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.shape != (self.box.edge_count,):
            raise ValueError(
                f"bits has shape {self.bits.shape}, box has {self.box.edge_count} edges")

    @classmethod
    def all_open(cls, box):
        return cls(box, np.ones(box.edge_count, dtype=bool))

    @classmethod
    def all_closed(cls, box):
        return cls(box, np.zeros(box.edge_count, dtype=bool))

    def open_edges(self):
        return np.flatnonzero(self.bits)

    def labels(self):
        """Union-find root label of every vertex in the open subgraph."""
        ends = self.box.edge_endpoints[self.bits]
        return _kernels.uf_labels(self.box.vertex_count,
                                  np.ascontiguousarray(ends[:, 0]),
                                  np.ascontiguousarray(ends[:, 1]))


def sample_config(box, params, seed):
    """Sample a configuration; edge ``e`` is open iff its stream uniform is below its probability.

    Configurations with the same seed are coupled across parameters: raising
    ``p_line`` can only open axis edges and leaves every other edge unchanged.
    """
    seed = as_seed(seed)
    if params.d != box.d:
        raise ValueError(f"params are for d={params.d}, box has d={box.d}")
    u = uniforms(seed, box.edge_count)
    return EdgeConfig(box, u < edge_probabilities(params, box), seed)


@dataclass(eq=False)
class Cluster:
    """Open cluster: sorted vertex ids and sorted open edge ids inside ``box``."""

    box: LatticeBox
    vertices: np.ndarray
    edges: np.ndarray

    @property
    def size(self):
        return len(self.vertices)

    def coords(self):
        return self.box.vertex_coords[self.vertices]

    def __contains__(self, v):
        i = np.searchsorted(self.vertices, v)
        return bool(i < len(self.vertices) and self.vertices[i] == v)

    @property
    def span(self):
        """Minimal and maximal first coordinate over the cluster."""
        x = self.coords()[:, 0]
        return int(x.min()), int(x.max())


def _check_vertex_id(box, v):
    if not 0 <= int(v) < box.vertex_count:
        raise IndexError(f"vertex id {v} out of range [0, {box.vertex_count})")


def connected(config, x, y):
    """Whether vertices ``x`` and ``y`` lie in the same open cluster."""
    _check_vertex_id(config.box, x)
    _check_vertex_id(config.box, y)
    if x == y:
        return True
    lab = config.labels()
    return bool(lab[x] == lab[y])


def cluster_of(config, x):
    """Open cluster of vertex ``x``."""
    _check_vertex_id(config.box, x)
    lab = config.labels()
    verts = np.flatnonzero(lab == lab[x])
    ends = config.box.edge_endpoints
    edges = np.flatnonzero(config.bits & (lab[ends[:, 0]] == lab[x]))
    return Cluster(config.box, verts, edges)
