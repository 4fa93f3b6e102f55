"""Exact connection probabilities on small boxes and narrow strips.

Two independent routes:

* exhaustive enumeration of all ``2**E`` configurations of a box with at
  most ``ENUMERATION_CAP`` edges.  Connecting configurations are counted by
  (open bulk edges, open axis edges), so the probability becomes an integer
  polynomial in ``(p, p_line)`` that can be re-evaluated at any parameter
  point, in floating point or exactly in rationals;
* a column-by-column transfer sweep over connectivity partitions of a
  ``d = 2`` strip ``[0, n] x [-w, w]``.

The identity checks built on top (change of measure, Russo's formula and
its integrated ratio form) raise :class:`IdentityCheckError` when the two
sides disagree beyond the requested tolerance.
"""

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import integrate

from . import _kernels
from .lattice import PercParams, build_box

ENUMERATION_CAP = 24
STRIP_WIDTH_CAP = 9


class IdentityCheckError(AssertionError):
    """Two exact evaluations of the same quantity disagree."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(eq=False)
class EnumerationTables:
    """Counts of configurations of ``box`` relevant to the event ``x <-> y``.

    ``conn[kb, ka]`` counts connecting configurations with ``kb`` open bulk
    and ``ka`` open axis edges.  ``com[kb, ka, a, b]`` refines it by the
    number ``a`` of open axis edges of the cluster and the number ``b`` of
    closed axis edges touching it.  ``piv_all`` and ``piv_conn`` hold summed
    numbers of pivotal axis edges, over all configurations and over the
    connecting ones.
    """

    n_bulk: int
    n_axis: int
    conn: np.ndarray
    com: np.ndarray
    piv_all: np.ndarray
    piv_conn: np.ndarray


def _check_enumerable(box):
    if box.edge_count > ENUMERATION_CAP:
        raise ValueError(
            f"box has {box.edge_count} edges; enumeration is capped at {ENUMERATION_CAP}")


@lru_cache(maxsize=64)
def enumeration_tables(box, x, y):
    """Run the exhaustive pass for ``box`` and the pair ``(x, y)`` (cached)."""
    _check_enumerable(box)
    ends = np.ascontiguousarray(box.edge_endpoints)
    axis_bits = 0
    for e in box.axis_edges:
        axis_bits |= 1 << int(e)
    conn_bits, conn, com = _kernels.enumerate_tables(box.vertex_count, ends, axis_bits,
                                                     int(x), int(y))
    piv_all, piv_conn = _kernels.pivotal_tables(conn_bits, box.edge_count, axis_bits)
    n_axis = len(box.axis_edges)
    return EnumerationTables(box.edge_count - n_axis, n_axis, conn, com, piv_all, piv_conn)


def _weights(n, q):
    """``q**k (1-q)**(n-k)`` for k = 0..n, in floating point."""
    k = np.arange(n + 1)
    return np.array([math.pow(q, i) * math.pow(1.0 - q, n - i) for i in k])


def _poly(table, n_bulk, n_axis, p, p_line):
    wb = _weights(n_bulk, p)
    wa = _weights(n_axis, p_line)
    kb, ka = np.nonzero(table)
    return math.fsum(float(table[i, j]) * wb[i] * wa[j] for i, j in zip(kb, ka))


def _poly_exact(table, n_bulk, n_axis, p, p_line):
    p, p_line = Fraction(p), Fraction(p_line)
    total = Fraction(0)
    for i, j in zip(*np.nonzero(table)):
        total += (int(table[i, j]) * p**int(i) * (1 - p)**(n_bulk - int(i))
                  * p_line**int(j) * (1 - p_line)**(n_axis - int(j)))
    return total


def enumerate_connectivity(box, params, x, y):
    """Exact ``P_{p,p'}(x <-> y)`` inside ``box`` by full enumeration."""
    if params.d != box.d:
        raise ValueError("dimension mismatch between params and box")
    t = enumeration_tables(box, int(x), int(y))
    return _poly(t.conn, t.n_bulk, t.n_axis, params.p, params.p_line)


def connectivity_fraction(box, p, p_line, x, y):
    """Same as :func:`enumerate_connectivity`, as an exact rational in ``p, p_line``."""
    t = enumeration_tables(box, int(x), int(y))
    return _poly_exact(t.conn, t.n_bulk, t.n_axis, p, p_line)


def pivotal_sum(box, params, x, y):
    """``sum_{e on the axis} P(e is pivotal for x <-> y)``."""
    t = enumeration_tables(box, int(x), int(y))
    return _poly(t.piv_all, t.n_bulk, t.n_axis, params.p, params.p_line)


def mean_pivotals_given_connection(box, params, x, y):
    """``E[#axis pivotals | x <-> y]``."""
    t = enumeration_tables(box, int(x), int(y))
    num = _poly(t.piv_conn, t.n_bulk, t.n_axis, params.p, params.p_line)
    return num / _poly(t.conn, t.n_bulk, t.n_axis, params.p, params.p_line)


# -- strip transfer sweep ------------------------------------------------------

@dataclass(frozen=True)
class StripState:
    """Connectivity partition of one strip column plus the block joined to the origin.

    ``labels[t]`` is the block of row ``t`` (rows ordered bottom to top);
    blocks are numbered by first appearance, so equal partitions have equal
    labels.  ``marked`` is the block connected to the origin.
    """

    labels: tuple
    marked: int

    @classmethod
    def canonical(cls, labels, marked):
        relabel = {}
        out = []
        for lab in labels:
            if lab not in relabel:
                relabel[lab] = len(relabel)
            out.append(relabel[lab])
        return cls(tuple(out), relabel[marked])

    def blocks(self):
        groups = {}
        for t, lab in enumerate(self.labels):
            groups.setdefault(lab, []).append(t)
        return list(groups.values())


def _merge(labels, marked, a, b):
    la, lb = labels[a], labels[b]
    if la == lb:
        return labels, marked
    new = tuple(la if lab == lb else lab for lab in labels)
    return new, (la if marked == lb else marked)


def _apply_verticals(states, width, p):
    for t in range(width - 1):
        nxt = {}
        for (labels, marked), w in states.items():
            key = (labels, marked)
            nxt[key] = nxt.get(key, 0.0) + w * (1.0 - p)
            merged = StripState.canonical(*_merge(labels, marked, t, t + 1))
            key = (merged.labels, merged.marked)
            nxt[key] = nxt.get(key, 0.0) + w * p
        states = nxt
    return states


def strip_transfer_connectivity(w, n, params, *, return_series=False):
    """Exact ``P(0 <-> n e_1)`` on the strip ``[0, n] x [-w, w]`` (d = 2, free boundary).

    With ``return_series=True`` the values for every length ``1..n`` are
    returned; each length uses its own strip, obtained by closing the sweep
    at that column.
    """
    if params.d != 2:
        raise ValueError("the strip sweep is two-dimensional")
    width = 2 * w + 1
    if width > STRIP_WIDTH_CAP:
        raise ValueError(f"strip width {width} exceeds the cap {STRIP_WIDTH_CAP}")
    if n < 1:
        raise ValueError("n must be >= 1")
    axis = w
    start = StripState.canonical(tuple(range(width)), axis)
    states = _apply_verticals({(start.labels, start.marked): 1.0}, width, params.p)
    series = []
    for _ in range(n):
        for t in range(width):
            q = params.p_line if t == axis else params.p
            nxt = {}
            fresh = width
            for (labels, marked), wgt in states.items():
                nxt[(labels, marked)] = nxt.get((labels, marked), 0.0) + wgt * q
                old = labels[t]
                closed = labels[:t] + (fresh,) + labels[t + 1:]
                if old == marked and old not in closed:
                    continue
                s = StripState.canonical(closed, marked)
                nxt[(s.labels, s.marked)] = nxt.get((s.labels, s.marked), 0.0) + wgt * (1 - q)
            states = nxt
        states = _apply_verticals(states, width, params.p)
        if return_series:
            series.append(math.fsum(v for (lab, m), v in states.items() if lab[axis] == m))
    if return_series:
        return np.array(series)
    return math.fsum(v for (lab, m), v in states.items() if lab[axis] == m)


# -- identity checks -------------------------------------------------------------

def _interaction_weights(t, p, p_line):
    gain = p_line / p
    loss = (1.0 - p_line) / (1.0 - p)
    wb = _weights(t.n_bulk, p)
    wa = _weights(t.n_axis, p)
    terms = []
    for kb, ka, a, b in zip(*np.nonzero(t.com)):
        terms.append(float(t.com[kb, ka, a, b]) * wb[kb] * wa[ka]
                     * math.pow(gain, int(a)) * math.pow(loss, int(b)))
    return math.fsum(terms)


def change_of_measure_check(box, p, p_line, x, y, tol=1e-12):
    """Both sides of ``P_{p,p'}(x<->y) = E_p[exp(I(C)); x<->y]``.

    ``I(C) = |C n L| log(p'/p) + |dC n L| log((1-p')/(1-p))`` where ``dC``
    counts closed axis edges of the box with an endpoint in the cluster.
    """
    if not (0 < p < 1 and 0 < p_line < 1):
        raise ValueError("the reweighting needs 0 < p, p_line < 1")
    t = enumeration_tables(box, int(x), int(y))
    lhs = _poly(t.conn, t.n_bulk, t.n_axis, p, p_line)
    rhs = _interaction_weights(t, p, p_line)
    if abs(lhs - rhs) > tol:
        raise IdentityCheckError("change of measure failed", abs(lhs - rhs))
    return lhs, rhs


class RussoCheck(NamedTuple):
    derivative: float
    pivotal_sum: float
    richardson: float


def _central_difference(box, p, p_line, x, y, h):
    h = Fraction(h)
    up = connectivity_fraction(box, p, Fraction(p_line) + h, x, y)
    down = connectivity_fraction(box, p, Fraction(p_line) - h, x, y)
    return (up - down) / (2 * h)


def russo_derivative_check(box, params, x, y, h=1e-4, tol=1e-7):
    """Central difference in ``p_line`` against the summed pivotal probabilities.

    The differences are evaluated in exact rational arithmetic, so the only
    error left is the O(h^2) truncation.  ``richardson`` is
    ``(D(2h) - D(h)) / (D(h) - D(h/2))``, which tends to 4; it is ``nan``
    when the probability is at most quadratic in ``p_line``.
    """
    if not (0 < params.p_line - h and params.p_line + h < 1):
        raise ValueError("p_line +- h must stay inside (0, 1)")
    d1 = _central_difference(box, params.p, params.p_line, x, y, h)
    d2 = _central_difference(box, params.p, params.p_line, x, y, 2 * h)
    d_half = _central_difference(box, params.p, params.p_line, x, y, h / 2)
    piv = pivotal_sum(box, params, x, y)
    denom = d1 - d_half
    ratio = float((d2 - d1) / denom) if denom != 0 else math.nan
    fd = float(d1)
    if abs(fd - piv) > tol:
        raise IdentityCheckError("Russo formula failed", abs(fd - piv))
    return RussoCheck(fd, piv, ratio)


def pivotal_ratio_check(box, p, p1, p2, x, y, rtol=1e-8):
    """``P_{p,p2}/P_{p,p1}`` directly and as ``exp int (1/s) E_{p,s}[#Piv | x<->y] ds``."""
    if not 0 < p1 <= p2 < 1:
        raise ValueError("need 0 < p1 <= p2 < 1")
    d = box.d
    direct = (enumerate_connectivity(box, PercParams(d, p, p2), x, y)
              / enumerate_connectivity(box, PercParams(d, p, p1), x, y))
    if p1 == p2:
        return direct, 1.0

    def integrand(s):
        return mean_pivotals_given_connection(box, PercParams(d, p, s), x, y) / s

    value, err = integrate.quad(integrand, p1, p2, epsabs=0.0, epsrel=1e-13, limit=200)
    if err > 1e-10 * max(abs(value), 1.0):
        raise IdentityCheckError("quadrature did not converge", err)
    via_integral = math.exp(value)
    resid = abs(direct - via_integral) / direct
    if resid > rtol:
        raise IdentityCheckError("integrated Russo ratio failed", resid)
    return direct, via_integral


def axis_pair(box, n=None):
    """Vertex ids of the origin and ``n e_1`` (default: the box's ``n``)."""
    return box.origin, box.axis_vertex(box.n if n is None else n)


def strip_box(w, n):
    """The enumeration box matching ``strip_transfer_connectivity(w, n, ...)``."""
    return build_box(2, n, w)
