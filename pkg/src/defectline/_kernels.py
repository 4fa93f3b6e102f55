"""Compiled inner loops.  Callers pass geometry as plain arrays (see LatticeBox.kernel_args)."""

import numpy as np
from numba import njit

from .rng import GAMMA, mix64, stream_uniform


@njit(inline="always", cache=True)
def _find(parent, a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


@njit(cache=True)
def uf_labels(nv, src, dst):
    """Root label per vertex after uniting every (src[i], dst[i]) pair."""
    parent = np.arange(nv)
    size = np.ones(nv, np.int64)
    for i in range(src.shape[0]):
        a = _find(parent, src[i])
        b = _find(parent, dst[i])
        if a != b:
            if size[a] < size[b]:
                a, b = b, a
            parent[b] = a
            size[a] += size[b]
    out = np.empty(nv, np.int64)
    for v in range(nv):
        out[v] = _find(parent, v)
    return out


@njit(cache=True)
def explore(shape, strides, offsets, rstrides, axis_index, p, p_line, key,
            origin, stamp, queue, mark, coords):
    """Breadth-first growth of the open cluster of ``origin``.

    Edge states are drawn lazily from the stream at ``key`` so the result is
    the cluster of ``origin`` in the configuration that ``sample_config`` would
    produce with seed ``key``.  Returns the cluster size; its vertices are
    ``queue[:size]`` and ``stamp[v] == mark`` marks membership.
    """
    d = shape.shape[0]
    stamp[origin] = mark
    queue[0] = origin
    head = 0
    tail = 1
    while head < tail:
        v = queue[head]
        head += 1
        rem = v
        for k in range(d - 1, -1, -1):
            coords[k] = rem % shape[k]
            rem //= shape[k]
        on_axis = True
        for k in range(1, d):
            if coords[k] != axis_index[k]:
                on_axis = False
        for k in range(d):
            prob = p_line if (k == 0 and on_axis) else p
            if coords[k] + 1 < shape[k]:
                u = v + strides[k]
                if stamp[u] != mark:
                    eid = offsets[k]
                    for j in range(d):
                        eid += coords[j] * rstrides[k, j]
                    if stream_uniform(key, eid) < prob:
                        stamp[u] = mark
                        queue[tail] = u
                        tail += 1
            if coords[k] > 0:
                u = v - strides[k]
                if stamp[u] != mark:
                    eid = offsets[k] - rstrides[k, k]
                    for j in range(d):
                        eid += coords[j] * rstrides[k, j]
                    if stream_uniform(key, eid) < prob:
                        stamp[u] = mark
                        queue[tail] = u
                        tail += 1
    return tail


@njit(cache=True)
def connectivity_block(shape, strides, offsets, rstrides, axis_index, p, p_line,
                       seed, r0, r1, origin, targets):
    """Hit counts of ``origin <-> targets[t]`` over replicas r0..r1-1.

    Returns per-target hits, the matrix of joint hits and the summed
    cluster sizes.
    """
    nv = 1
    for k in range(shape.shape[0]):
        nv *= shape[k]
    nt = targets.shape[0]
    stamp = np.zeros(nv, np.int64)
    queue = np.empty(nv, np.int64)
    coords = np.empty(shape.shape[0], np.int64)
    hits = np.zeros(nt, np.int64)
    pairs = np.zeros((nt, nt), np.int64)
    hit_idx = np.empty(nt, np.int64)
    sizes = 0
    base = np.uint64(seed)
    for r in range(r0, r1):
        key = mix64(base + np.uint64(r + 1) * GAMMA)
        mark = r - r0 + 1
        sizes += explore(shape, strides, offsets, rstrides, axis_index, p, p_line,
                         key, origin, stamp, queue, mark, coords)
        m = 0
        for t in range(nt):
            if stamp[targets[t]] == mark:
                hits[t] += 1
                hit_idx[m] = t
                m += 1
        for a in range(m):
            for b in range(m):
                pairs[hit_idx[a], hit_idx[b]] += 1
    return hits, pairs, sizes


@njit(cache=True)
def accepted_replicas(shape, strides, offsets, rstrides, axis_index, p, p_line,
                      seed, r0, r1, origin, target, max_accept):
    """Replica indices in [r0, r1) whose cluster of ``origin`` contains ``target``."""
    nv = 1
    for k in range(shape.shape[0]):
        nv *= shape[k]
    stamp = np.zeros(nv, np.int64)
    queue = np.empty(nv, np.int64)
    coords = np.empty(shape.shape[0], np.int64)
    out = np.empty(max_accept, np.int64)
    m = 0
    base = np.uint64(seed)
    r = r0
    while r < r1 and m < max_accept:
        key = mix64(base + np.uint64(r + 1) * GAMMA)
        explore(shape, strides, offsets, rstrides, axis_index, p, p_line,
                key, origin, stamp, queue, r - r0 + 1, coords)
        if stamp[target] == r - r0 + 1:
            out[m] = r
            m += 1
        r += 1
    return out[:m], r


@njit(inline="always", cache=True)
def _popcount(x):
    c = 0
    while x:
        x &= x - 1
        c += 1
    return c


@njit(cache=True)
def enumerate_tables(nv, ends, axis_bits, x, y):
    """Exhaustive pass over all 2**E configurations of a small box.

    Returns
    -------
    conn : bool array, indexed by configuration mask
    conn_table : counts of connecting masks by (open bulk, open axis)
    com_table : counts of connecting masks by (open bulk, open axis,
        open axis edges in C(x), closed axis edges touching C(x))
    """
    n_edges = ends.shape[0]
    n_axis = _popcount(axis_bits)
    n_bulk = n_edges - n_axis
    total = 1 << n_edges
    conn = np.zeros(total, np.bool_)
    conn_table = np.zeros((n_bulk + 1, n_axis + 1), np.int64)
    com_table = np.zeros((n_bulk + 1, n_axis + 1, n_axis + 1, n_axis + 1), np.int64)
    parent = np.empty(nv, np.int64)
    for mask in range(total):
        for v in range(nv):
            parent[v] = v
        for i in range(n_edges):
            if (mask >> i) & 1:
                a = _find(parent, ends[i, 0])
                b = _find(parent, ends[i, 1])
                if a != b:
                    parent[b] = a
        rx = _find(parent, x)
        if rx != _find(parent, y):
            continue
        conn[mask] = True
        ka = _popcount(mask & axis_bits)
        kb = _popcount(mask) - ka
        conn_table[kb, ka] += 1
        inside = 0
        boundary = 0
        for i in range(n_edges):
            if (axis_bits >> i) & 1:
                ta = _find(parent, ends[i, 0]) == rx
                tb = _find(parent, ends[i, 1]) == rx
                if (mask >> i) & 1:
                    if ta:
                        inside += 1
                elif ta or tb:
                    boundary += 1
        com_table[kb, ka, inside, boundary] += 1
    return conn, conn_table, com_table


@njit(cache=True)
def pivotal_tables(conn, n_edges, axis_bits):
    """Tables of summed axis-pivotal counts by (open bulk, open axis).

    ``piv_all`` sums #Piv over every configuration, ``piv_conn`` only over
    configurations in which the connection occurs.
    """
    n_axis = _popcount(axis_bits)
    n_bulk = n_edges - n_axis
    piv_all = np.zeros((n_bulk + 1, n_axis + 1), np.int64)
    piv_conn = np.zeros((n_bulk + 1, n_axis + 1), np.int64)
    for mask in range(conn.shape[0]):
        npiv = 0
        for i in range(n_edges):
            if (axis_bits >> i) & 1:
                bit = 1 << i
                if conn[mask | bit] != conn[mask & ~bit]:
                    npiv += 1
        if npiv == 0:
            continue
        ka = _popcount(mask & axis_bits)
        kb = _popcount(mask) - ka
        piv_all[kb, ka] += npiv
        if conn[mask]:
            piv_conn[kb, ka] += npiv
    return piv_all, piv_conn


@njit(cache=True)
def first_return_from_returns(u):
    """First-return probabilities from return probabilities, u_n = sum_k f_k u_{n-k}.

    Works on any index grid with u[0] = 1 (e.g. even times only).
    """
    m = u.shape[0]
    f = np.zeros(m)
    for n in range(1, m):
        s = 0.0
        c = 0.0
        for k in range(1, n):
            t = f[k] * u[n - k] - c
            s2 = s + t
            c = (s2 - s) - t
            s = s2
        f[n] = u[n] - s
    return f


@njit(cache=True)
def renewal_convolution(b, horizon):
    """a_0 = 1, a_n = sum_{k<n} a_k b_{n-k}, compensated summation."""
    a = np.zeros(horizon + 1)
    a[0] = 1.0
    kmax = b.shape[0] - 1
    for n in range(1, horizon + 1):
        s = 0.0
        c = 0.0
        lo = n - kmax if n - kmax > 0 else 0
        for k in range(lo, n):
            t = a[k] * b[n - k] - c
            s2 = s + t
            c = (s2 - s) - t
            s = s2
        a[n] = s
    return a


@njit(cache=True)
def srw_local_times(d, n_steps, seed, r0, r1):
    """Local time at 0 over steps 1..n_steps and final-position flag, per walk."""
    m = r1 - r0
    local = np.zeros(m, np.int64)
    home = np.zeros(m, np.bool_)
    base = np.uint64(seed)
    for r in range(r0, r1):
        key = mix64(base + np.uint64(r + 1) * GAMMA)
        x = 0
        y = 0
        visits = 0
        for t in range(n_steps):
            u = stream_uniform(key, t)
            if d == 1:
                x += 1 if u < 0.5 else -1
            else:
                j = int(u * 4.0)
                if j == 0:
                    x += 1
                elif j == 1:
                    x -= 1
                elif j == 2:
                    y += 1
                else:
                    y -= 1
            if x == 0 and y == 0:
                visits += 1
        local[r - r0] = visits
        home[r - r0] = x == 0 and y == 0
    return local, home


@njit(cache=True)
def pinned_renewal_counts(cdf, support, horizon, seed, r0, r1):
    """Renewal counts up to ``horizon`` for inter-arrival law given by ``cdf``.

    Each replica draws arrivals until it reaches or passes ``horizon``.
    Returns the count and whether ``horizon`` itself was a renewal epoch.
    """
    m = r1 - r0
    counts = np.zeros(m, np.int64)
    pinned = np.zeros(m, np.bool_)
    base = np.uint64(seed)
    for r in range(r0, r1):
        key = mix64(base + np.uint64(r + 1) * GAMMA)
        pos = 0
        c = 0
        t = 0
        while pos < horizon:
            u = stream_uniform(key, t)
            t += 1
            j = np.searchsorted(cdf, u, side="right")
            if j >= support.shape[0]:
                j = support.shape[0] - 1
            pos += support[j]
            if pos <= horizon:
                c += 1
        counts[r - r0] = c
        pinned[r - r0] = pos == horizon
    return counts, pinned


@njit(cache=True)
def renewal_pair(b, horizon):
    """Renewal sequence ``a`` and its local-time companion ``w``.

    a_n = sum_k b_k a_{n-k},  w_n = sum_k b_k (w_{n-k} + a_{n-k}),  a_0 = 1, w_0 = 0.
    """
    a = np.zeros(horizon + 1)
    w = np.zeros(horizon + 1)
    a[0] = 1.0
    kmax = b.shape[0] - 1
    for n in range(1, horizon + 1):
        sa = 0.0
        ca = 0.0
        sw = 0.0
        cw = 0.0
        lo = n - kmax if n - kmax > 0 else 0
        for k in range(lo, n):
            bk = b[n - k]
            t = bk * a[k] - ca
            s2 = sa + t
            ca = (s2 - sa) - t
            sa = s2
            t = bk * (w[k] + a[k]) - cw
            s2 = sw + t
            cw = (s2 - sw) - t
            sw = s2
        a[n] = sa
        w[n] = sw
    return a, w
