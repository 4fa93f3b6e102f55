"""Monte Carlo two-point functions and the extraction of decay rates.

All simulations go through the compiled lazy cluster explorer: replica
``r`` of a run with master seed ``s`` grows the cluster of the origin in
the configuration ``sample_config(box, params, replica_seed(s, r))``.  Only
the edges the exploration touches are drawn, which makes a replica cost
proportional to the cluster size rather than to the box volume, and the
configurations at different ``p_line`` share their uniforms (common random
numbers), so connection indicators are monotone in ``p_line`` sample by
sample.

Replicas are processed in fixed blocks of ``BLOCK`` consecutive indices.
Blocks only return integer counts, so the pooled result does not depend on
the number of workers or on the order in which blocks finish.
"""

import csv
import io
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernels
from .estimate import Estimate
from .lattice import PercParams, build_box, default_width

BLOCK = 1 << 16
WORKERS_ENV = "DEFECTLINE_WORKERS"
CONNECTIVITY_HEADER = ("p", "p_line", "n", "replicas", "hits", "phat", "stderr", "seed")
SCAN_HEADER = ("p_line", "xi_hat", "xi_se", "kappa_hat", "kappa_se")


def resolve_workers(workers=None):
    """Explicit value, else ``$DEFECTLINE_WORKERS``, else 1."""
    if workers is None:
        workers = os.environ.get(WORKERS_ENV, 1)
    workers = int(workers)
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    return workers


def _blocks(replicas):
    return [(r0, min(r0 + BLOCK, replicas)) for r0 in range(0, replicas, BLOCK)]


def _series_block(task):
    geometry, p, p_line, seed, origin, targets, r0, r1 = task
    return _kernels.connectivity_block(*geometry, p, p_line, np.uint64(seed), r0, r1,
                                       origin, targets)


def _run_series(box, p, p_line, seed, origin, targets, replicas, workers):
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    targets = np.ascontiguousarray(targets, dtype=np.int64)
    geometry = box.kernel_args()
    tasks = [(geometry, float(p), float(p_line), int(seed), int(origin), targets, r0, r1)
             for r0, r1 in _blocks(replicas)]
    workers = min(resolve_workers(workers), len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_series_block, tasks))
    else:
        parts = [_series_block(t) for t in tasks]
    hits = sum(h for h, _, _ in parts)
    pairs = sum(pr for _, pr, _ in parts)
    sizes = sum(int(s) for _, _, s in parts)
    return np.asarray(hits), np.asarray(pairs), sizes


def mc_connectivity(box, params, x, y, replicas, seed, workers=None):
    """Frequency estimate of ``P(x <-> y)`` inside ``box`` over ``replicas`` replicas."""
    if params.d != box.d:
        raise ValueError("dimension mismatch between params and box")
    hits, _, _ = _run_series(box, params.p, params.p_line, seed, x, [y], replicas, workers)
    return Estimate.from_hits(int(hits[0]), replicas, seed)


def connected_replicas(box, params, x, y, replicas, seed):
    """Sorted indices ``r < replicas`` whose configuration connects ``x`` to ``y``.

    Replica ``r`` is the same configuration for every ``(p, p')``, so these
    sets are nested in ``p'`` under the monotone coupling.
    """
    if params.d != box.d:
        raise ValueError("dimension mismatch between params and box")
    idx, _ = _kernels.accepted_replicas(*box.kernel_args(), float(params.p),
                                        float(params.p_line), np.uint64(seed), 0, int(replicas),
                                        int(x), int(y), int(replicas))
    return idx


@dataclass
class ConnectivitySeries:
    """Joint estimates of ``P(0 <-> n e_1)`` for several ``n`` from one set of replicas.

    ``pairs[i, j]`` counts replicas in which the origin reaches both targets
    ``i`` and ``j``; it gives the covariance of the estimates, which are
    strongly correlated because they share clusters.
    """

    params: PercParams
    ns: np.ndarray
    replicas: int
    seed: int
    hits: np.ndarray
    pairs: np.ndarray
    mean_cluster_size: float

    @property
    def phat(self):
        return self.hits / self.replicas

    def estimates(self):
        return [(int(n), Estimate.from_hits(int(h), self.replicas, self.seed))
                for n, h in zip(self.ns, self.hits)]

    def covariance(self):
        """Covariance matrix of the estimates ``phat``."""
        ph = self.phat
        return (self.pairs / self.replicas - np.outer(ph, ph)) / self.replicas

    def rows(self):
        for n, est in self.estimates():
            yield (self.params.p, self.params.p_line, n, self.replicas,
                   int(round(est.total)), est.value, est.stderr, self.seed)

    def to_csv(self, fh=None, header=True):
        return write_csv(fh, CONNECTIVITY_HEADER if header else None, self.rows())


def connectivity_series(params, ns, replicas, seed, *, w=None, margin=None, workers=None):
    """Estimate ``P(0 <-> n e_1)`` for every ``n`` in ``ns`` from one box.

    The box spans ``[-margin, n_max + margin]`` longitudinally and
    ``[-w, w]`` transversally, with ``w = default_width(n_max)`` and
    ``margin = w`` by default, so no target sits at a box face.
    """
    ns = np.array(sorted({int(n) for n in ns}), dtype=np.int64)
    if ns.size == 0 or ns[0] < 1:
        raise ValueError("ns must be a nonempty set of positive integers")
    n_max = int(ns[-1])
    w = default_width(n_max) if w is None else int(w)
    margin = w if margin is None else int(margin)
    box = build_box(params.d, n_max, w, margin=margin)
    targets = [box.axis_vertex(int(n)) for n in ns]
    hits, pairs, sizes = _run_series(box, params.p, params.p_line, seed, box.origin,
                                     targets, replicas, workers)
    return ConnectivitySeries(params, ns, int(replicas), int(seed), hits, pairs,
                              sizes / replicas)


# -- fitting -------------------------------------------------------------------

@dataclass
class XiFit:
    """Weighted fit of ``-log p_n = xi n + kappa log n + c``."""

    xi_hat: float
    kappa_hat: float
    const: float
    cov: np.ndarray
    ns: np.ndarray
    estimates: list
    residuals: np.ndarray
    chi2: float
    dropped: list = field(default_factory=list)

    @property
    def xi_se(self):
        return math.sqrt(max(self.cov[0, 0], 0.0))

    @property
    def kappa_se(self):
        return math.sqrt(max(self.cov[1, 1], 0.0))

    @property
    def n_range(self):
        return int(self.ns[0]), int(self.ns[-1])

    def kappa_interval(self, level=0.95):
        z = stats.norm.ppf(0.5 + level / 2)
        return self.kappa_hat - z * self.kappa_se, self.kappa_hat + z * self.kappa_se


def fit_xi(series, covariance=None):
    """Fit ``(xi, kappa)`` to ``[(n, Estimate), ...]``.

    Points with a zero estimate are dropped with a warning; at least four
    distinct ``n`` must survive.  Weights are the inverse delta-method
    variances of ``log p_n``; if any point is noiseless the fit falls back
    to ordinary least squares.  ``covariance`` (the covariance matrix of the
    estimates, in input order) turns the reported parameter covariance into
    the sandwich form that accounts for correlated points.
    """
    series = list(series)
    ns = np.array([int(n) for n, _ in series])
    vals = np.array([e.value for _, e in series], dtype=float)
    ses = np.array([e.stderr for _, e in series], dtype=float)
    keep = vals > 0
    dropped = [int(n) for n in ns[~keep]]
    if dropped:
        warnings.warn(f"dropping points with zero estimate at n = {dropped}", RuntimeWarning,
                      stacklevel=2)
    if len(set(ns[keep].tolist())) < 4:
        raise ValueError("fit_xi needs at least 4 distinct n with positive estimates")
    n = ns[keep].astype(float)
    y = -np.log(vals[keep])
    sig = ses[keep] / vals[keep]
    X = np.column_stack([n, np.log(n), np.ones_like(n)])
    wt = np.ones_like(n) if np.any(sig == 0) else 1.0 / sig**2
    sw = np.sqrt(wt)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    # beta = A y with A = (X'WX)^-1 X'W
    A = np.linalg.pinv(X * sw[:, None]) * sw[None, :]
    if covariance is not None:
        cov_p = np.asarray(covariance, dtype=float)[np.ix_(keep, keep)]
        cov_y = cov_p / np.outer(vals[keep], vals[keep])
    else:
        cov_y = np.diag(sig**2)
    cov = A @ cov_y @ A.T
    resid = y - X @ beta
    chi2 = float(np.sum(wt * resid**2)) if np.all(sig > 0) else 0.0
    est = [(int(k), e) for (k, e), ok in zip(series, keep) if ok]
    return XiFit(float(beta[0]), float(beta[1]), float(beta[2]), cov, ns[keep], est,
                 resid, chi2, dropped)


def fit_series(result):
    """:func:`fit_xi` on a :class:`ConnectivitySeries`, with its joint covariance."""
    return fit_xi(result.estimates(), covariance=result.covariance())


def local_xi(p_n, p_m, gap):
    """Two-point estimate ``(log p_n - log p_m) / (m - n)``.

    The error propagation treats the two inputs as independent.
    """
    if gap <= 0:
        raise ValueError("need m > n")
    if p_n.value <= 0 or p_m.value <= 0:
        raise ValueError("local_xi needs positive estimates")
    value = (math.log(p_n.value) - math.log(p_m.value)) / gap
    se = math.hypot(p_n.stderr / p_n.value, p_m.stderr / p_m.value) / gap
    return Estimate.derived(value, se, min(p_n.n_samples, p_m.n_samples),
                            min(p_n.seed, p_m.seed))


# -- scans -----------------------------------------------------------------------

@dataclass
class ScanPoint:
    p_line: float
    series: ConnectivitySeries | None
    fit: XiFit | None
    error: str | None = None


@dataclass
class XiScan:
    p: float
    d: int
    points: list

    def rows(self):
        for pt in self.points:
            if pt.fit is None:
                yield (pt.p_line, math.nan, math.nan, math.nan, math.nan)
            else:
                f = pt.fit
                yield (pt.p_line, f.xi_hat, f.xi_se, f.kappa_hat, f.kappa_se)

    def to_csv(self, fh=None):
        return write_csv(fh, SCAN_HEADER, self.rows())

    def connectivity_csv(self, fh=None):
        rows = [r for pt in self.points if pt.series is not None for r in pt.series.rows()]
        return write_csv(fh, CONNECTIVITY_HEADER, rows)

    def point(self, p_line):
        for pt in self.points:
            if math.isclose(pt.p_line, p_line, rel_tol=0, abs_tol=1e-12):
                return pt
        raise KeyError(p_line)


def xi_scan(p, p_line_grid, ns, replicas, seed, *, d=2, w=None, margin=None, workers=None):
    """One fit per ``p_line`` in the grid, all from the same replica seeds."""
    points = []
    for pl in p_line_grid:
        pl = float(pl)
        try:
            params = PercParams(d, p, pl)
            res = connectivity_series(params, ns, replicas, seed, w=w, margin=margin,
                                      workers=workers)
        except Exception as exc:  # one bad grid point must not stop the scan
            points.append(ScanPoint(pl, None, None, repr(exc)))
            continue
        try:
            with warnings.catch_warnings(record=True):
                warnings.simplefilter("always")
                fit = fit_series(res)
            points.append(ScanPoint(pl, res, fit))
        except Exception as exc:
            points.append(ScanPoint(pl, res, None, repr(exc)))
    return XiScan(float(p), int(d), points)


@dataclass
class GapCurve:
    """``xi_p - xi_{p,p'}`` along a grid of ``p' > p``.

    ``gap_se`` adds the two fit variances, which overstates the error of a
    difference of positively correlated (common random number) estimates.
    Points with ``gap < censor_sigma * gap_se`` are censored.
    """

    p: float
    d: int
    delta: np.ndarray
    gap: np.ndarray
    gap_se: np.ndarray
    censored: np.ndarray
    slope: float
    slope_se: float
    scan: XiScan

    def rows(self):
        for x, g, s, c in zip(self.delta, self.gap, self.gap_se, self.censored):
            yield (self.p + x, x, g, s, bool(c))


def _weighted_line(x, y, se):
    coef, cov = np.polyfit(x, y, 1, w=1.0 / se, cov="unscaled")
    return float(coef[0]), math.sqrt(float(cov[0, 0]))


def gap_curve(p, p_line_grid, ns, replicas, seed, *, d=2, w=None, margin=None, workers=None,
              censor_sigma=2.0):
    """Gap estimates with the fitted exponent of their approach to zero.

    d = 2: slope of ``log gap`` against ``log(p' - p)``.
    d = 3: slope of ``log gap`` against ``1 / (p' - p)``.
    Only uncensored points enter the fit; ``slope`` is nan with fewer than two.
    """
    if d not in (2, 3):
        raise ValueError("gap_curve supports d = 2 and d = 3")
    grid = [float(x) for x in p_line_grid]
    if any(x < p for x in grid):
        raise ValueError("gap grid must lie at or above p")
    scan = xi_scan(p, [p] + grid, ns, replicas, seed, d=d, w=w, margin=margin,
                   workers=workers)
    base = scan.points[0].fit
    if base is None:
        raise RuntimeError(f"homogeneous fit failed: {scan.points[0].error}")
    delta, gap, se = [], [], []
    for pt in scan.points[1:]:
        delta.append(pt.p_line - p)
        if pt.fit is None:
            gap.append(math.nan)
            se.append(math.nan)
        else:
            gap.append(base.xi_hat - pt.fit.xi_hat)
            se.append(math.hypot(base.xi_se, pt.fit.xi_se))
    delta, gap, se = map(np.asarray, (delta, gap, se))
    censored = ~(gap >= censor_sigma * se)
    ok = ~censored & (delta > 0)
    slope = slope_se = math.nan
    if ok.sum() >= 2:
        x = np.log(delta[ok]) if d == 2 else 1.0 / delta[ok]
        slope, slope_se = _weighted_line(x, np.log(gap[ok]), se[ok] / gap[ok])
    return GapCurve(float(p), d, delta, gap, se, censored, slope, slope_se, scan)


@dataclass
class PrefactorResult:
    kappa: float
    kappa_se: float
    interval: tuple
    fit: XiFit
    series: ConnectivitySeries


def prefactor_exponent(p, p_line, ns, replicas, seed, *, d=2, w=None, margin=None,
                       workers=None, level=0.95):
    """Exponent ``kappa`` of the polynomial prefactor ``n^-kappa`` of the two-point function."""
    if d not in (2, 3):
        raise ValueError("prefactor_exponent supports d = 2 and d = 3")
    if len(set(int(n) for n in ns)) < 6:
        raise ValueError("prefactor_exponent needs at least 6 values of n")
    res = connectivity_series(PercParams(d, p, p_line), ns, replicas, seed, w=w,
                              margin=margin, workers=workers)
    fit = fit_series(res)
    return PrefactorResult(fit.kappa_hat, fit.kappa_se, fit.kappa_interval(level), fit, res)


def write_csv(fh, header, rows):
    """Write rows with ``repr``-exact floats; returns the text when ``fh`` is None."""
    buf = io.StringIO() if fh is None else fh
    wr = csv.writer(buf, lineterminator="\n")
    if header:
        wr.writerow(header)
    for row in rows:
        wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue() if fh is None else None
