import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from defectline import estimators as est
from defectline import exact
from defectline.estimate import Estimate
from defectline.lattice import PercParams, build_box


def test_estimate_merge_is_exact():
    a = Estimate.from_hits(10, 100, seed=3)
    b = Estimate.from_hits(25, 300, seed=1)
    c = Estimate.from_hits(7, 50, seed=9)
    pooled = Estimate.from_hits(42, 450)
    for m in (a + b + c, c + (b + a), (a + c) + b):
        assert m.value == pooled.value
        assert m.stderr == pooled.stderr
        assert m.seed == 1


def test_estimate_binomial_stderr():
    e = Estimate.from_hits(30, 100)
    assert e.stderr == pytest.approx(math.sqrt(0.3 * 0.7 / 100))


def test_derived_estimate():
    e = Estimate.derived(2.0, 0.1)
    assert (e.value, e.stderr) == (2.0, 0.1)
    with pytest.raises(TypeError):
        e + e


def test_mc_extreme_probabilities():
    b = build_box(2, 3, 2)
    top = np.nextafter(1.0, 0.0)
    with pytest.warns(RuntimeWarning, match="threshold"):
        params = PercParams(2, top, 1.0)
    one = est.mc_connectivity(b, params, b.origin, b.axis_vertex(3), 1000, 1)
    assert (one.value, one.stderr, one.n_samples) == (1.0, 0.0, 1000)
    zero = est.mc_connectivity(b, PercParams(2, 0.0, 0.0), b.origin, b.axis_vertex(3), 1000, 1)
    assert (zero.value, zero.stderr) == (0.0, 0.0)


def test_mc_matches_enumeration():
    b = build_box(2, 2, 1)
    prm = PercParams(2, 0.4, 0.7)
    x, y = exact.axis_pair(b)
    e = est.mc_connectivity(b, prm, x, y, 200_000, 11)
    ref = exact.enumerate_connectivity(b, prm, x, y)
    assert abs(e.value - ref) < 4 * e.stderr


def test_mc_deterministic_and_worker_independent():
    prm = PercParams(2, 0.45, 0.7)
    r1 = est.connectivity_series(prm, [4, 8, 12], 150_000, 5, workers=1)
    r2 = est.connectivity_series(prm, [4, 8, 12], 150_000, 5, workers=2)
    assert np.array_equal(r1.hits, r2.hits)
    assert np.array_equal(r1.pairs, r2.pairs)
    assert r1.to_csv() == r2.to_csv()


def test_series_consistent_with_single_target():
    prm = PercParams(2, 0.45, 0.6)
    res = est.connectivity_series(prm, [3, 6], 20_000, 8, w=4, margin=2)
    box = build_box(2, 6, 4, margin=2)
    single = est.mc_connectivity(box, prm, box.origin, box.axis_vertex(3), 20_000, 8)
    assert res.hits[0] == round(single.total)


def test_crn_monotone_in_p_line():
    hits = [est.connectivity_series(PercParams(2, 0.4, pl), [5, 10], 20_000, 3).hits
            for pl in (0.2, 0.4, 0.6, 0.8)]
    assert np.all(np.diff(np.array(hits), axis=0) >= 0)


def test_joint_covariance_diagonal_is_binomial():
    res = est.connectivity_series(PercParams(2, 0.45, 0.45), [2, 4, 6], 50_000, 4)
    cov = res.covariance()
    ph = res.phat
    assert np.allclose(np.diag(cov), ph * (1 - ph) / res.replicas)
    # all targets lie on one cluster: the estimates are positively correlated
    assert np.all(cov > 0)


def test_fit_exact_pure_exponential():
    series = [(n, Estimate.exact(math.exp(-0.5 * n))) for n in range(8, 41, 4)]
    f = est.fit_xi(series)
    assert f.xi_hat == pytest.approx(0.5, abs=1e-10)
    assert abs(f.kappa_hat) < 1e-10


def test_fit_exact_oz():
    series = [(n, Estimate.exact(n**-0.5 * math.exp(-0.5 * n))) for n in range(8, 41, 4)]
    f = est.fit_xi(series)
    assert f.xi_hat == pytest.approx(0.5, abs=1e-8)
    assert f.kappa_hat == pytest.approx(0.5, abs=1e-8)


@settings(max_examples=30, deadline=None)
@given(xi=st.floats(0.05, 2.0), kappa=st.floats(-1.0, 2.0), c=st.floats(-2.0, 2.0))
def test_fit_identifiable(xi, kappa, c):
    series = [(n, Estimate.exact(math.exp(-xi * n - kappa * math.log(n) - c)))
              for n in (5, 9, 14, 20, 27)]
    f = est.fit_xi(series)
    assert f.xi_hat == pytest.approx(xi, abs=1e-8)
    assert f.kappa_hat == pytest.approx(kappa, abs=1e-7)


def test_fit_drops_zero_points():
    series = [(n, Estimate.exact(math.exp(-0.3 * n))) for n in range(2, 8)]
    series.append((9, Estimate.from_hits(0, 100)))
    with pytest.warns(RuntimeWarning, match="dropping"):
        f = est.fit_xi(series)
    assert f.dropped == [9]
    with pytest.raises(ValueError):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            est.fit_xi(series[:3] + [(9, Estimate.from_hits(0, 100))])


def test_fit_on_strip_oracle():
    prm = PercParams(2, 0.45, 0.45)
    vals = exact.strip_transfer_connectivity(2, 60, prm, return_series=True)
    ratio = -math.log(vals[-1] / vals[-2])
    f = est.fit_xi([(n, Estimate.exact(vals[n - 1])) for n in range(10, 61)])
    assert abs(f.xi_hat - ratio) < 1e-4


def test_fit_weighted_uncertainty_shrinks():
    prm = PercParams(2, 0.45, 0.45)
    small = est.fit_series(est.connectivity_series(prm, range(4, 17, 2), 20_000, 1))
    large = est.fit_series(est.connectivity_series(prm, range(4, 17, 2), 200_000, 1))
    assert large.xi_se < small.xi_se


def test_local_xi():
    e = est.local_xi(Estimate.exact(math.exp(-3)), Estimate.exact(math.exp(-7)), 4)
    assert e.value == pytest.approx(1.0, abs=1e-15)
    pl = 0.6
    e = est.local_xi(Estimate.exact(pl**3), Estimate.exact(pl**8), 5)
    assert e.value == pytest.approx(-math.log(pl), rel=1e-13)
    with pytest.raises(ValueError):
        est.local_xi(Estimate.exact(0.0), Estimate.exact(0.1), 1)


def test_local_xi_converges_on_strip():
    prm = PercParams(2, 0.45, 0.45)
    vals = exact.strip_transfer_connectivity(2, 60, prm, return_series=True)
    f = est.fit_xi([(n, Estimate.exact(vals[n - 1])) for n in range(10, 61)])
    loc = est.local_xi(Estimate.exact(vals[49]), Estimate.exact(vals[59]), 10)
    assert abs(loc.value - f.xi_hat) < 1e-5


def test_scan_rows_and_duplicate_point():
    scan = est.xi_scan(0.45, [0.45, 0.8], range(4, 13, 2), 20_000, 9)
    rows = list(scan.rows())
    assert [r[0] for r in rows] == [0.45, 0.8]
    hom = est.fit_series(est.connectivity_series(PercParams(2, 0.45, 0.45), range(4, 13, 2),
                                                 20_000, 9))
    assert scan.point(0.45).fit.xi_hat == hom.xi_hat
    text = scan.to_csv()
    assert text.splitlines()[0] == "p_line,xi_hat,xi_se,kappa_hat,kappa_se"


def test_scan_records_failures():
    scan = est.xi_scan(0.45, [0.5, 1.5], range(4, 13, 2), 5_000, 9)
    assert scan.points[0].fit is not None
    assert scan.points[1].fit is None and "p_line" in scan.points[1].error


def test_connectivity_csv_schema():
    res = est.connectivity_series(PercParams(2, 0.4, 0.5), [2, 4], 1000, 17)
    lines = res.to_csv().splitlines()
    assert lines[0] == "p,p_line,n,replicas,hits,phat,stderr,seed"
    fields = lines[1].split(",")
    assert fields[2] == "2" and fields[3] == "1000" and fields[7] == "17"


def test_lower_bound_open_axis():
    res = est.connectivity_series(PercParams(2, 0.3, 0.8), [2, 5, 8], 50_000, 2)
    for (n, e) in res.estimates():
        assert e.value >= 0.8**n - 4 * e.stderr


def test_gap_curve_structure():
    curve = est.gap_curve(0.45, [0.45, 0.75, 0.95], range(4, 17, 2), 40_000, 3)
    assert abs(curve.gap[0]) < 1e-12 and curve.censored[0]
    assert curve.gap[2] > curve.gap[1] > 0


def test_prefactor_requires_six_points():
    with pytest.raises(ValueError):
        est.prefactor_exponent(0.45, 0.45, [4, 6, 8], 100, 1)


def test_resolve_workers(monkeypatch):
    monkeypatch.setenv(est.WORKERS_ENV, "3")
    assert est.resolve_workers() == 3
    assert est.resolve_workers(2) == 2
    monkeypatch.delenv(est.WORKERS_ENV)
    assert est.resolve_workers() == 1
    with pytest.raises(ValueError):
        est.resolve_workers(0)
