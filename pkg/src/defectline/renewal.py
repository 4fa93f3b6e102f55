"""Renewal sequences, random-walk return laws and pinning free energies.

Conventions: sequences are indexed by time, so ``b[k]`` is the weight of
an inter-arrival of length ``k`` and ``b[0]`` is ignored (taken as 0).
Return laws of simple random walk live on even times; odd entries are 0.
"""

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from . import _kernels
from .estimate import Estimate

FREE_ENERGY_HEADER = ("eps", "f_value", "bracket_lo", "bracket_hi", "nmax", "tail_err")
TAIL_PROBE_HEADER = ("delta", "N", "phat", "stderr", "rate")
DEFAULT_NMAX = 10**6


def _as_b(b):
    """``b_1..b_K`` (sequence) to the time-indexed array ``[0, b_1, ..., b_K]``."""
    b = np.asarray(b, dtype=float)
    if b.ndim != 1 or b.size == 0:
        raise ValueError("b must be a nonempty 1-d sequence b_1, b_2, ...")
    if np.any(b < 0) or not np.all(np.isfinite(b)):
        raise ValueError("renewal weights must be finite and nonnegative")
    return np.concatenate([[0.0], b])


# -- renewal equation ---------------------------------------------------------

@dataclass
class RenewalSequence:
    """Solution ``a_0 = 1, a_n = sum_{k<n} a_k b_{n-k}``; ``b`` is time-indexed."""

    b: np.ndarray
    a: np.ndarray

    @property
    def horizon(self):
        return self.a.size - 1

    def residual(self):
        """Largest relative defect of the renewal equation over the computed range."""
        worst = 0.0
        for n in range(1, self.horizon + 1):
            k = np.arange(max(0, n - self.b.size + 1), n)
            terms = self.a[k] * self.b[n - k]
            rhs = math.fsum(terms)
            scale = max(abs(rhs), math.fsum(np.abs(terms)), 1e-300)
            worst = max(worst, abs(self.a[n] - rhs) / scale)
        return worst


def renewal_sequence(b, N):
    """Solve the renewal equation for ``b = (b_1, b_2, ...)`` up to ``a_N``."""
    if N < 0:
        raise ValueError("horizon must be >= 0")
    bt = _as_b(b)
    return RenewalSequence(bt, _kernels.renewal_convolution(bt, int(N)))


def composition_sum(b, n):
    """``a_n`` as the sum over compositions of ``n`` of products of ``b`` (small ``n`` only)."""
    bt = _as_b(b)
    if n == 0:
        return 1.0
    total = []
    # a composition of n is fixed by its set of internal cut points
    for cuts in itertools.product((0, 1), repeat=n - 1):
        parts, last = [], 0
        for i, c in enumerate(cuts, start=1):
            if c:
                parts.append(i - last)
                last = i
        parts.append(n - last)
        if all(k < bt.size for k in parts):
            total.append(math.prod(bt[k] for k in parts))
    return math.fsum(total)


@dataclass
class RadiusRoot:
    r: float
    q: np.ndarray
    mean: float
    mass: float


def _log_gen(bt, logs):
    k = np.flatnonzero(bt)
    return special.logsumexp(np.log(bt[k]) + k * logs)


def radius_root(b, tol=1e-15, max_log=700.0):
    """Root ``r`` of ``B(s) = sum b_k s^k = 1`` and the tilted law ``q_k = b_k r^k``.

    The root is bracketed in ``log s`` and refined by bisection until the
    bracket on ``s`` is narrower than ``tol`` relative to ``r``.
    """
    bt = _as_b(b)
    if not np.any(bt > 0):
        raise ValueError("B is identically zero; no root of B(s) = 1")
    lo, hi = -1.0, 1.0
    while _log_gen(bt, lo) >= 0.0:
        lo *= 2.0
        if lo < -max_log:
            raise ValueError(f"B(s) >= 1 down to s = e^{lo}; no root bracketed")
    while _log_gen(bt, hi) < 0.0:
        hi *= 2.0
        if hi > max_log:
            raise ValueError(f"B(s) < 1 up to s = e^{hi}; B never reaches 1 "
                             f"(B(1) = {math.exp(_log_gen(bt, 0.0)):.6g})")
    while math.exp(hi) - math.exp(lo) > tol * math.exp(lo):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if _log_gen(bt, mid) < 0.0:
            lo = mid
        else:
            hi = mid
    logr = 0.5 * (lo + hi)
    k = np.arange(bt.size)
    q = np.zeros_like(bt)
    pos = bt > 0
    q[pos] = np.exp(np.log(bt[pos]) + k[pos] * logr)
    return RadiusRoot(math.exp(logr), q, math.fsum(k * q), math.fsum(q))


class ConvergenceError(AssertionError):
    pass


def renewal_limit_check(b, N, tol=1e-6):
    """``r^n a_n`` for ``n = 0..N`` and its limit ``1 / sum k q_k``.

    Raises ValueError if the support of ``b`` is periodic and
    ConvergenceError if ``|r^N a_N - limit| > tol``.
    """
    bt = _as_b(b)
    support = np.flatnonzero(bt)
    if math.gcd(*support.tolist()) != 1:
        raise ValueError(f"support of b has period {math.gcd(*support.tolist())}; "
                         "the renewal limit needs an aperiodic law")
    root = radius_root(b)
    seq = _kernels.renewal_convolution(root.q / root.mass, int(N))
    # renormalising q absorbs the bisection error of r; the limit uses the same law
    limit = root.mass / math.fsum(np.arange(root.q.size) * root.q)
    if abs(seq[-1] - limit) > tol:
        raise ConvergenceError(f"r^N a_N = {seq[-1]!r} differs from {limit!r} by more than {tol}")
    return seq, limit


# -- simple random walk return laws -------------------------------------------

def central_binomial(m):
    """``c_j = C(2j, j) / 4^j`` for ``j = 0..m``."""
    j = np.arange(1, m + 1)
    return np.concatenate([[1.0], np.cumprod((2 * j - 1) / (2 * j))])


def return_probabilities(d, n_max):
    """``u_n = P(X_n = 0)`` for simple random walk, ``n = 0..n_max``.

    d = 1: ``u_{2m} = c_m``; d = 2: ``u_{2m} = c_m^2`` (the walk is a product
    of two independent one-dimensional walks after a 45 degree rotation).
    """
    if d not in (1, 2):
        raise ValueError("return laws are available for d = 1 and d = 2")
    c = central_binomial(n_max // 2)
    u = np.zeros(n_max + 1)
    u[::2] = c if d == 1 else c * c
    return u


@dataclass
class ReturnLaw:
    """First-return law ``f[k] = P(tau = k)`` for ``k = 0..n_max`` (``f[0] = 0``).

    ``kind`` is ``"srw"`` for simple random walk (return probabilities are
    known in closed form beyond ``n_max``), ``"truncated"`` when the law
    continues beyond ``n_max`` with total mass ``tail_mass``, and
    ``"defective"`` when ``tail_mass`` is the probability of never returning.
    """

    d: int
    f: np.ndarray
    tail_mass: float
    kind: str = "truncated"

    @property
    def n_max(self):
        return self.f.size - 1

    @classmethod
    def from_weights(cls, f, kind="truncated", d=0):
        f = np.concatenate([[0.0], np.asarray(f, dtype=float)])
        if np.any(f < 0):
            raise ValueError("probabilities must be nonnegative")
        tail = 1.0 - math.fsum(f)
        if tail < -1e-12:
            raise ValueError("weights sum to more than 1")
        return cls(d, f, max(tail, 0.0), kind)


@lru_cache(maxsize=8)
def _srw_first_return(d, n_max):
    if d == 1:
        # f_{2k} = c_k / (2k - 1)
        c = central_binomial(n_max // 2)
        k = np.arange(c.size)
        f_even = np.where(k > 0, c / np.maximum(2 * k - 1, 1), 0.0)
        tail = c[-1]  # P(tau > 2K) = u_{2K}
    else:
        c = central_binomial(n_max // 2)
        f_even = _kernels.first_return_from_returns(c * c)
        tail = 1.0 - math.fsum(f_even)
    f = np.zeros(n_max + 1)
    f[::2] = f_even
    f.flags.writeable = False
    return f, float(tail)


def first_return_law(d, n_max=None):
    """First-return law of simple random walk on Z^d, d = 1 or 2.

    d = 1 uses the closed form ``f_{2k} = C(2k,k) / ((2k-1) 4^k)``; d = 2
    inverts ``u_n = sum f_k u_{n-k}`` with compensated sums, O(n_max^2).
    Defaults: ``n_max = 10**6`` (d = 1) and ``10**5`` (d = 2).
    """
    if d not in (1, 2):
        raise ValueError("return laws are available for d = 1 and d = 2")
    if n_max is None:
        n_max = DEFAULT_NMAX if d == 1 else 10**5
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    f, tail = _srw_first_return(int(d), int(n_max))
    return ReturnLaw(int(d), f, tail, "srw")


# -- free energy ----------------------------------------------------------------

@dataclass
class FreeEnergyResult:
    epsilon: float
    f_value: float
    bracket: tuple
    tol: float
    nmax: int
    tail_err: float
    caveat: str | None = None

    def row(self):
        return (self.epsilon, self.f_value, self.bracket[0], self.bracket[1], self.nmax,
                self.tail_err)


def _srw_U_bounds(d, u, log_s):
    """Lower and upper bounds on ``U(s) = sum_n u_n s^n`` for ``s = e^{log_s} < 1``.

    Beyond the table, ``u_{2m} <= (pi m)^{-1/2}`` (d = 1) or ``(pi m)^{-1}``
    (d = 2), and the tail sum is bounded by the integral from ``M``.
    """
    n = np.arange(0, u.size, 2)
    # positive terms: numpy's pairwise sum is accurate to a few ulps
    head = float(np.sum(u[::2] * np.exp(n * log_s)))
    M = (u.size - 1) // 2
    a = -2.0 * log_s
    if a <= 0:
        return head, math.inf
    if d == 1:
        tail = special.erfc(math.sqrt(a * M)) / math.sqrt(a)
    else:
        tail = special.exp1(a * M) / math.pi
    return head, head + tail


def _bisect_decreasing(g, lo, hi, tol):
    """Largest ``x`` in ``[lo, hi]`` with ``g(x) >= 0`` for decreasing ``g``, to ``tol``."""
    if g(lo) < 0:
        return lo
    if g(hi) >= 0:
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if g(mid) >= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def pinning_free_energy(eps, law, tol=1e-13, nmax=None):
    """Free energy ``f(eps)``: root of ``e^eps F(e^{-f}) = 1`` with ``F`` the return generating function.

    For simple random walk ``F = 1 - 1/U`` with ``U`` bounded from both sides
    (``nmax`` terms, default ``10**6``, plus an analytic tail), otherwise ``F``
    is bounded by the truncated law and ``tail_mass``.  Bisection on each
    bound gives a bracket that contains the root; ``tail_err`` is its half
    width beyond the bisection tolerance.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    target = math.exp(-eps)
    hi_f = eps + 1.0
    if law.kind == "srw":
        nmax = max(DEFAULT_NMAX, law.n_max) if nmax is None else int(nmax)
        u = return_probabilities(law.d, nmax)

        def bounds(f):
            if f == 0:
                return 1.0, 1.0
            lo_u, hi_u = _srw_U_bounds(law.d, u, -f)
            return 1.0 - 1.0 / lo_u, 1.0 - 1.0 / hi_u
    else:
        nmax = law.n_max
        k = np.arange(law.f.size)
        escape = law.kind == "defective"

        def bounds(f):
            s = math.exp(-f)
            head = float(np.sum(law.f * np.exp(-f * k)))
            extra = 0.0 if escape else law.tail_mass * s ** (nmax + 1)
            return head, head + extra

    if eps == 0 and law.kind in ("srw",):
        return FreeEnergyResult(0.0, 0.0, (0.0, 0.0), tol, nmax, 0.0)
    # F_lo <= F <= F_hi, both decreasing in f; root of F = target lies between the two roots
    f_lo = _bisect_decreasing(lambda f: bounds(f)[0] - target, 0.0, hi_f, tol)
    f_hi = _bisect_decreasing(lambda f: bounds(f)[1] - target, 0.0, hi_f, tol)
    caveat = None
    b_lo, b_hi = bounds(0.0)
    if b_hi <= target:
        f_lo = f_hi = 0.0
    elif b_lo <= target:
        caveat = ("B(1) <= 1 for the truncated law; the tail cannot certify a positive root, "
                  "f reported as 0")
        return FreeEnergyResult(float(eps), 0.0, (0.0, f_hi), tol, nmax, f_hi / 2, caveat)
    value = 0.5 * (f_lo + f_hi)
    return FreeEnergyResult(float(eps), value, (f_lo, f_hi), tol, nmax,
                            0.5 * (f_hi - f_lo), caveat)


def srw_free_energy_closed_form(eps):
    """``-1/2 log(2 e^-eps - e^-2 eps)``, the d = 1 free energy."""
    return -0.5 * math.log(2 * math.exp(-eps) - math.exp(-2 * eps))


def srw_free_energy_derivative(eps):
    """``f'(eps) = (1 - e^-eps) / (2 - e^-eps)`` for d = 1."""
    return (1 - math.exp(-eps)) / (2 - math.exp(-eps))


# -- partition function and local time ---------------------------------------

@dataclass
class PartitionFunction:
    """``log Z_n`` for ``n = 0..N`` and the local-time weights ``W_n / Z_n``."""

    eps: float
    log_z: np.ndarray
    mean_local_time: np.ndarray

    @property
    def values(self):
        with np.errstate(over="ignore"):
            return np.exp(self.log_z)


def _tilt(eps, law):
    try:
        return pinning_free_energy(eps, law).f_value
    except ValueError:
        return 0.0


def partition_function(eps, law, N, tilt=None):
    """``Z_0..Z_N`` from ``Z_n = sum_k e^eps f_k Z_{n-k}``, ``Z_0 = 1``.

    The recursion runs on ``Z_n e^{-lambda n}`` with ``lambda`` the free
    energy (or ``tilt``), which keeps values of order one; logs are
    returned.
    """
    if N > law.n_max:
        raise ValueError(f"horizon {N} exceeds the return law horizon {law.n_max}")
    lam = _tilt(eps, law) if tilt is None else float(tilt)
    k = np.arange(N + 1)
    b = math.exp(eps) * law.f[:N + 1] * np.exp(-lam * k)
    a, w = _kernels.renewal_pair(b, int(N))
    with np.errstate(divide="ignore", invalid="ignore"):
        log_z = np.log(a) + lam * k
        mean_l = np.where(a > 0, w / a, np.nan)
    return PartitionFunction(float(eps), log_z, mean_l)


def local_time_mean(eps, law, N):
    """``E_N^eps[L(N)]`` under the pinned measure (``X_N = 0``)."""
    return float(partition_function(eps, law, N).mean_local_time[N])


def tilted_law(eps, law, f_value=None):
    """``Q(k) = e^eps f_k e^{-f k}``, renormalised over the truncated support."""
    if f_value is None:
        f_value = pinning_free_energy(eps, law).f_value
    k = np.arange(law.f.size)
    q = math.exp(eps) * law.f * np.exp(-f_value * k)
    return q / math.fsum(q)


# -- local-time large deviations --------------------------------------------------

@dataclass
class TailProbe:
    delta: float
    N: int
    phat: Estimate
    p_return: Estimate
    rate: float

    def row(self):
        return (self.delta, self.N, self.phat.value, self.phat.stderr, self.rate)


def _walk_blocks(d, N, samples, seed, block=1 << 16):
    loc, home = [], []
    for r0 in range(0, samples, block):
        l, h = _kernels.srw_local_times(d, N, np.uint64(seed), r0, min(r0 + block, samples))
        loc.append(l)
        home.append(h)
    return np.concatenate(loc), np.concatenate(home)


def local_time_tail_probe(d, delta, N, samples, seed):
    """Frequency of ``{L(N) >= delta N, X_N = 0}`` for simple random walk.

    ``rate = -(1/N) log(phat / P(X_N = 0))`` is the decay rate of the
    local-time tail of the walk pinned at time ``N``; with no hits it is nan
    (censored).  ``delta`` may be a sequence, in which case one probe per
    value is returned from the same walks.
    """
    deltas = np.atleast_1d(np.asarray(delta, dtype=float))
    if np.any(deltas < 0) or np.any(deltas >= 1):
        raise ValueError("delta must lie in [0, 1)")
    local, home = _walk_blocks(d, int(N), int(samples), seed)
    p_ret = Estimate.from_hits(int(home.sum()), samples, seed)
    out = []
    for dl in deltas:
        hits = int(np.count_nonzero(home & (local >= math.ceil(dl * N - 1e-9))))
        est = Estimate.from_hits(hits, samples, seed)
        rate = -math.log(est.value / p_ret.value) / N if hits else math.nan
        out.append(TailProbe(float(dl), int(N), est, p_ret, rate))
    return out if np.ndim(delta) else out[0]


def exact_local_time_tail(law, delta, N):
    """``P(L(N) >= m, X_N = 0)`` with ``m = ceil(delta N)`` from convolution powers of ``f``."""
    m = math.ceil(delta * N - 1e-9)
    f = np.asarray(law.f[:N + 1], dtype=float)
    u = _kernels.renewal_convolution(f, N)
    if m == 0:
        return float(u[N])
    # P(L >= m, X_N = 0) = sum_t P(m-th return at t) u_{N-t}
    conv = f.copy()
    for _ in range(m - 1):
        conv = np.convolve(conv, f)[:N + 1]
    return math.fsum(conv[t] * u[N - t] for t in range(N + 1))


@dataclass
class TailScan:
    d: int
    probes: list
    exponent: float
    slope: float


def tail_probe_scan(d, deltas, N, samples, seed):
    """Probes over a grid of ``delta`` and the fitted scaling of the rate.

    d = 1: ``exponent`` is ``gamma`` in ``rate ~ A delta^gamma``.
    d = 2: ``slope`` is the fitted ``A`` in ``rate ~ A delta / |log delta|``.
    """
    probes = local_time_tail_probe(d, list(deltas), N, samples, seed)
    ok = [p for p in probes if math.isfinite(p.rate) and p.rate > 0 and p.delta > 0]
    exponent = slope = math.nan
    if len(ok) >= 2:
        x = np.array([p.delta for p in ok])
        y = np.array([p.rate for p in ok])
        exponent = float(np.polyfit(np.log(x), np.log(y), 1)[0])
        z = x / np.abs(np.log(x))
        slope = float(np.dot(z, y) / np.dot(z, z))
    return TailScan(d, probes, exponent, slope)


# -- law of large numbers under the tilted renewal --------------------------------

@dataclass
class LLNResult:
    mean_ratio: float
    target: float
    exceed: Estimate
    accepted: int
    attempted: int


def tilted_lln(eps, law, N, replicas, seed, eta=0.05, max_attempts=None):
    """Simulate the pinned tilted renewal and measure ``P(|L/N - 1/E_Q tau| >= eta)``.

    Renewal processes with law ``Q`` are run up to ``N`` and kept when ``N``
    is a renewal epoch, which gives exactly the law of the renewal set under
    the pinned polymer measure.
    """
    q = tilted_law(eps, law)
    support = np.flatnonzero(q)
    cdf = np.cumsum(q[support])
    cdf /= cdf[-1]
    target = 1.0 / math.fsum(np.arange(q.size) * q)
    max_attempts = 100 * replicas if max_attempts is None else max_attempts
    counts = []
    r = 0
    block = max(1024, 4 * replicas)
    while sum(c.size for c in counts) < replicas and r < max_attempts:
        r1 = min(r + block, max_attempts)
        c, pinned = _kernels.pinned_renewal_counts(cdf, support.astype(np.int64), int(N),
                                                   np.uint64(seed), r, r1)
        counts.append(c[pinned])
        r = r1
    local = np.concatenate(counts)[:replicas]
    if local.size < replicas:
        raise RuntimeError(f"only {local.size} pinned replicas in {r} attempts")
    ratio = local / N
    exceed = int(np.count_nonzero(np.abs(ratio - target) >= eta))
    return LLNResult(float(ratio.mean()), target, Estimate.from_hits(exceed, replicas, seed),
                     replicas, r)


# -- defect free-energy bound -------------------------------------------------------

def _polylog_direct(nu, mu):
    """``sum_l l^-nu e^{-mu l}`` by summation until a geometric tail bound is below 1e-16 relative."""
    s = math.exp(-mu)
    total = 0.0
    chunk = 4096
    start = 1
    while True:
        l = np.arange(start, start + chunk, dtype=float)
        terms = l ** -nu * np.exp(-mu * l)
        total += math.fsum(terms)
        nxt = start + chunk
        bound = nxt ** -nu * s**nxt / (1 - s)
        if bound <= 1e-16 * total:
            return total, bound
        start = nxt


def _polylog_series(nu, mu, terms=40):
    """``Gamma(1-nu) mu^(nu-1) + sum_k zeta(nu-k) (-mu)^k / k!`` for non-integer ``nu``, ``mu < 2 pi``."""
    k = np.arange(terms)
    coef = special.zeta(nu - k) / special.factorial(k)
    return special.gamma(1 - nu) * mu ** (nu - 1) + math.fsum(coef * (-mu) ** k)


def polylog_exp(nu, mu):
    """``Li_nu(e^{-mu}) = sum_{l >= 1} l^-nu e^{-mu l}`` for ``mu > 0``.

    ``nu = 1`` uses ``-log(1 - e^{-mu})``; otherwise direct summation for
    ``mu >= 1`` and the expansion around ``mu = 0`` below, whose terms decay
    like ``(mu / 2 pi)^k``.
    """
    if mu <= 0:
        raise ValueError("mu must be > 0")
    if nu == 1:
        return -math.log(-math.expm1(-mu))
    if mu >= 1.0:
        return _polylog_direct(nu, mu)[0]
    return _polylog_series(nu, mu)


@dataclass
class PhiResult:
    eps: float
    d: int
    phi: float
    log_phi: float
    diagnostic: float


def defect_bound_phi(eps, d, c=1.0):
    """``phi(eps) > 0`` solving ``c (e^eps - 1) Li_{(d-1)/2}(e^{-phi}) = 1``.

    ``diagnostic`` is ``phi / eps^2`` for d = 2 and ``eps log phi`` for d = 3.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if d not in (2, 3):
        raise ValueError("defect_bound_phi supports d = 2 and d = 3")
    if c <= 0:
        raise ValueError("c must be > 0")
    nu = (d - 1) / 2
    target = 1.0 / (c * math.expm1(eps))
    if d == 3:
        y = math.exp(-target)
        log_phi = math.log(-math.log1p(-y)) if y > 1e-300 else -target
    else:
        # Li decreases in phi; bisect on log phi
        lo, hi = -700.0, 10.0
        while hi - lo > 1e-14 * max(1.0, abs(lo)):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            if polylog_exp(nu, math.exp(mid)) > target:
                lo = mid
            else:
                hi = mid
        log_phi = 0.5 * (lo + hi)
    phi = math.exp(log_phi)
    diag = phi / eps**2 if d == 2 else eps * log_phi
    return PhiResult(float(eps), int(d), phi, log_phi, diag)
