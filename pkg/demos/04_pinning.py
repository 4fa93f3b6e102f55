"""Renewal equation, pinning free energy and local times.

A random walk rewarded by e^eps per visit to the origin has a free energy
f(eps) solving sum_k e^(eps - f k) f_k = 1, where f_k is the first-return
law.  For the simple random walk in d = 1 this has a closed form; in d = 2
f(eps) is positive for every eps > 0 but vanishes like exp(-c / eps).  The
tilted law Q(k) = e^eps f_k e^{-f k} is a renewal process whose mean gap gives
the density of visits.
"""
import math

import numpy as np

from defectline import renewal as R

# renewal theorem on a law with unit mass and one with mass above one
seq, limit = R.renewal_limit_check([0.5**k for k in range(1, 200)], 60, tol=1e-13)
print(f"b_k = 2^-k: r^n a_n = {seq[1]:.15f} ... {seq[-1]:.15f}")
root = R.radius_root([2 * 3.0**-k for k in range(1, 400)])
print(f"b_k = 2 * 3^-k: radius {root.r:.15f} (exact 1)")

law1 = R.first_return_law(1)
print("\nd=1 free energy")
for eps in (0.01, 0.1, 0.5, 1.0, 2.0):
    res = R.pinning_free_energy(eps, law1)
    print(f"  eps={eps:<5} f={res.f_value:.12f}  closed form "
          f"{R.srw_free_energy_closed_form(eps):.12f}  f/eps^2={res.f_value / eps**2:.4f}")

law2 = R.first_return_law(2)
print("\nd=2 free energy")
for eps in (1.0, 0.5, 0.25):
    res = R.pinning_free_energy(eps, law2)
    print(f"  eps={eps:<5} f={res.f_value:.6e}  -eps log f = {-eps * math.log(res.f_value):.4f}")

# finite-N partition functions approach the free energy from below
print("\nd=1 eps=1 partition functions")
for N in (250, 1000, 4000):
    pf = R.partition_function(1.0, law1, N)
    print(f"  N={N:5d}: (1/N) log Z_N = {pf.log_z[N] / N:.6f}")

print("\ndefect bound phi")
for eps in (1e-1, 1e-2, 1e-3):
    r2 = R.defect_bound_phi(eps, 2)
    print(f"  d=2 eps={eps:g}: phi={r2.phi:.4e}, phi/eps^2={r2.diagnostic:.4f}")
for eps in (0.1, 0.05):
    r3 = R.defect_bound_phi(eps, 3)
    print(f"  d=3 eps={eps:g}: log phi={r3.log_phi:.4f}, eps log phi={r3.diagnostic:.4f}")

lln = R.tilted_lln(1.0, law1, 10**4, 2000, seed=3)
print(f"\nlocal time at eps=1, N=1e4: mean L/N {lln.mean_ratio:.5f} vs 1/E_Q tau "
      f"{lln.target:.5f}, P(|L/N - target| >= 0.05) = {lln.exceed.value:.1e}")

# an unrewarded bridge rarely spends a fraction delta of its time at the origin
scan = R.tail_probe_scan(1, [0.05, 0.1, 0.2], 200, 10**6, seed=4)
exact = [R.exact_local_time_tail(R.first_return_law(1, 400), d, 200) for d in (0.05, 0.1, 0.2)]
for pr, ex in zip(scan.probes, exact):
    print(f"  delta={pr.delta:<5} P_hat={pr.phat.value:.3e} (exact {ex:.3e}) rate={pr.rate:.4f}")
print(f"  rate ~ delta^gamma with gamma = {scan.exponent:.3f}")
