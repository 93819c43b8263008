"""Nearest-neighbour walk with drift: every strip quantity has a closed form.

With p = 2/3, q = 1/3 the walk needs on average 1/(p - q) = 3 steps to
climb one level, the crossing time has variance (1 - (p-q)^2)/(p-q)^3 = 24,
and the exit matrices collapse to the number 1.  This script computes each
quantity through the general strip machinery and prints it next to the
formula.
"""

import numpy as np

from stripwalk import catalog, crossing_moments, lyapunov, sample_window, solve_eta, speed

p, q = 2 / 3, 1 / 3
model = catalog.homogeneous_scalar(p, q)

es = solve_eta(sample_window(model, -400, 5, seed=0))
rec = es.at(0)
print(f"eta = {rec.eta[0, 0]:.15f}   gamma = {rec.gamma[0, 0]:.15f}   a = {rec.a[0, 0]:.15f}")

lam = lyapunov(model, chain_length=1000, replicas=4, seed=0)
print(f"lambda  {lam.mean:+.15f}   log(q/p) = {np.log(q / p):+.15f}   verdict: {lam.verdict}")

cm = crossing_moments(es, 0)
drift = p - q
var = (1 - drift**2) / drift**3
print(f"E T     {cm.u0[0]:.12f}   formula {1 / drift:.12f}")
print(f"E T^2   {cm.w0[0]:.12f}   formula {var + 1 / drift**2:.12f}")

v = speed(model, "ensemble", budget=1000, seed=0)
print(f"speed   {v.v:.15f}   p - q = {drift:.15f}")
