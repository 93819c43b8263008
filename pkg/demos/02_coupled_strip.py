"""A two-height strip whose environment genuinely matters.

``coupled_d2`` mixes two letters: A pushes right, B pushes left.  We
classify the model, estimate the speed two ways (independent environment
draws, and one long spatial average) and compare with the displacement of
long simulated walks.
"""

import numpy as np

from stripwalk import catalog, check_condition_C, derive_seed, lyapunov, simulate_model, speed

model = catalog.coupled_d2()
print(check_condition_C(model).as_dict())

lam = lyapunov(model, chain_length=2000, replicas=32, seed=1)
print(f"lambda = {lam.mean:.4f} +- {lam.stderr:.4f}  ->  {lam.verdict}")

ens = speed(model, "ensemble", budget=20_000, seed=1)
spa = speed(model, "spatial", budget=50_000, seed=1)
print(f"v (ensemble) = {ens.v:.5f} +- {ens.stderr:.5f}")
print(f"v (spatial)  = {spa.v:.5f} +- {spa.stderr:.5f}")

n = 200_000
ratios = []
for i in range(8):
    traj, _ = simulate_model(model, derive_seed(1, "demo-lln", i), "pi", horizon=n)
    ratios.append(traj.xi[-1] / n)
ratios = np.array(ratios)
print(f"xi_n / n over 8 walks of {n} steps: {ratios.mean():.5f} +- {ratios.std(ddof=1) / np.sqrt(8):.5f}")
