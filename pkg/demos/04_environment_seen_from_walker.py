"""What does the walker see?

The law of the letters around the walker converges to a limit that
over-weights slow stretches of the environment.  We build the limit from
independent excursions between consecutive levels and compare it with the
empirical law along walks at growing times.
"""

from stripwalk import catalog, evfp_replicas, q_reference

model = catalog.coupled_d2()
ref = q_reference(model, radius=1, replicas=50_000, seed=4)
print(f"reference: {len(ref.counts)} bins, mean excursion {ref.meta['mean_excursion']:.3f}")

for n in (100, 1000, 10_000):
    reps = -(-ref.total // 10_000)
    walk = evfp_replicas(model, 1, (n, 2 * n), reps, seed=5)
    print(f"times [{n}, {2 * n}): TV to reference = {ref.tv(walk):.4f}")

print("height marginal, reference:", ref.height_marginal(model.d).round(4))
print("prior letter weights:", model.weights)
