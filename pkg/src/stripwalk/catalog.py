"""Reference environment models used by the validation battery and demos."""

import numpy as np

from .env import EnvironmentModel, LayerTriple, embed_nearest_neighbor


def homogeneous_scalar(p=2 / 3, q=1 / 3):
    """d = 1, a single letter; r = 1 - p - q."""
    return embed_nearest_neighbor([p], [1.0 - p - q], [q])


def two_atom_scalar(p_vals=(0.7, 0.8), weights=(0.5, 0.5)):
    """d = 1 i.i.d. environment with r = 0."""
    return embed_nearest_neighbor(list(p_vals), weights=list(weights))


def deterministic_drift(d=1, eps=1e-9):
    """Almost surely one step to the right per unit time.

    ``p = (1 - eps) * B`` with a fixed positive stochastic B, ``q = eps * J/d``.
    """
    B = np.full((d, d), 1.0 / d) if d == 1 else 0.5 * np.eye(d) + 0.5 / d
    B = B / B.sum(axis=1, keepdims=True)
    p = (1.0 - eps) * B
    q = np.full((d, d), eps / d)
    return EnvironmentModel("iid", (LayerTriple(p, np.zeros((d, d)), q),), name="deterministic-drift")


def coupled_d2():
    """Two-letter i.i.d. d = 2 model with height mixing in every matrix.

    Letter B drifts locally to the left, so the environment matters.
    """
    A = LayerTriple(
        p=[[0.45, 0.15], [0.10, 0.40]],
        r=[[0.05, 0.05], [0.10, 0.05]],
        q=[[0.20, 0.10], [0.15, 0.20]],
    )
    B = LayerTriple(
        p=[[0.25, 0.15], [0.30, 0.20]],
        r=[[0.10, 0.05], [0.05, 0.05]],
        q=[[0.25, 0.20], [0.15, 0.25]],
    )
    return EnvironmentModel("iid", (A, B), [0.6, 0.4], epsilon_floor=0.3, name="coupled-d2")


def height_swap_symmetric():
    """d = 2 letters invariant under exchanging the two heights."""
    A = LayerTriple(
        p=[[0.40, 0.20], [0.20, 0.40]],
        r=[[0.05, 0.05], [0.05, 0.05]],
        q=[[0.20, 0.10], [0.10, 0.20]],
    )
    B = LayerTriple(
        p=[[0.30, 0.15], [0.15, 0.30]],
        r=[[0.05, 0.10], [0.10, 0.05]],
        q=[[0.25, 0.15], [0.15, 0.25]],
    )
    return EnvironmentModel("iid", (A, B), [0.5, 0.5], name="height-swap-symmetric")


def random_letter(d, rng, right=(0.45, 0.75), left=(0.10, 0.35)):
    """A random letter with strictly positive entries and a right-leaning split."""
    rows_p = rng.uniform(*right, size=d)
    rows_q = np.minimum(rng.uniform(*left, size=d), 1.0 - rows_p - 0.01)
    rows_r = 1.0 - rows_p - rows_q
    mats = []
    for rows in (rows_p, rows_r, rows_q):
        w = rng.dirichlet(np.ones(d), size=d) * 0.9 + 0.1 / d
        mats.append(w * rows[:, None])
    p, r, q = mats
    # absorb roundoff so rows sum to one exactly enough
    r = r + (1.0 - (p + r + q).sum(axis=1))[:, None] / d
    return LayerTriple(p, r, q)


def random_iid_model(d, rng, k=3, **kw):
    support = tuple(random_letter(d, rng, **kw) for _ in range(k))
    return EnvironmentModel("iid", support, rng.dirichlet(np.ones(k)), name=f"random-d{d}")


def diagnostics_pass_model():
    """d = 2 model for which all decay diagnostics are negative."""
    return coupled_d2()


def second_moment_fail_model():
    """d = 1, p in {0.4, 0.9}: E rho < 1 but E rho^2 > 1."""
    return two_atom_scalar((0.4, 0.9))
