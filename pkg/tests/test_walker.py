import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from stripwalk import catalog
from stripwalk.env import EnvironmentModel, EnvironmentWindow, LayerTriple, sample_window
from stripwalk.errors import InsufficientWindow, WindowExhausted
from stripwalk.exitprob import solve_eta
from stripwalk.walker import (
    EvfpHistogram,
    evfp_accumulate,
    evfp_replicas,
    extract_renewals,
    q_reference,
    renewal_mask,
    select_istar,
    simulate,
    simulate_model,
)


def rigid_drift(d=1):
    """p is a permutation-free stochastic matrix and q = r = 0 exactly: a
    test-only letter outside the admissible class."""
    p = np.full((d, d), 1.0 / d)
    return LayerTriple(p, np.zeros((d, d)), np.zeros((d, d)))


def test_drift_walk_is_rigid():
    w = EnvironmentWindow.from_triples([rigid_drift()] * 120, base=-10)
    traj = simulate(w, 0, horizon=100, seed=1)
    np.testing.assert_array_equal(traj.xi, np.arange(101))
    np.testing.assert_array_equal(traj.hitting, np.arange(101))
    assert np.all(traj.crossings == 1)


def test_simulation_is_deterministic(coupled):
    w = sample_window(coupled, -200, 2000, 3)
    a = simulate(w, 1, horizon=3000, seed=42)
    b = simulate(w, 1, horizon=3000, seed=42)
    np.testing.assert_array_equal(a.xi, b.xi)
    np.testing.assert_array_equal(a.Y, b.Y)
    c = simulate(w, 1, horizon=3000, seed=43)
    assert not np.array_equal(a.xi, c.xi)


@given(st.integers(0, 2**32), st.integers(1, 3000))
def test_steps_are_nearest_neighbor(seed, n):
    w = sample_window(catalog.coupled_d2(), -400, 3100, seed)
    try:
        traj = simulate(w, 0, horizon=n, seed=seed)
    except WindowExhausted:
        return
    assert len(traj) == n + 1
    assert np.all(np.abs(np.diff(traj.xi)) <= 1)
    assert np.all((traj.Y >= 0) & (traj.Y < 2))


def test_target_stop(coupled):
    w = sample_window(coupled, -300, 60, 0)
    traj = simulate(w, 0, target=50, seed=5)
    assert traj.xi[-1] == 50 and traj.xi[:-1].max() < 50
    assert len(traj.hitting) == 51


def test_window_exhausted():
    w = sample_window(catalog.homogeneous_scalar(), -2, 5, 0)
    with pytest.raises(WindowExhausted):
        simulate(w, 0, horizon=10_000, seed=0)


def test_argument_errors(coupled):
    w = sample_window(coupled, -10, 10, 0)
    with pytest.raises(ValueError):
        simulate(w, 0, seed=0)
    with pytest.raises(ValueError):
        simulate(w, 5, horizon=3, seed=0)
    with pytest.raises(InsufficientWindow):
        simulate(sample_window(coupled, 0, 10, 0), "pi", horizon=3, seed=0)


@pytest.mark.slow
def test_exit_height_matches_eta_row():
    model = catalog.random_iid_model(2, np.random.default_rng(8))
    w = sample_window(model, -400, 3, 8)
    eta = solve_eta(w).at(0).eta
    n = 100_000
    rng = np.random.default_rng(0)
    exits = np.array(
        [simulate(w, 1, target=1, seed=int(s)).Y[-1] for s in rng.integers(0, 2**63, n)]
    )
    freq = np.bincount(exits, minlength=2) / n
    se = np.sqrt(eta[1] * (1 - eta[1]) / n)
    assert np.all(np.abs(freq - eta[1]) <= 4 * se)


def test_simulate_model_widens_window(scalar):
    traj, window = simulate_model(scalar, 7, 0, horizon=2000, left=4)
    assert window.L <= traj.xi.min()
    again, _ = simulate_model(scalar, 7, 0, horizon=2000, left=4)
    np.testing.assert_array_equal(traj.xi, again.xi)


def test_select_istar_scalar(scalar):
    i, est, se = select_istar(scalar, 500, seed=0)
    assert i == 0 and est.shape == (1,)


def test_select_istar_symmetric_tie():
    model = catalog.height_swap_symmetric()
    i, est, se = select_istar(model, 4000, seed=1)
    assert abs(est[0] - est[1]) <= 3 * np.hypot(*se)
    assert i == 0


def test_select_istar_seed_consistency(coupled):
    _, e1, s1 = select_istar(coupled, 3000, seed=1)
    _, e2, s2 = select_istar(coupled, 3000, seed=2)
    assert np.all(np.abs(e1 - e2) <= 3 * np.hypot(s1, s2))


def test_renewal_mask_definition():
    xi = np.array([0, 1, 0, 1, 2, 3, 4, 5, 6])
    Y = np.zeros_like(xi)
    m = renewal_mask(xi, Y, 0, guard=2)
    # t=1 is revisited-from-below later (xi=0 at t=2), t=0 too; t>=3 are
    # fresh maxima never revisited; the guard drops levels above 4
    np.testing.assert_array_equal(np.nonzero(m)[0], [3, 4, 5, 6])


def test_renewals_rigid_drift():
    w = EnvironmentWindow.from_triples([rigid_drift()] * 1100, base=-10)
    traj = simulate(w, 0, horizon=1000, seed=0)
    rec = extract_renewals(traj, 0, guard=10)
    assert len(rec) == 991
    assert np.all(rec.increments == 1)


def test_renewal_rate_scalar(scalar):
    n = 1_000_000
    traj, _ = simulate_model(scalar, 11, 0, horizon=n)
    rec = extract_renewals(traj, 0, guard=50)
    K = len(rec)
    # P(never return below the current level) for the walk with p = 2/3:
    # escape probability 1 - q/p = 1/2 per fresh maximum
    expected = n * (1 / 3) * 0.5
    assert abs(K - expected) <= 3 * np.sqrt(K) + 60
    inc = rec.increments
    assert np.all(inc >= 1)


def test_renewal_increments_independent(coupled):
    i, _, _ = select_istar(coupled, 2000, seed=0)
    traj, _ = simulate_model(coupled, 3, i, horizon=1_000_000)
    inc = extract_renewals(traj, i).increments
    K = len(inc)
    for col in inc.T:
        x = col - col.mean()
        r1 = (x[:-1] @ x[1:]) / (x @ x)
        assert abs(r1) <= 3 / np.sqrt(K)
        assert stats.ks_2samp(col[: K // 2], col[K // 2 :]).pvalue > 0.01


def test_evfp_deterministic_environment():
    letter = catalog.coupled_d2().support[0]
    w = EnvironmentWindow.from_triples([letter] * 3000, base=-1500)
    traj = simulate(w, 0, horizon=2000, seed=0)
    h = evfp_accumulate(traj, w, 1)
    assert len({sig for sig, _ in h.counts}) == 1
    assert h.total == len(traj)
    np.testing.assert_allclose(h.height_marginal(2), np.bincount(traj.Y, minlength=2) / len(traj))


def test_evfp_halves_agree(coupled):
    traj, w = simulate_model(coupled, 2, 0, horizon=200_000, right=200_010)
    a = evfp_accumulate(traj, w, 1, (0, 100_000))
    b = evfp_accumulate(traj, w, 1, (100_000, 200_000))
    assert a.tv(b) <= 0.02


def test_evfp_two_atom_size_biased():
    model = catalog.two_atom_scalar((0.55, 0.9))
    q = q_reference(model, 0, 20_000, seed=1)
    h = evfp_replicas(model, 0, (5000, 10_000), 10, seed=2)
    assert q.tv(h) < 0.03
    # both laws put more than the prior weight 1/2 on the slow letter
    slow = next(sig for sig, blk in q.blocks.items() if blk[0][0][0][0] == 0.55)
    for hist in (q, h):
        mass = sum(n for (sig, _), n in hist.counts.items() if sig == slow) / hist.total
        assert mass > 0.55


def test_evfp_range_errors(coupled):
    traj, w = simulate_model(coupled, 2, 0, horizon=100)
    with pytest.raises(ValueError):
        evfp_accumulate(traj, w, 1, (50, 500))


def test_q_reference_scalar(scalar):
    q = q_reference(scalar, 1, 2000, seed=0)
    assert len({sig for sig, _ in q.counts}) == 1
    assert q.height_marginal(1)[0] == 1.0
    assert q.meta["mean_excursion"] == pytest.approx(3.0, rel=0.1)


def test_q_reference_drift():
    model = catalog.deterministic_drift(1, eps=1e-12)
    q = q_reference(model, 1, 500, seed=0)
    assert q.total == 500 and q.meta["discarded"] == 0


def test_histogram_merge_and_tv():
    a = EvfpHistogram(1, {("x", 0): 2, ("y", 1): 2})
    b = EvfpHistogram(1, {("x", 0): 4})
    assert a.tv(b) == pytest.approx(0.5)
    assert a.merge(b).total == 8
    with pytest.raises(ValueError):
        a.merge(EvfpHistogram(2))
