import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stripwalk import catalog
from stripwalk.env import EnvironmentModel, EnvironmentWindow, LayerTriple, sample_window
from stripwalk.errors import InsufficientWindow
from stripwalk.exitprob import (
    absorption_oracle,
    c_coefficients,
    compute_pi,
    eta_recursion,
    left_exit,
    solve_eta,
    verify_C4,
)


def random_window(d, seed, L=-200, R=12):
    model = catalog.random_iid_model(d, np.random.default_rng(seed))
    return sample_window(model, L, R, seed)


def dense_exit_oracle(window, layer, depth):
    """Exit law from ``layer`` to ``layer + 1`` by a dense solve of the strip
    cut at ``layer - depth`` (plain numpy, independent of the sparse oracle)."""
    d = window.d
    lo = layer - depth
    n = depth + 1
    P, R, Q = window.restrict(lo, layer).arrays
    K = np.zeros((n * d, n * d))
    for o in range(n):
        s = slice(o * d, (o + 1) * d)
        K[s, s] = R[o]
        if o + 1 < n:
            K[s, (o + 1) * d : (o + 2) * d] = P[o]
        if o >= 1:
            K[s, (o - 1) * d : o * d] = Q[o]
    rhs = np.zeros((n * d, d))
    rhs[(n - 1) * d :, :] = P[-1]
    X = np.linalg.solve(np.eye(n * d) - K, rhs)
    return X[(n - 1) * d :]


def test_scalar_fixed_point(scalar):
    es = solve_eta(sample_window(scalar, -300, 10, 0))
    np.testing.assert_allclose(es.eta, 1.0, atol=1e-15)
    np.testing.assert_allclose(es.gamma, 1.5, atol=1e-12)
    np.testing.assert_allclose(es.a, 0.5, atol=1e-12)
    np.testing.assert_allclose(es.b, 1.5, atol=1e-12)
    np.testing.assert_allclose(es.c, 0.0, atol=1e-15)


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_solve_eta_matches_oracles(d):
    w = random_window(d, 100 + d)
    es = solve_eta(w)
    for n in (0, 5, 10):
        orc = absorption_oracle(w, n + 1, (n, None))
        np.testing.assert_allclose(es.at(n).eta, orc.exit_dist, atol=1e-8)
        np.testing.assert_allclose(es.at(n).eta, dense_exit_oracle(w, n, 150), atol=1e-8)


def test_near_identity_letter():
    J = np.full((2, 2), 0.5)
    p = 0.6 * (0.9 * np.eye(2) + 0.1 * J)
    q = 0.3 * J
    r = 0.1 * np.eye(2)
    w = sample_window(EnvironmentModel("iid", (LayerTriple(p, r, q),)), -300, 3, 0)
    orc = absorption_oracle(w, 1, (0, None))
    np.testing.assert_allclose(solve_eta(w).at(0).eta, orc.exit_dist, atol=1e-8)


@pytest.mark.parametrize("d", [2, 3])
def test_seed_matrix_independence(d):
    w = random_window(d, 7 + d, L=-400)
    a = solve_eta(w, burn_in=200, seed_matrix=np.eye(d))
    b = solve_eta(w, burn_in=200, seed_matrix=np.full((d, d), 1.0 / d))
    assert np.max(np.abs(a.eta - b.eta)) <= 1e-10
    assert a.certified and a.seed_bound <= 1e-12


@given(st.integers(1, 4), st.integers(0, 2**32))
def test_record_invariants(d, seed):
    es = solve_eta(random_window(d, seed, L=-250, R=5))
    np.testing.assert_allclose(es.eta.sum(axis=-1), 1.0, atol=1e-10)
    assert verify_C4(es).passed
    assert np.all(es.a >= 0) and np.all(es.gamma >= 0)
    assert np.all(es.b >= 1 - 1e-12)
    c = es.c
    assert np.all((0 <= c) & (c < 1))


def test_c_coefficients():
    eta = np.array([[0.7, 0.3], [0.4, 0.6]])
    assert c_coefficients(eta) == pytest.approx(1 - max(0.3, 0.4))


def test_recursion_reports_bound(rng):
    w = random_window(2, 3, L=-300)
    P, R, Q = w.arrays
    _, _, a, log_bound = eta_recursion(P, R, Q, np.eye(2) * 0.5 + 0.25)
    prod = np.eye(2)
    for k in range(20):
        prod = a[k] @ prod
        assert log_bound[k] == pytest.approx(np.log(2 * np.abs(prod).sum(axis=1).max()), rel=1e-10)


def test_insufficient_window():
    with pytest.raises(InsufficientWindow):
        solve_eta(random_window(2, 1, L=0, R=3), burn_in=10)


def test_uncertified_short_window():
    es = solve_eta(random_window(2, 1, L=-20, R=5))
    assert not es.certified


def test_oracle_scalar_moments(scalar):
    w = sample_window(scalar, -200, 2, 0)
    orc = absorption_oracle(w, 1, (0, 0), truncation_depth=120)
    assert orc.exit_dist[0] == pytest.approx(1.0, abs=1e-12)
    assert orc.mean_time == pytest.approx(3.0, abs=1e-9)
    assert orc.second_moment_time == pytest.approx(33.0, abs=1e-9)


def test_oracle_deterministic_drift():
    model = catalog.deterministic_drift(2)
    w = sample_window(model, -100, 2, 0)
    orc = absorption_oracle(w, 1, (0, 1))
    assert orc.mean_time == pytest.approx(1.0, abs=1e-7)
    np.testing.assert_allclose(orc.exit_dist, model.support[0].p[1] / model.support[0].p[1].sum(), atol=1e-7)


def test_oracle_rejects_bad_start(scalar):
    with pytest.raises(ValueError):
        absorption_oracle(sample_window(scalar, -10, 2, 0), 0, (0, 0))


def test_pi_scalar(scalar):
    pv = compute_pi(solve_eta(sample_window(scalar, -300, 3, 0)), 0)
    assert pv.pi[0] == 1.0 and pv.collapse_residual == 0.0


def test_pi_rank_one():
    J = np.full((2, 2), 0.5)
    letter = LayerTriple(0.6 * J, 0.1 * J, 0.3 * J)
    es = solve_eta(sample_window(EnvironmentModel("iid", (letter,)), -200, 3, 0))
    pv = compute_pi(es, 0)
    np.testing.assert_allclose(pv.pi, [0.5, 0.5], atol=1e-15)
    assert pv.factors == 1


def test_pi_start_independence():
    es = solve_eta(random_window(3, 5, L=-400))
    p0 = compute_pi(es, 0, tol=1e-10, start=0).pi
    p2 = compute_pi(es, 0, tol=1e-10, start=2).pi
    assert np.max(np.abs(p0 - p2)) <= 1e-10
    assert p0.sum() == pytest.approx(1.0, abs=1e-12)


def test_pi_is_invariant_along_layers():
    es = solve_eta(random_window(2, 6, L=-400))
    pi0 = compute_pi(es, 0).pi
    pi1 = compute_pi(es, 1).pi
    np.testing.assert_allclose(pi0 @ es.at(0).eta, pi1, atol=1e-9)


def test_left_exit_drift_and_scalar(scalar):
    w = sample_window(catalog.deterministic_drift(1, eps=1e-12), -10, 400, 0)
    le = left_exit(w, 0, 5)
    assert le.eta_minus[0, 0] < 1e-10 and le.f[0] < 1e-10
    w = sample_window(scalar, -10, 400, 0)
    le = left_exit(w, 0, 1)
    assert le.eta_minus[0, 0] == pytest.approx(0.5, abs=1e-10)
    le = left_exit(w, 0, 4)
    assert le.f[0] == pytest.approx(0.5**4, abs=1e-10)


def test_c4_failure_from_unreachable_height():
    p = [[0.6, 0.0], [0.5, 0.0]]
    r = [[0.1, 0.0], [0.1, 0.0]]
    q = [[0.15, 0.15], [0.2, 0.2]]
    letter = LayerTriple(p, r, q)
    w = EnvironmentWindow.from_triples([letter] * 150, base=-140)
    res = verify_C4(solve_eta(w, burn_in=100))
    assert not res.passed and res.min_entry == 0.0


def test_c4_scalar(scalar):
    res = verify_C4(solve_eta(sample_window(scalar, -200, 1, 0)))
    assert res.passed and res.min_entry == 1.0
