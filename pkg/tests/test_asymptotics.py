import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stripwalk import catalog
from stripwalk.asymptotics import (
    analyze,
    autocovariances,
    bartlett_lrv,
    clt_sigma,
    condition_diagnostics,
    crossing_moments,
    left_exit_decay,
    lyapunov,
    speed,
    transience_verdict,
)
from stripwalk.env import EnvironmentModel, LayerTriple, embed_nearest_neighbor, sample_window
from stripwalk.errors import ModelError, NotTransient, SeriesDivergence
from stripwalk.exitprob import absorption_oracle, solve_eta


def scalar_first_passage(p, q):
    """Mean and second moment of the time to step one level up, r = 1 - p - q."""
    # E T = 1/(p-q) for r = 0; with holding, each visit lasts 1/(1-r) on average.
    # Solve the renewal equations directly: T = 1 + {0 w.p. p, T w.p. r, T'+T'' w.p. q}.
    m1 = 1.0 / (p - q)
    # E T^2 = 1 + 2 m1 (r + 2 q) ... derived from squaring the decomposition
    # E T^2 = 1 + 2(r m1 + 2 q m1) + r E T^2 + q (2 E T^2 + 2 m1^2)
    m2 = (1 + 2 * m1 * (r := 1 - p - q) + 4 * q * m1 + 2 * q * m1**2) / (1 - r - 2 * q)
    return m1, m2


def test_scalar_first_passage_oracle():
    m1, m2 = scalar_first_passage(2 / 3, 1 / 3)
    assert m1 == pytest.approx(3.0)
    assert m2 - m1**2 == pytest.approx((1 - (1 / 3) ** 2) / (1 / 3) ** 3)
    assert m2 == pytest.approx(33.0)


def test_verdict_margins():
    assert transience_verdict(-0.1, 0.01) == "transient-right"
    assert transience_verdict(0.1, 0.01) == "not-transient-right"
    assert transience_verdict(0.02, 0.01) == "indeterminate"


def test_lyapunov_homogeneous(scalar):
    lam = lyapunov(scalar, 500, 4, seed=1)
    assert lam.mean == pytest.approx(np.log(0.5), abs=1e-12)
    assert lam.stderr < 1e-12
    assert lam.verdict == "transient-right"
    mean, se = lam
    assert mean == lam.mean and se == lam.stderr


def test_lyapunov_two_atom_exact():
    exact = (np.log(0.4 / 0.6) + np.log(0.3 / 0.7)) / 2
    assert exact == pytest.approx(-0.626381, abs=1e-6)
    lam = lyapunov(embed_nearest_neighbor([0.6, 0.7]), 4000, 32, seed=5)
    assert abs(lam.mean - exact) <= 4 * lam.stderr


@pytest.mark.parametrize("p", [0.3, 0.45])
def test_lyapunov_left_drift(p):
    lam = lyapunov(embed_nearest_neighbor([p]), 400, 4, seed=0)
    assert lam.mean == pytest.approx(np.log((1 - p) / p), abs=1e-12)
    assert lam.verdict == "not-transient-right"


def test_lyapunov_symmetric_scalar():
    lam = lyapunov(embed_nearest_neighbor([0.5]), 1000, 8, seed=0)
    assert abs(lam.mean) <= 3 * lam.stderr + 1e-12
    assert lam.verdict == "indeterminate"


def test_lyapunov_rejects_c2_violation():
    bad = EnvironmentModel("iid", (LayerTriple([[0.5, 0.3], [0.2, 0.6]], np.full((2, 2), 0.1), np.zeros((2, 2))),))
    with pytest.raises(ModelError):
        lyapunov(bad, 10, 2)


def test_lyapunov_seed_determinism(coupled):
    assert lyapunov(coupled, 300, 4, seed=9).mean == lyapunov(coupled, 300, 4, seed=9).mean


def test_crossing_moments_scalar(scalar):
    cm = crossing_moments(solve_eta(sample_window(scalar, -400, 3, 0)), 0)
    assert cm.u0[0] == pytest.approx(3.0, abs=1e-10)
    assert cm.w0[0] == pytest.approx(33.0, abs=1e-9)


def test_crossing_moments_with_holding():
    p, q = 0.5, 0.2
    m1, m2 = scalar_first_passage(p, q)
    model = embed_nearest_neighbor([p], [1 - p - q], [q])
    cm = crossing_moments(solve_eta(sample_window(model, -400, 3, 0)), 0)
    assert cm.u0[0] == pytest.approx(m1, rel=1e-10)
    assert cm.w0[0] == pytest.approx(m2, rel=1e-10)


def test_crossing_moments_drift():
    es = solve_eta(sample_window(catalog.deterministic_drift(2), -300, 3, 0))
    cm = crossing_moments(es, 0)
    np.testing.assert_allclose(cm.u0, 1.0, atol=1e-7)
    np.testing.assert_allclose(cm.w0, 1.0, atol=1e-7)


@pytest.mark.parametrize("d", [2, 3])
def test_crossing_moments_match_oracle(d):
    model = catalog.random_iid_model(d, np.random.default_rng(40 + d))
    w = sample_window(model, -500, 6, 40 + d)
    es = solve_eta(w)
    for n in (0, 4):
        cm = crossing_moments(es, n)
        orc = absorption_oracle(w, n + 1, (n, None))
        np.testing.assert_allclose(cm.u0, orc.mean_time, rtol=1e-7)
        np.testing.assert_allclose(cm.w0, orc.second_moment_time, rtol=1e-7)


@given(st.integers(1, 3), st.integers(0, 2**32))
def test_moment_invariants(d, seed):
    model = catalog.random_iid_model(d, np.random.default_rng(seed))
    es = solve_eta(sample_window(model, -600, 2, seed))
    cm = crossing_moments(es, 0)
    assert np.all(cm.u0 >= 1)
    assert np.all(cm.w0 >= cm.u0**2 * (1 - 1e-12))
    o, k = es.offset(0), cm.truncation_depth
    A = np.eye(d)
    for j in range(k):
        A = A @ es.a[o - j]
    first_omitted = np.abs(A @ es.b[o - k]).max()
    assert cm.tail_bound >= first_omitted * (1 - 1e-9)


def test_series_divergence_on_short_window(coupled):
    es = solve_eta(sample_window(coupled, -105, 2, 0), burn_in=100)
    with pytest.raises(SeriesDivergence):
        crossing_moments(es, 0)


def test_speed_closed_forms(scalar):
    v = speed(scalar, "ensemble", 500, seed=0)
    assert v.v == pytest.approx(1 / 3, abs=1e-12)
    assert v.mean_time == pytest.approx(3.0, abs=1e-10)
    assert speed(scalar, "spatial", 2000, seed=0).v == pytest.approx(1 / 3, abs=1e-12)
    drift = speed(catalog.deterministic_drift(2), "ensemble", 500, seed=0)
    assert drift.v == pytest.approx(1.0, abs=1e-6)


def test_speed_two_atom_series():
    p = np.array([0.7, 0.8])
    e_inv_p = np.mean(1 / p)
    e_rho = np.mean((1 - p) / p)
    exact = (1 - e_rho) / e_inv_p
    assert exact == pytest.approx(0.493333, abs=1e-6)
    model = embed_nearest_neighbor(p)
    for est in ("ensemble", "spatial"):
        sp = speed(model, est, 20_000, seed=3)
        assert abs(sp.v - exact) <= max(4 * sp.stderr, 1e-3)
        assert sp.stderr < 2e-3


def test_speed_estimators_agree(coupled):
    a = speed(coupled, "ensemble", 8000, seed=1)
    b = speed(coupled, "spatial", 20_000, seed=1)
    assert abs(a.v - b.v) <= 4 * np.hypot(a.stderr, b.stderr)


def test_speed_requires_transience():
    with pytest.raises(NotTransient):
        speed(embed_nearest_neighbor([0.3]), "ensemble", 100)


def test_speed_rejects_unknown_estimator(scalar):
    with pytest.raises(ValueError):
        speed(scalar, "magic", 100)


def test_autocovariances_white_noise(rng):
    z = rng.standard_normal(100_000)
    g = autocovariances(z, 5)
    assert g[0] == pytest.approx(1.0, abs=0.03)
    assert np.all(np.abs(g[1:]) < 0.03)


def test_bartlett_weights():
    g = np.array([2.0, 1.0, 0.5])
    # weights 1 - h/(H+1) with H = 2
    assert bartlett_lrv(g) == pytest.approx(2.0 + 2 * (1.0 * 2 / 3 + 0.5 * 1 / 3))


def test_bartlett_ar1(rng):
    phi, n = 0.5, 20_000
    e = rng.standard_normal((10, n))
    z = np.empty_like(e)
    z[:, 0] = e[:, 0] / np.sqrt(1 - phi**2)
    for t in range(1, n):
        z[:, t] = phi * z[:, t - 1] + e[:, t]
    lrv = np.mean([bartlett_lrv(autocovariances(row, 60)) for row in z])
    assert lrv == pytest.approx(1 / (1 - phi) ** 2, rel=0.1)


def test_clt_scalar(scalar):
    clt = clt_sigma(scalar, 2000, replicas=100, seed=2, v_P=1 / 3)
    assert abs(clt.sigma2_T - 24.0) <= 4 * clt.sigma2_T_stderr
    assert clt.sigma2_xi == pytest.approx(clt.sigma2_T / 27)
    assert abs(clt.sigma2_xi - 8 / 9) <= 4 * clt.sigma2_T_stderr / 27
    s2t, s2x, prof = clt
    assert len(prof) == clt.lag_cap + 1


def test_clt_degenerate_drift():
    clt = clt_sigma(catalog.deterministic_drift(1, eps=1e-12), 500, replicas=5, seed=0)
    assert clt.sigma2_T < 1e-6 and clt.degenerate


def test_diagnostics_scalar_exact(scalar):
    rep = condition_diagnostics(scalar, 20, 100, seed=0)
    assert rep.first_moment.slope == pytest.approx(np.log(0.5))
    assert rep.second_moment.slope == pytest.approx(2 * np.log(0.5))
    assert rep.contraction.slope == -np.inf
    assert rep.passed


def test_diagnostics_scalar_monte_carlo_agrees(scalar):
    rep = condition_diagnostics(scalar, 20, 200, seed=0, exact=False)
    assert rep.first_moment.slope == pytest.approx(np.log(0.5), abs=1e-9)
    assert rep.contraction.slope == -np.inf


def test_diagnostics_second_moment_growth():
    # E rho^2 > 1 although E log rho < 0 and E rho < 1
    fail = catalog.second_moment_fail_model()
    rho = np.array([0.6 / 0.4, 0.1 / 0.9])
    assert np.mean(np.log(rho)) < 0 and np.mean(rho) < 1 and np.mean(rho**2) > 1
    rep = condition_diagnostics(fail, 20, 100, seed=0)
    assert rep.second_moment.slope == pytest.approx(np.log(np.mean(rho**2)))
    assert not rep.second_moment.passed and rep.first_moment.passed
    # p in {0.51, 0.9}: E rho^2 < 1, so the second-moment condition holds
    ok = condition_diagnostics(embed_nearest_neighbor([0.51, 0.9]), 20, 100, seed=0)
    assert ok.second_moment.passed


def test_diagnostics_pass_model_and_seed_consistency(coupled):
    r1 = condition_diagnostics(coupled, 30, 2000, seed=1)
    r2 = condition_diagnostics(coupled, 30, 2000, seed=2)
    assert r1.passed and r2.passed
    for name in ("first_moment", "second_moment", "contraction"):
        a, b = getattr(r1, name), getattr(r2, name)
        assert np.isfinite(a.slope)
        assert abs(a.slope - b.slope) <= 4 * np.hypot(a.stderr, b.stderr)


def test_left_exit_decay_negative(coupled):
    rate = left_exit_decay(coupled, 20, 40, seed=0)
    assert rate.slope + 3 * rate.stderr < 0


def test_analyze_report(scalar):
    rep = analyze(scalar, seed=0, chain_length=200, lyap_replicas=4, speed_budget=200,
                  clt_horizon=500, clt_replicas=10, diag_n_max=10, diag_replicas=50)
    d = json.loads(rep.to_json())
    assert d["transience_verdict"] == "transient-right"
    assert d["v_P"] == pytest.approx(1 / 3, abs=1e-12)
    assert d["diagnostics"]["contraction"]["slope"] == "-inf"
    assert d["provenance"]["model_hash"] == scalar.model_hash


def test_analyze_stops_when_not_transient():
    rep = analyze(embed_nearest_neighbor([0.3]), chain_length=200, lyap_replicas=4, diagnostics=False)
    assert rep.transience_verdict == "not-transient-right" and rep.v_P is None
