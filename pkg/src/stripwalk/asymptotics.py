"""Lyapunov exponent, speed, hitting-time moments and CLT variance.

Notation: ``a_n = gamma_n q_n`` and ``b_n = gamma_n 1`` come from the
exit-matrix recursion (:mod:`stripwalk.exitprob`).  The walk is transient to
the right iff the top Lyapunov exponent of the products ``a_n ... a_1`` is
negative; the speed is ``1 / E(pi . u_0)`` where ``u_0`` holds the expected
times to cross from layer 0 to layer 1.
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .env import check_condition_C, draw_letters, sample_window
from .errors import InsufficientWindow, ModelError, NotTransient, SeriesDivergence
from .exitprob import (
    SEED_TOL,
    c_coefficients,
    compute_pi,
    eta_recursion,
    left_exit,
    pi_from_products,
    solve_eta,
)
from .seeding import SEED_SCHEME_VERSION, derive_seed, rng_for
from .smallmat import cumulative_log_norms
from .walker import simulate_model

VERDICTS = ("transient-right", "not-transient-right", "indeterminate")
SERIES_TOL = 1e-12
LYAP_BURN_IN = 100
COLLAPSE_TOL = 1e-10
BATCH = 2048


def _uniform(d):
    return np.full((d, d), 1.0 / d)


def _require_condition(model):
    """Reject C2 failures; return notes for the softer structural checks."""
    rep = check_condition_C(model)
    if not rep.C2:
        raise ModelError(f"condition C fails for {model.name or 'model'}: {rep.as_dict()['details']}")
    notes = []
    if not rep.C3:
        notes.append("a column sum of p or q vanishes; products may still be well defined")
    return rep, notes


def _batched_recursion(model, letters):
    P, R, Q = model.stacks
    return eta_recursion(P[letters], R[letters], Q[letters], _uniform(model.d))


def transience_verdict(lambda_mean, lambda_stderr):
    """Classify with a three-standard-error margin around zero."""
    if lambda_mean + 3 * lambda_stderr < 0:
        return "transient-right"
    if lambda_mean - 3 * lambda_stderr > 0:
        return "not-transient-right"
    return "indeterminate"


# --------------------------------------------------------------------------
# Lyapunov exponent


@dataclass
class LyapunovEstimate:
    """Unpacks as ``(mean, stderr)``."""

    mean: float
    stderr: float
    values: np.ndarray = field(repr=False)
    chain_length: int
    replicas: int
    notes: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.mean, self.stderr))

    @property
    def verdict(self):
        return transience_verdict(self.mean, self.stderr)


def lyapunov(model, chain_length=2000, replicas=32, seed=0, burn_in=LYAP_BURN_IN):
    """Estimate the top Lyapunov exponent of the products ``a_n ... a_1``.

    Each replica draws a stationary letter sequence, runs the exit-matrix
    recursion from a uniform seed, discards ``burn_in`` layers and returns
    ``log ||a_n ... a_1|| / n`` for ``n = chain_length``.

    The reported ``stderr`` combines the replica standard error with a
    finite-length bias estimate, the gap between the estimates at ``n``
    and ``n/2``.  The bias is O(1/n) and dominates when the environment is
    (nearly) deterministic and the replicas agree.

    Returns
    -------
    LyapunovEstimate
        ``mean`` is ``-inf`` if some product vanished exactly.

    Raises
    ------
    ModelError
        If the letters violate the norm conditions.
    """
    if chain_length < 1 or replicas < 1:
        raise ValueError("chain_length and replicas must be positive")
    _, notes = _require_condition(model)
    letters = draw_letters(model, rng_for(seed, "lyapunov"), (replicas, burn_in + chain_length))
    vals = np.empty(replicas)
    half = np.empty(replicas)
    h = max(chain_length // 2, 1)
    step = max(1, BATCH // 32)
    for s in range(0, replicas, step):
        _, _, a, _ = _batched_recursion(model, letters[s : s + step])
        logs = cumulative_log_norms(a[:, burn_in:])
        vals[s : s + step] = logs[:, -1] / chain_length
        half[s : s + step] = logs[:, h - 1] / h
    if np.any(np.isneginf(vals)):
        notes.append("degenerate: a product of a-matrices vanished exactly")
        return LyapunovEstimate(-np.inf, 0.0, vals, chain_length, replicas, notes)
    se = float(vals.std(ddof=1) / np.sqrt(replicas)) if replicas > 1 else float("nan")
    bias = float(abs(vals.mean() - half.mean())) if chain_length > 1 else 0.0
    if bias > max(2 * se, 1e-10):
        notes.append(f"finite-length bias {bias:.2e} exceeds the replica stderr {se:.2e}")
    return LyapunovEstimate(float(vals.mean()), float(np.hypot(se, bias)), vals, chain_length, replicas, notes)


# --------------------------------------------------------------------------
# crossing-time series


def _series(a_rev, v_rev, tol, keep_terms=False):
    """``sum_k (a_rev[0] ... a_rev[k-1]) v_rev[k]`` over the layer axis.

    ``a_rev`` is ``(..., K, d, d)`` and ``v_rev`` is ``(..., K, d)``.  The sum
    stops before the first term whose norm is at most ``tol`` times the norm
    of the leading term, for every batch member.

    Returns ``(total, terms, depth, omitted, tail_bound)``; ``depth`` counts
    the terms kept and ``omitted`` is the norm of the first dropped term.
    """
    K, d = a_rev.shape[-3], a_rev.shape[-1]
    batch = a_rev.shape[:-3]
    A = np.broadcast_to(np.eye(d), batch + (d, d)).copy()
    total = v_rev[..., 0, :].copy()
    lead = np.abs(total).max(axis=-1)
    lead = np.where(lead > 0, lead, 1.0)
    terms = [total.copy()] if keep_terms else None
    hist = [float(np.max(np.abs(total)))]
    for k in range(1, K):
        A = A @ a_rev[..., k - 1, :, :]
        term = np.einsum("...ij,...j->...i", A, v_rev[..., k, :])
        tn = np.abs(term).max(axis=-1)
        omitted = float(np.max(tn))
        if np.all(tn <= tol * lead):
            m = min(k, 16)
            ratio = (omitted / hist[-m]) ** (1.0 / m) if hist[-m] > 0 else 0.0
            tail = omitted / (1.0 - ratio) if ratio < 1 else float("inf")
            if keep_terms:
                terms = np.stack(terms, axis=-2)
            return total, terms, k, omitted, max(tail, omitted)
        total = total + term
        hist.append(omitted)
        if keep_terms:
            terms.append(term)
    raise SeriesDivergence(
        f"series terms still at relative size {float(np.max(tn / lead)):.2e} after {K} layers; "
        "the a-products do not decay inside the window"
    )


@dataclass
class CrossingMoments:
    """First and second moments of the time to cross from a layer to the next.

    ``u0[i]`` and ``w0[i]`` are the mean and second moment of the time to
    first reach the next layer from height i; ``u[k]`` holds the expected
    time to reach it from ``k`` layers to the left.
    """

    u0: np.ndarray
    y_terms: np.ndarray = field(repr=False)
    w0: np.ndarray
    truncation_depth: int
    tail_bound: float
    w_depth: int = 0
    w_tail_bound: float = 0.0
    u: np.ndarray = field(default=None, repr=False)


def crossing_moments(etaseq, at_index=0, tol=SERIES_TOL):
    """Moments of the crossing time from layer ``at_index`` to ``at_index + 1``.

    ``u0`` sums ``(a_0 ... a_{-k+1}) b_{-k}`` (indices relative to
    ``at_index``); the per-layer crossing means to the left are obtained by
    the same series at shifted positions and chained into the expected times
    ``u_{-k}`` to reach ``at_index + 1``.  Then
    ``w0 = sum_k (a_0 ... a_{-k+1}) gamma_{-k} (2 u_{-k} - 1)``.  Both series
    stop once a term drops below ``tol`` relative to the leading one.

    Raises
    ------
    SeriesDivergence
        If either series has not decayed by the left end of the records.
    """
    o = etaseq.offset(at_index)
    a_rev = etaseq.a[o::-1]
    b_rev = etaseq.b[o::-1]
    g_rev = etaseq.gamma[o::-1]
    e_rev = etaseq.eta[o::-1]
    avail = len(a_rev)
    u0, terms, ku, _, tail = _series(a_rev, b_rev, tol, keep_terms=True)

    J = min(ku + 16, avail)
    while True:
        span = min(avail - J + 1, 2 * ku + 64)
        if span < 2:
            raise SeriesDivergence("window too short to resolve the second-moment series")
        idx = np.arange(J)[:, None] + np.arange(span)[None, :]
        try:
            y = _series(a_rev[idx], b_rev[idx], tol)[0]
        except SeriesDivergence:
            if span == avail - J + 1:
                raise
            span = avail - J + 1
            idx = np.arange(J)[:, None] + np.arange(span)[None, :]
            y = _series(a_rev[idx], b_rev[idx], tol)[0]
        U = np.empty_like(y)
        U[0] = y[0]
        for k in range(1, J):
            U[k] = y[k] + e_rev[k] @ U[k - 1]
        v_rev = np.einsum("kij,kj->ki", g_rev[:J], 2.0 * U - 1.0)
        try:
            w0, _, kw, _, wtail = _series(a_rev[:J], v_rev, tol)
            break
        except SeriesDivergence:
            if J >= avail:
                raise
            J = min(2 * J, avail)
    return CrossingMoments(u0, terms, w0, ku, tail, kw, wtail, U[:kw])


# --------------------------------------------------------------------------
# speed


@dataclass
class SpeedEstimate:
    """Unpacks as ``(v, stderr)``."""

    v: float
    stderr: float
    mean_time: float
    mean_time_stderr: float
    estimator: str
    budget: int
    notes: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.v, self.stderr))


def _ensemble_samples(model, n, rng, tol, burn_in=32, depth=64):
    """``pi . u_0`` for ``n`` independent stationary letter sequences.

    Returns ``(samples, burn_in, depth)``; the sizes double until the seed is
    forgotten, the products collapse and the series converges.
    """
    while True:
        letters = draw_letters(model, rng, (n, burn_in + depth))
        eta, gamma, a, log_bound = _batched_recursion(model, letters)
        if np.max(log_bound[:, burn_in]) > np.log(SEED_TOL):
            burn_in *= 2
            if burn_in > 1 << 16:
                raise InsufficientWindow("exit-matrix recursion does not forget its seed")
            continue
        eta, gamma, a = eta[:, burn_in:], gamma[:, burn_in:], a[:, burn_in:]
        pi, spread = pi_from_products(eta[:, :-1], COLLAPSE_TOL)
        try:
            u0 = _series(a[:, ::-1], gamma[:, ::-1].sum(axis=-1), tol)[0]
        except SeriesDivergence:
            if depth > 1 << 14:
                raise
            depth *= 2
            continue
        if np.max(spread) > COLLAPSE_TOL:
            depth *= 2
            continue
        return (pi * u0).sum(axis=-1), burn_in, depth


def _spatial_samples(model, budget, tol, seed, pad=256):
    """``pi_n . u_n`` along one realization, for ``budget`` consecutive layers."""
    window = sample_window(model, -pad, budget + pad, derive_seed(seed, "speed-spatial"))
    es = solve_eta(window)
    if not es.certified:
        raise InsufficientWindow("exit-matrix recursion did not certify its burn-in")
    b = es.b
    # forward recursion y_{n+1} = b_n + a_n y_n; its seed is forgotten like the a-products
    logs = cumulative_log_norms(es.a)
    ok = np.nonzero(logs <= np.log(tol) - 5.0)[0]
    if not len(ok):
        raise SeriesDivergence("a-products do not decay along the window")
    n0 = int(ok[0]) + 1
    first = es.start + n0
    if n0 + budget >= len(es):
        raise InsufficientWindow("pad too short for the forward recursion to settle")
    y = b[0].copy()
    for o in range(1, n0 + 1):
        y = b[o] + es.a[o] @ y
    # y is now the crossing mean of layer ``first``
    pi = compute_pi(es, first, COLLAPSE_TOL).pi
    out = np.empty(budget)
    o = n0
    for i in range(budget):
        out[i] = pi @ y
        pi = pi @ es.eta[o]
        o += 1
        y = b[o] + es.a[o] @ y
    return out


def speed(model, estimator="ensemble", budget=20_000, tol=SERIES_TOL, seed=0, check=True):
    """Asymptotic speed ``v_P = 1 / E(pi . u_0)``.

    Parameters
    ----------
    estimator : {'ensemble', 'spatial'}
        ``'ensemble'`` averages over ``budget`` independent letter sequences;
        ``'spatial'`` averages along ``budget`` consecutive layers of one
        realization, with a batch-means standard error.
    check : bool
        Run :func:`lyapunov` first and refuse non-transient models.

    Returns
    -------
    SpeedEstimate
        The standard error of ``v`` comes from the delta method.
    """
    if estimator not in ("ensemble", "spatial"):
        raise ValueError(f"unknown estimator {estimator!r}")
    _require_condition(model)
    if check:
        lam = lyapunov(model, 1000, 16, derive_seed(seed, "speed-check"))
        if lam.verdict != "transient-right":
            raise NotTransient(f"lambda = {lam.mean:.4g} +- {lam.stderr:.2g}: {lam.verdict}")
    if estimator == "ensemble":
        rng = rng_for(seed, "speed-ensemble")
        parts = []
        done = 0
        sizes = (32, 64)
        while done < budget:
            n = min(BATCH, budget - done)
            x, *sizes = _ensemble_samples(model, n, rng, tol, *sizes)
            parts.append(x)
            done += n
        x = np.concatenate(parts)
        m = float(x.mean())
        se = float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else float("nan")
    else:
        x = _spatial_samples(model, budget, tol, seed)
        nb = 32
        bm = x[: len(x) // nb * nb].reshape(nb, -1).mean(axis=1)
        m = float(x.mean())
        se = float(bm.std(ddof=1) / np.sqrt(nb))
    return SpeedEstimate(1.0 / m, se / m**2, m, se, estimator, int(budget))


# --------------------------------------------------------------------------
# CLT variance


def autocovariances(z, max_lag):
    """Biased sample autocovariances ``(1/H) sum_t z_t z_{t+h}`` of an already
    centred series, for ``h = 0 .. max_lag``."""
    z = np.asarray(z, dtype=float)
    H = len(z)
    L = min(max_lag, H - 1)
    return np.array([z[: H - h] @ z[h:] / H for h in range(L + 1)])


def bartlett_lrv(gamma):
    """Bartlett-tapered long-run variance from autocovariances ``gamma[0..L]``."""
    gamma = np.asarray(gamma, dtype=float)
    L = len(gamma) - 1
    w = 1.0 - np.arange(1, L + 1) / (L + 1)
    return float(gamma[0] + 2.0 * (w * gamma[1:]).sum())


@dataclass
class CltEstimate:
    """Unpacks as ``(sigma2_T, sigma2_xi, lag_profile)``."""

    sigma2_T: float
    sigma2_T_stderr: float
    sigma2_xi: float
    v_P: float
    horizon: int
    lag_cap: int
    replicas: int
    autocov: np.ndarray = field(repr=False)
    lag_profile: np.ndarray = field(repr=False)
    warning: bool = False
    degenerate: bool = False
    notes: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.sigma2_T, self.sigma2_xi, self.lag_profile))


def clt_sigma(model, horizon, lag_cap=None, replicas=50, seed=0, v_P=None):
    """Long-run variance of the centred crossing times ``tau_n - 1/v_P``.

    Each replica samples an environment, starts the walk from the limit
    law ``pi`` at layer 0 and records ``tau_1 .. tau_horizon``.
    Autocovariances are pooled across replicas and combined with a
    Bartlett taper up to ``lag_cap`` (default ``sqrt(horizon)``).

    ``lag_profile[L]`` is the untapered partial sum
    ``gamma_0 + 2 (gamma_1 + ... + gamma_L)``.  A nonpositive estimate is
    returned as is with ``warning=True``; constant crossing times set
    ``degenerate=True``.
    """
    if horizon < 2 or replicas < 1:
        raise ValueError("need horizon >= 2 and replicas >= 1")
    if v_P is None:
        v_P = speed(model, "ensemble", 20_000, seed=derive_seed(seed, "clt-speed")).v
    L = int(lag_cap) if lag_cap is not None else int(math.isqrt(horizon))
    L = max(0, min(L, horizon - 1))
    per = np.empty((replicas, L + 1))
    tau_var = 0.0
    for i in range(replicas):
        traj, _ = simulate_model(model, derive_seed(seed, "clt", i), "pi", target=horizon)
        tau = traj.crossings.astype(float)
        tau_var = max(tau_var, float(tau.var()))
        per[i] = autocovariances(tau - 1.0 / v_P, L)
    gamma = per.mean(axis=0)
    s2 = bartlett_lrv(gamma)
    each = np.array([bartlett_lrv(g) for g in per])
    se = float(each.std(ddof=1) / np.sqrt(replicas)) if replicas > 1 else float("nan")
    profile = gamma[0] + 2.0 * np.concatenate([[0.0], np.cumsum(gamma[1:])])
    notes = []
    warning = s2 <= 0
    if warning:
        notes.append("nonpositive plug-in variance (small-sample artifact)")
    degenerate = tau_var == 0.0
    if degenerate:
        notes.append("crossing times are constant; the variance is degenerate")
    return CltEstimate(
        s2, se, s2 * v_P**3, float(v_P), int(horizon), L, int(replicas), gamma, profile, bool(warning), degenerate, notes
    )


# --------------------------------------------------------------------------
# decay diagnostics


@dataclass
class DecayRate:
    """Least-squares slope of ``log E X_n`` against ``n``."""

    slope: float
    stderr: float
    passed: bool
    n: np.ndarray = field(repr=False)
    curve: np.ndarray = field(repr=False)
    method: str = "monte-carlo"

    def as_dict(self):
        return {
            "slope": _num(self.slope),
            "stderr": _num(self.stderr),
            "passed": self.passed,
            "method": self.method,
        }


def _log_mean_exp(logs, axis=0):
    return logsumexp(logs, axis=axis) - np.log(logs.shape[axis])


def _slope(n, curve):
    if np.any(np.isneginf(curve)):
        return -np.inf
    return float(np.polyfit(n, curve, 1)[0])


def _decay_rate(logs, groups, method="monte-carlo"):
    """``logs`` is ``(replicas, n_max)``: log X_n per replica for n = 1..n_max."""
    R, n_max = logs.shape
    n = np.arange(1, n_max + 1)
    curve = _log_mean_exp(logs)
    slope = _slope(n, curve)
    if np.isneginf(slope):
        return DecayRate(-np.inf, 0.0, True, n, curve, method)
    G = max(2, min(groups, R))
    sl = np.array([_slope(n, _log_mean_exp(g)) for g in np.array_split(logs, G)])
    sl = sl[np.isfinite(sl)]
    se = float(sl.std(ddof=1) / np.sqrt(len(sl))) if len(sl) > 1 else float("nan")
    return DecayRate(slope, se, bool(slope + 3 * se < 0), n, curve, method)


def _exact_scalar_rates(model, n_max):
    """Closed-form rates for d = 1 i.i.d. models transient to the right.

    Then every exit probability is 1, so ``a_n = q_n / p_n`` depends on the
    letter at n only and ``E prod a^m = (E a^m)^n``.
    """
    if model.d != 1 or model.kind != "iid":
        return None
    P, _, Q = model.stacks
    rho = Q[:, 0, 0] / P[:, 0, 0]
    w = model.weights
    if w @ np.log(rho) >= 0:
        return None
    n = np.arange(1, n_max + 1)
    out = []
    for m in (1, 2):
        rate = float(np.log(w @ rho**m))
        out.append(DecayRate(rate, 0.0, rate < 0, n, n * rate, "exact-scalar"))
    out.append(DecayRate(-np.inf, 0.0, True, n, np.full(n_max, -np.inf), "exact-scalar"))
    return out


@dataclass
class DiagnosticsReport:
    """Decay rates of ``E||a_0..a_{n-1}||``, ``E||a_0..a_{n-1}||^2`` and
    ``E(c_0..c_{n-1})``."""

    first_moment: DecayRate
    second_moment: DecayRate
    contraction: DecayRate
    n_max: int
    replicas: int
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return self.first_moment.passed and self.second_moment.passed and self.contraction.passed

    def as_dict(self):
        return {
            "first_moment": self.first_moment.as_dict(),
            "second_moment": self.second_moment.as_dict(),
            "contraction": self.contraction.as_dict(),
            "n_max": self.n_max,
            "replicas": self.replicas,
            "notes": list(self.notes),
        }


def condition_diagnostics(model, n_max=40, replicas=4000, seed=0, groups=20, burn_in=LYAP_BURN_IN, exact=True):
    """Empirical decay rates behind the moment and contraction hypotheses.

    A rate passes when its slope plus three standard errors is negative;
    the standard error comes from splitting the replicas into ``groups``.
    For d = 1 i.i.d. models transient to the right the rates are computed
    in closed form (unless ``exact=False``); Monte Carlo averages of
    ``||.||^2`` are dominated by rare letter runs and underestimate the
    growth of heavy-tailed products.
    """
    _, notes = _require_condition(model)
    if exact:
        ex = _exact_scalar_rates(model, n_max)
        if ex is not None:
            return DiagnosticsReport(*ex, n_max, 0, notes)
    letters = draw_letters(model, rng_for(seed, "diagnostics"), (replicas, burn_in + n_max))
    la = np.empty((replicas, n_max))
    lc = np.empty((replicas, n_max))
    step = max(1, BATCH // 4)
    for s in range(0, replicas, step):
        eta, _, a, _ = _batched_recursion(model, letters[s : s + step])
        la[s : s + step] = cumulative_log_norms(a[:, burn_in:], "right")
        with np.errstate(divide="ignore"):
            lc[s : s + step] = np.cumsum(np.log(c_coefficients(eta[:, burn_in:])), axis=1)
    return DiagnosticsReport(
        _decay_rate(la, groups), _decay_rate(2 * la, groups), _decay_rate(lc, groups), n_max, replicas, notes
    )


def left_exit_decay(model, n_max=30, replicas=100, seed=0, groups=10, right=2048):
    """Decay rate of ``E||eta^-_0 eta^-_{-1} ... eta^-_{-n+1}||``, the
    probability of descending ``n`` layers."""
    _require_condition(model)
    logs = np.empty((replicas, n_max))
    for i in range(replicas):
        w = sample_window(model, -n_max - 1, right, derive_seed(seed, "left-exit", i))
        le = left_exit(w, 0, n_max)
        logs[i] = cumulative_log_norms(le.stack, "right")
    return _decay_rate(logs, groups)


# --------------------------------------------------------------------------
# report


def _num(x):
    if x is None:
        return None
    x = float(x)
    if math.isinf(x):
        return "-inf" if x < 0 else "inf"
    if math.isnan(x):
        return "nan"
    return x


@dataclass
class AsymptoticsReport:
    lambda_mean: float
    lambda_stderr: float
    transience_verdict: str
    v_P: float = None
    v_P_stderr: float = None
    sigma2_T: float = None
    sigma2_T_stderr: float = None
    sigma2_xi: float = None
    diagnostics: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.transience_verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.transience_verdict!r}")

    def to_dict(self):
        d = asdict(self)
        for k in ("lambda_mean", "lambda_stderr", "v_P", "v_P_stderr", "sigma2_T", "sigma2_T_stderr", "sigma2_xi"):
            d[k] = _num(d[k])
        return d

    def to_json(self, **kw):
        kw.setdefault("indent", 2)
        kw.setdefault("sort_keys", True)
        return json.dumps(self.to_dict(), **kw)


def analyze(
    model,
    seed=0,
    *,
    chain_length=2000,
    lyap_replicas=32,
    speed_budget=20_000,
    clt_horizon=2000,
    clt_replicas=50,
    diag_n_max=40,
    diag_replicas=2000,
    diagnostics=True,
):
    """Run the Lyapunov, speed, CLT and diagnostic estimators on one model."""
    lam = lyapunov(model, chain_length, lyap_replicas, derive_seed(seed, "lyapunov"))
    verdict = lam.verdict
    budgets = {
        "chain_length": chain_length,
        "lyap_replicas": lyap_replicas,
        "speed_budget": speed_budget,
        "clt_horizon": clt_horizon,
        "clt_replicas": clt_replicas,
        "diag_n_max": diag_n_max,
        "diag_replicas": diag_replicas,
    }
    prov = {
        "model_hash": model.model_hash,
        "model_name": model.name,
        "master_seed": int(seed),
        "seed_scheme": SEED_SCHEME_VERSION,
        "budgets": budgets,
    }
    report = AsymptoticsReport(lam.mean, lam.stderr, verdict, flags=list(lam.notes), provenance=prov)
    if diagnostics:
        report.diagnostics = condition_diagnostics(
            model, diag_n_max, diag_replicas, derive_seed(seed, "diagnostics")
        ).as_dict()
    if verdict != "transient-right":
        return report
    sp = speed(model, "ensemble", speed_budget, seed=derive_seed(seed, "speed"), check=False)
    report.v_P, report.v_P_stderr = sp.v, sp.stderr
    clt = clt_sigma(model, clt_horizon, None, clt_replicas, derive_seed(seed, "clt"), v_P=sp.v)
    report.sigma2_T, report.sigma2_T_stderr, report.sigma2_xi = clt.sigma2_T, clt.sigma2_T_stderr, clt.sigma2_xi
    report.flags.extend(clt.notes)
    return report
