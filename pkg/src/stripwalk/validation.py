"""Acceptance battery: oracle cross-checks and Monte Carlo consistency tests.

Every check returns a :class:`CheckResult` naming the property, the inputs,
and the achieved versus required tolerance.  ``level='full'`` runs the
stated budgets, ``level='fast'`` smaller ones with unchanged tolerances.
The d = 2 model used throughout is :func:`stripwalk.catalog.coupled_d2`.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import catalog
from .asymptotics import (
    clt_sigma,
    condition_diagnostics,
    crossing_moments,
    left_exit_decay,
    lyapunov,
    speed,
)
from .env import sample_window
from .exitprob import absorption_oracle, solve_eta
from .seeding import derive_seed, rng_for
from .walker import evfp_replicas, extract_renewals, q_reference, select_istar, simulate_model

BUDGETS = {
    "fast": {
        "oracle_windows": 40,
        "seed_windows": 20,
        "scalar_draws": 100_000,
        "speed_budget": 20_000,
        "lln_n": 100_000,
        "lln_seeds": 20,
        "clt_n": 2_000,
        "clt_replicas": 400,
        "xi_n": 20_000,
        "renewal_steps": 200_000,
        "evfp_excursions": 20_000,
        "left_replicas": 40,
        "diag_replicas": 2_000,
        "moment_inputs": 100,
    },
    "full": {
        "oracle_windows": 200,
        "seed_windows": 50,
        "scalar_draws": 100_000,
        "speed_budget": 20_000,
        "lln_n": 1_000_000,
        "lln_seeds": 20,
        "clt_n": 10_000,
        "clt_replicas": 1_000,
        "xi_n": 100_000,
        "renewal_steps": 1_000_000,
        "evfp_excursions": 100_000,
        "left_replicas": 100,
        "diag_replicas": 4_000,
        "moment_inputs": 500,
    },
}


@dataclass
class CheckResult:
    criterion: int
    name: str
    passed: bool
    achieved: dict
    required: str
    inputs: dict = field(default_factory=dict)
    seconds: float = 0.0
    detail: str = ""

    def line(self):
        ach = ", ".join(f"{k}={_fmt(v)}" for k, v in self.achieved.items())
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.criterion:2d} {self.name}: {ach} (required {self.required}; {self.seconds:.1f}s)"

    def as_dict(self):
        return {
            "criterion": self.criterion,
            "name": self.name,
            "passed": bool(self.passed),
            "achieved": {k: _plain(v) for k, v in self.achieved.items()},
            "required": self.required,
            "inputs": {k: _plain(v) for k, v in self.inputs.items()},
            "seconds": round(self.seconds, 3),
            "detail": self.detail,
        }


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _plain(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


class Context:
    """Budgets, the shared d = 2 model and memoised speed/CLT estimates."""

    def __init__(self, level="fast", seed=0):
        if level not in BUDGETS:
            raise ValueError(f"level must be one of {sorted(BUDGETS)}")
        self.level = level
        self.seed = int(seed)
        self.b = BUDGETS[level]
        self.model = catalog.coupled_d2()
        self._speed = None
        self._clt = None

    def speed(self):
        if self._speed is None:
            self._speed = speed(
                self.model, "ensemble", self.b["speed_budget"], seed=derive_seed(self.seed, "v-speed"), check=False
            )
        return self._speed

    def clt(self):
        if self._clt is None:
            self._clt = clt_sigma(
                self.model,
                self.b["clt_n"],
                None,
                self.b["clt_replicas"],
                derive_seed(self.seed, "v-clt"),
                v_P=self.speed().v,
            )
        return self._clt


# --------------------------------------------------------------------------
# 1, 2: exit matrices


def check_oracle_equivalence(ctx):
    """solve_eta against the sparse absorbing-chain solve on random windows."""
    rng = rng_for(ctx.seed, "v-oracle")
    n_win = ctx.b["oracle_windows"]
    worst, where = 0.0, None
    for i in range(n_win):
        d = 1 + i % 4
        model = catalog.random_iid_model(d, rng)
        w = sample_window(model, -160, 12, derive_seed(ctx.seed, "v-oracle-window", i))
        es = solve_eta(w)
        for n in (0, 5, 10):
            o = absorption_oracle(w, n + 1, (n, None))
            dev = float(np.max(np.abs(es.at(n).eta - o.exit_dist)))
            if dev > worst:
                worst, where = dev, {"window": i, "d": d, "layer": n}
    return CheckResult(
        1,
        "exit-matrix oracle equivalence",
        worst <= 1e-8,
        {"max_deviation": worst},
        "<= 1e-8",
        {"windows": n_win, "d": "1..4", "worst_at": where},
    )


def check_seed_uniqueness(ctx):
    """Identity, uniform and random stochastic seeds give the same records."""
    rng = rng_for(ctx.seed, "v-seeds")
    n_win = ctx.b["seed_windows"]
    worst = 0.0
    for i in range(n_win):
        d = 1 + i % 4
        model = catalog.random_iid_model(d, rng)
        w = sample_window(model, -400, 20, derive_seed(ctx.seed, "v-seeds-window", i))
        runs = [solve_eta(w, seed_matrix=S) for S in (np.eye(d), None, rng.dirichlet(np.ones(d), size=d))]
        lo = max(r.start for r in runs)
        for r in runs[1:]:
            a = runs[0].eta[runs[0].offset(lo) :]
            b = r.eta[r.offset(lo) :]
            worst = max(worst, float(np.max(np.abs(a - b))))
    return CheckResult(
        2,
        "fixed-point uniqueness",
        worst <= 1e-10,
        {"max_seed_disagreement": worst},
        "<= 1e-10",
        {"windows": n_win, "seeds": "identity, uniform, random"},
    )


# --------------------------------------------------------------------------
# 3: closed forms


def check_scalar_closed_forms(ctx):
    m = catalog.homogeneous_scalar()
    lam = lyapunov(m, 2000, 8, derive_seed(ctx.seed, "v-scalar-lyap"))
    v = speed(m, "ensemble", 1000, seed=derive_seed(ctx.seed, "v-scalar-speed")).v
    es = solve_eta(sample_window(m, -300, 10, derive_seed(ctx.seed, "v-scalar-window")))
    cm = crossing_moments(es, 0)
    p = np.array([0.7, 0.8])
    ref = (1 - np.mean((1 - p) / p)) / np.mean(1 / p)
    n = ctx.b["scalar_draws"]
    v2 = speed(catalog.two_atom_scalar((0.7, 0.8)), "ensemble", n, seed=derive_seed(ctx.seed, "v-scalar-iid"))
    errs = {
        "lambda_err": abs(lam.mean + math.log(2)),
        "v_err": abs(v - 1 / 3),
        "u0_err": float(abs(cm.u0[0] - 3)),
        "w0_err": float(abs(cm.w0[0] - 33)),
        "iid_v": v2.v,
        "iid_v_err": abs(v2.v - ref),
    }
    ok = (
        errs["lambda_err"] <= 1e-12
        and errs["v_err"] <= 1e-12
        and errs["u0_err"] <= 1e-9
        and errs["w0_err"] <= 1e-9
        and errs["iid_v_err"] <= 1e-3
    )
    return CheckResult(
        3,
        "d=1 closed forms",
        ok,
        errs,
        "lambda, v within 1e-12; u0, w0 within 1e-9; iid v within 1e-3",
        {"iid_draws": n, "iid_reference": float(ref)},
    )


# --------------------------------------------------------------------------
# 4-6: LLN, CLT, variance transfer


def check_lln(ctx):
    sp, clt = ctx.speed(), ctx.clt()
    n, seeds = ctx.b["lln_n"], ctx.b["lln_seeds"]
    se = math.sqrt(max(clt.sigma2_xi, 0.0) / n + sp.stderr**2)
    z = []
    for s in range(seeds):
        traj, _ = simulate_model(ctx.model, derive_seed(ctx.seed, "v-lln", s), "pi", horizon=n)
        z.append((traj.xi[-1] / n - sp.v) / se)
    z = np.array(z)
    inside = int(np.sum(np.abs(z) <= 3))
    need = math.ceil(0.9 * seeds)
    return CheckResult(
        4,
        "law of large numbers",
        inside >= need,
        {"within_3se": inside, "max_abs_z": float(np.max(np.abs(z))), "v_P": sp.v},
        f">= {need} of {seeds} seeds within 3 combined stderr",
        {"n": n, "combined_stderr": se},
    )


def _hitting_times(model, level, replicas, seed, label, start):
    return np.array(
        [simulate_model(model, derive_seed(seed, label, i), start, target=level)[0].horizon for i in range(replicas)],
        dtype=float,
    )


def check_clt(ctx):
    n, R = ctx.b["clt_n"], ctx.b["clt_replicas"]
    T = _hitting_times(catalog.homogeneous_scalar(), n, R, ctx.seed, "v-clt-scalar", 0)
    ks = stats.kstest((T - 3 * n) / np.sqrt(24 * n), "norm")
    sp, clt = ctx.speed(), ctx.clt()
    T2 = _hitting_times(ctx.model, n, R, ctx.seed, "v-clt-d2", "pi")
    emp = float(np.var(T2 - n / sp.v, ddof=1) / n)
    rel = abs(emp / clt.sigma2_T - 1)
    return CheckResult(
        5,
        "hitting-time CLT",
        ks.pvalue > 0.01 and rel <= 0.15,
        {"ks_p_scalar": float(ks.pvalue), "empirical_var": emp, "sigma2_T": clt.sigma2_T, "rel_err": rel},
        "KS p > 0.01; relative error <= 0.15",
        {"n": n, "replicas": R, "lag_cap": clt.lag_cap},
    )


def check_variance_transfer(ctx):
    n, R = ctx.b["xi_n"], ctx.b["clt_replicas"]
    clt = ctx.clt()
    xi = np.array(
        [simulate_model(ctx.model, derive_seed(ctx.seed, "v-xi", i), "pi", horizon=n)[0].xi[-1] for i in range(R)],
        dtype=float,
    )
    emp = float(np.var(xi, ddof=1) / n)
    rel = abs(emp / clt.sigma2_xi - 1)
    return CheckResult(
        6,
        "variance transfer",
        rel <= 0.15,
        {"empirical_var": emp, "sigma2_T_v3": clt.sigma2_xi, "rel_err": rel},
        "relative error <= 0.15",
        {"n": n, "replicas": R},
    )


# --------------------------------------------------------------------------
# 7-9: renewals, environment seen from the walker, left exits


def _lag1(x):
    x = np.asarray(x, dtype=float) - np.mean(x)
    den = x @ x
    return float(x[:-1] @ x[1:] / den) if den > 0 else 0.0


def check_renewals(ctx):
    steps = ctx.b["renewal_steps"]
    i_star, _, _ = select_istar(ctx.model, 4000, derive_seed(ctx.seed, "v-istar"))
    traj, _ = simulate_model(ctx.model, derive_seed(ctx.seed, "v-renewal"), i_star, horizon=steps)
    rec = extract_renewals(traj, i_star)
    inc = rec.increments
    K = len(inc)
    bound = 3 / math.sqrt(K) if K else 0.0
    ach = {"increments": K}
    ok = K >= 20
    for col, name in ((0, "dxi"), (1, "drho")):
        x = inc[:, col]
        r = _lag1(x)
        p = float(stats.ks_2samp(x[: K // 2], x[K // 2 :]).pvalue)
        ach[f"lag1_{name}"] = r
        ach[f"ks_p_{name}"] = p
        ok = ok and abs(r) <= bound and p > 0.01
    return CheckResult(
        7,
        "renewal structure",
        ok,
        ach,
        f"|lag-1| <= 3/sqrt(K) = {bound:.4f}; KS p > 0.01",
        {"steps": steps, "i_star": i_star, "guard": rec.guard},
    )


def check_evfp(ctx):
    exc = ctx.b["evfp_excursions"]
    q = q_reference(ctx.model, 1, exc, derive_seed(ctx.seed, "v-qref"))
    reps = max(1, math.ceil(q.total / 10_000))
    tv = []
    for n in (100, 1000, 10_000):
        h = evfp_replicas(ctx.model, 1, (n, 2 * n), reps, derive_seed(ctx.seed, "v-evfp", n))
        tv.append(q.tv(h))
    ok = tv[2] <= 0.05 and tv[0] > tv[1] > tv[2]
    return CheckResult(
        8,
        "environment seen from the walker",
        ok,
        {"tv_n100": tv[0], "tv_n1000": tv[1], "tv_n10000": tv[2], "discarded": q.meta["discarded"]},
        "TV at n=1e4 <= 0.05; TV decreasing in n",
        {"excursions": exc, "radius": 1, "replicas_per_n": reps},
    )


def check_left_exit(ctx):
    R = ctx.b["left_replicas"]
    rate = left_exit_decay(ctx.model, 30, R, derive_seed(ctx.seed, "v-left"))
    return CheckResult(
        9,
        "left-exit decay",
        rate.passed,
        {"slope": rate.slope, "stderr": rate.stderr},
        "slope + 3 stderr < 0",
        {"n_max": 30, "replicas": R},
    )


# --------------------------------------------------------------------------
# 10, 11: diagnostics and moments


def check_diagnostics(ctx):
    R = ctx.b["diag_replicas"]
    good = condition_diagnostics(catalog.diagnostics_pass_model(), 40, R, derive_seed(ctx.seed, "v-diag"))
    p = np.array([0.51, 0.9])
    e_rho2 = float(np.mean(((1 - p) / p) ** 2))
    named = condition_diagnostics(catalog.two_atom_scalar(tuple(p)), 40, R, derive_seed(ctx.seed, "v-diag"))
    bad = condition_diagnostics(catalog.second_moment_fail_model(), 40, R, derive_seed(ctx.seed, "v-diag"))
    ok = (
        good.passed
        and named.second_moment.passed == (e_rho2 < 1)
        and bad.first_moment.passed
        and not bad.second_moment.passed
    )
    return CheckResult(
        10,
        "condition diagnostics",
        ok,
        {
            "pass_model_rates": [good.first_moment.slope, good.second_moment.slope, good.contraction.slope],
            "p051_09_E_rho2": e_rho2,
            "p051_09_second_passed": named.second_moment.passed,
            "p04_09_second_rate": bad.second_moment.slope,
        },
        "pass model passes all; scalar models classified by exact moment growth",
        {"replicas": R, "n_max": 40},
        detail="p in {0.51, 0.9} has E rho^2 < 1 and passes; p in {0.4, 0.9} is the failing scalar model",
    )


def check_moment_sanity(ctx):
    rng = rng_for(ctx.seed, "v-moments")
    N = ctx.b["moment_inputs"]
    min_gap, min_u0 = np.inf, np.inf
    for i in range(N):
        d = 1 + i % 4
        model = catalog.random_iid_model(d, rng)
        es = solve_eta(sample_window(model, -600, 4, derive_seed(ctx.seed, "v-moments-window", i)))
        cm = crossing_moments(es, 0)
        min_gap = min(min_gap, float(np.min(cm.w0 - cm.u0**2)))
        min_u0 = min(min_u0, float(np.min(cm.u0)))
    return CheckResult(
        11,
        "moment sanity",
        min_gap >= 0 and min_u0 >= 1,
        {"min_w0_minus_u0sq": min_gap, "min_u0": min_u0},
        "w0 >= u0^2 and u0 >= 1 entrywise",
        {"inputs": N},
    )


CHECKS = {
    1: check_oracle_equivalence,
    2: check_seed_uniqueness,
    3: check_scalar_closed_forms,
    4: check_lln,
    5: check_clt,
    6: check_variance_transfer,
    7: check_renewals,
    8: check_evfp,
    9: check_left_exit,
    10: check_diagnostics,
    11: check_moment_sanity,
}


def run_check(criterion, ctx):
    """Run one check; an exception becomes a failing row with the error text."""
    fn = CHECKS[criterion]
    t0 = time.perf_counter()
    try:
        res = fn(ctx)
    except Exception as exc:  # failures are results
        res = CheckResult(criterion, fn.__name__.removeprefix("check_").replace("_", " "), False, {}, "no error",
                          detail=f"{type(exc).__name__}: {exc}")
    res.seconds = time.perf_counter() - t0
    res.inputs.setdefault("level", ctx.level)
    res.inputs.setdefault("master_seed", ctx.seed)
    return res


def validate_suite(level="fast", master_seed=0, only=None, report=None):
    """Run the acceptance battery; returns one :class:`CheckResult` per criterion.

    ``report`` is an optional callable invoked with each result as it finishes.
    """
    ctx = Context(level, master_seed)
    out = []
    for c in sorted(CHECKS if only is None else only):
        res = run_check(c, ctx)
        if report is not None:
            report(res)
        out.append(res)
    return out
