"""Scenario configuration, task dispatch and report bundles.

A scenario is one YAML document::

    task: speed                 # classify|speed|moments|lln|clt|renewal|evfp|validate
    model: {catalog: coupled_d2}  # or an inline model, or a path to a model file
    master_seed: 7
    output: out/speed
    budgets: {speed_budget: 20000}
    tolerances: {series: 1.0e-12}
    options: {estimator: ensemble}

Running a scenario writes ``summary.json`` plus task-specific CSV files to
the output directory.  The summary is a pure function of the configuration:
run times go to a separate ``timing.json``.
"""

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import catalog
from .asymptotics import (
    clt_sigma,
    condition_diagnostics,
    crossing_moments,
    lyapunov,
    speed,
    transience_verdict,
)
from .env import EnvironmentModel, check_condition_C, load_model, sample_window
from .errors import ConfigError, StripWalkError, TaskError
from .exitprob import absorption_oracle, solve_eta, verify_C4
from .seeding import SEED_SCHEME_VERSION, derive_seed
from .validation import validate_suite
from .walker import evfp_replicas, extract_renewals, q_reference, select_istar, simulate_model

SCHEMA_VERSION = 1
TASKS = ("classify", "speed", "moments", "lln", "clt", "renewal", "evfp", "validate")

DEFAULT_BUDGETS = {
    "chain_length": 2000,
    "lyap_replicas": 32,
    "speed_budget": 20_000,
    "diag_n_max": 40,
    "diag_replicas": 2000,
    "window_left": 600,
    "horizon": 100_000,
    "replicas": 20,
    "clt_horizon": 2000,
    "clt_replicas": 100,
    "renewal_steps": 1_000_000,
    "guard": 50,
    "istar_budget": 4000,
    "radius": 1,
    "excursions": 20_000,
    "evfp_start": 10_000,
    "evfp_replicas": 20,
}
DEFAULT_TOLERANCES = {"series": 1e-12, "collapse": 1e-10}
DEFAULT_OPTIONS = {"estimator": "ensemble", "level": "fast", "lag_cap": None, "diagnostics": True, "only": None}
CATALOG = {
    "homogeneous_scalar": catalog.homogeneous_scalar,
    "two_atom_scalar": catalog.two_atom_scalar,
    "deterministic_drift": catalog.deterministic_drift,
    "coupled_d2": catalog.coupled_d2,
    "height_swap_symmetric": catalog.height_swap_symmetric,
    "second_moment_fail": catalog.second_moment_fail_model,
}


@dataclass
class ScenarioConfig:
    task: str
    model: object = None
    master_seed: int = 0
    output: str = "out"
    budgets: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    source: str = ""

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {', '.join(TASKS)}")
        seed = int(self.master_seed)
        if not 0 <= seed < 2**64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        self.master_seed = seed
        unknown = set(self.budgets) - set(DEFAULT_BUDGETS)
        if unknown:
            raise ConfigError(f"unknown budgets: {sorted(unknown)}")
        self.budgets = {**DEFAULT_BUDGETS, **self.budgets}
        for k, v in self.budgets.items():
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v <= 0:
                raise ConfigError(f"budget {k} must be a positive integer, got {v!r}")
        self.tolerances = {**DEFAULT_TOLERANCES, **self.tolerances}
        for k, v in self.tolerances.items():
            if not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(f"tolerance {k} must be positive, got {v!r}")
        self.options = {**DEFAULT_OPTIONS, **self.options}
        if self.options["estimator"] not in ("ensemble", "spatial"):
            raise ConfigError("options.estimator must be 'ensemble' or 'spatial'")
        if self.options["level"] not in ("fast", "full"):
            raise ConfigError("options.level must be 'fast' or 'full'")
        if self.task != "validate" and self.model is None:
            raise ConfigError(f"task {self.task!r} needs a model")

    @classmethod
    def from_dict(cls, doc, source=""):
        if not isinstance(doc, dict):
            raise ConfigError("scenario document must be a mapping")
        known = {"task", "model", "master_seed", "output", "budgets", "tolerances", "options"}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown keys: {sorted(extra)}")
        if "task" not in doc:
            raise ConfigError("scenario needs a task")
        return cls(
            task=doc["task"],
            model=doc.get("model"),
            master_seed=doc.get("master_seed", 0),
            output=doc.get("output", "out"),
            budgets=dict(doc.get("budgets") or {}),
            tolerances=dict(doc.get("tolerances") or {}),
            options=dict(doc.get("options") or {}),
            source=source,
        )

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            doc = yaml.safe_load(fh)
        return cls.from_dict(doc, source=str(path))

    def resolve_model(self):
        """Return the EnvironmentModel named by ``model``."""
        m = self.model
        if m is None:
            return None
        if isinstance(m, EnvironmentModel):
            return m
        if isinstance(m, str):
            p = Path(m)
            if not p.is_absolute() and self.source:
                p = Path(self.source).parent / p
            return load_model(p)
        if isinstance(m, dict) and "catalog" in m:
            name = m["catalog"]
            if name not in CATALOG:
                raise ConfigError(f"unknown catalog model {name!r}; known: {sorted(CATALOG)}")
            return CATALOG[name](**{k: v for k, v in m.items() if k != "catalog"})
        if isinstance(m, dict):
            return EnvironmentModel.from_dict(m)
        raise ConfigError("model must be a mapping or a path")

    def as_dict(self):
        m = self.model
        if isinstance(m, EnvironmentModel):
            m = m.to_dict()
        return {
            "task": self.task,
            "model": m,
            "master_seed": self.master_seed,
            "output": self.output,
            "budgets": dict(self.budgets),
            "tolerances": dict(self.tolerances),
            "options": dict(self.options),
        }


@dataclass
class ReportBundle:
    summary: dict
    files: dict
    out_dir: str
    schema_version: int = SCHEMA_VERSION

    @property
    def passed(self):
        return bool(self.summary.get("passed", True))


# --------------------------------------------------------------------------
# output helpers


def _num(x):
    if x is None:
        return None
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "-inf" if x < 0 else "inf"
    return x


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (float, int, np.floating, np.integer, np.bool_)) and not isinstance(obj, bool):
        return _num(obj)
    return obj


def _estimate(value, stderr, budget, kind="stderr"):
    """``kind`` names the uncertainty: a Monte Carlo standard error, or a
    deterministic bound such as a series tail."""
    return {"value": value, kind: stderr, "budget": budget}


class _Writer:
    """Collects output files and stamps each with the seed and model hash."""

    def __init__(self, out_dir, seed, model_hash):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.stamp = f"# master_seed={seed} model_hash={model_hash} schema_version={SCHEMA_VERSION}\n"
        self.provenance = {"master_seed": seed, "model_hash": model_hash, "schema_version": SCHEMA_VERSION}
        self.files = {}
        self.progress = None

    def path(self, name):
        return self.out / name

    def csv(self, name, writer):
        """``writer(path)`` writes a plain CSV; the stamp line is prepended."""
        p = self.path(name)
        writer(p)
        body = p.read_text()
        p.write_text(self.stamp + body)
        self.files[name] = str(p)
        return p

    def stamp_json(self, name):
        """Wrap a JSON file written elsewhere with the provenance fields."""
        p = self.path(name)
        body = json.loads(p.read_text())
        p.write_text(json.dumps({**self.provenance, "data": body}, indent=1, sort_keys=True) + "\n")
        self.files[name] = str(p)

    def rows(self, name, header, rows):
        def w(p):
            with open(p, "w", newline="") as fh:
                out = csv.writer(fh)
                out.writerow(header)
                out.writerows([["" if v is None else _num(v) if isinstance(v, float) else v for v in r] for r in rows])

        return self.csv(name, w)


# --------------------------------------------------------------------------
# tasks


def _task_classify(cfg, model, W):
    b, seed = cfg.budgets, cfg.master_seed
    rep = check_condition_C(model)
    lam = lyapunov(model, b["chain_length"], b["lyap_replicas"], derive_seed(seed, "lyapunov"))
    verdict = transience_verdict(lam.mean, lam.stderr)
    win = sample_window(model, -b["window_left"], 8, derive_seed(seed, "env"))
    es = solve_eta(win)
    c4 = verify_C4(es)
    W.rows("lyapunov.csv", ["replica", "lambda"], [(i, float(v)) for i, v in enumerate(lam.values)])
    res = {
        "lambda": _estimate(lam.mean, lam.stderr, {"chain_length": lam.chain_length, "replicas": lam.replicas}),
        "transience_verdict": verdict,
        "condition_C": rep.as_dict(),
        "C4": {"passed": c4.passed, "min_entry": c4.min_entry, "window": [win.L, win.R], "certified": es.certified},
        "notes": lam.notes,
    }
    if cfg.options.get("diagnostics"):
        res["diagnostics"] = condition_diagnostics(
            model, b["diag_n_max"], b["diag_replicas"], derive_seed(seed, "diagnostics")
        ).as_dict()
    return res


def _task_speed(cfg, model, W):
    b, seed = cfg.budgets, cfg.master_seed
    est = cfg.options["estimator"]
    sp = speed(model, est, b["speed_budget"], cfg.tolerances["series"], derive_seed(seed, "speed"))
    W.rows(
        "speed.csv",
        ["estimator", "budget", "v_P", "stderr", "mean_crossing_time", "mean_crossing_time_stderr"],
        [(est, sp.budget, sp.v, sp.stderr, sp.mean_time, sp.mean_time_stderr)],
    )
    budget = {"estimator": est, "budget": sp.budget}
    return {
        "v_P": _estimate(sp.v, sp.stderr, budget),
        "mean_crossing_time": _estimate(sp.mean_time, sp.mean_time_stderr, budget),
    }


def _task_moments(cfg, model, W):
    b, seed = cfg.budgets, cfg.master_seed
    win = sample_window(model, -b["window_left"], 8, derive_seed(seed, "env"))
    es = solve_eta(win)
    cm = crossing_moments(es, 0, cfg.tolerances["series"])
    orc = absorption_oracle(win, 1, (0, None))
    W.csv("eta.csv", es.to_csv)
    W.rows(
        "moments.csv",
        ["height", "u0", "w0", "oracle_u0", "oracle_w0"],
        [(i, float(cm.u0[i]), float(cm.w0[i]), float(orc.mean_time[i]), float(orc.second_moment_time[i]))
         for i in range(model.d)],
    )
    budget = {"window": [win.L, win.R], "burn_in": es.burn_in}
    return {
        "u0": _estimate(cm.u0, cm.tail_bound, {**budget, "terms": cm.truncation_depth}, "tail_bound"),
        "w0": _estimate(cm.w0, cm.w_tail_bound, {**budget, "terms": cm.w_depth}, "tail_bound"),
        "oracle": {
            "max_dev_u0": float(np.max(np.abs(cm.u0 - orc.mean_time))),
            "max_dev_w0": float(np.max(np.abs(cm.w0 - orc.second_moment_time))),
            "depth": orc.depth,
        },
        "seed_bound": es.seed_bound,
        "certified": es.certified,
    }


def _task_lln(cfg, model, W):
    b, seed = cfg.budgets, cfg.master_seed
    sp = speed(model, cfg.options["estimator"], b["speed_budget"], cfg.tolerances["series"], derive_seed(seed, "speed"))
    n, R = b["horizon"], b["replicas"]
    rows, ratio = [], []
    for i in range(R):
        traj, win = simulate_model(model, derive_seed(seed, "lln", i), "pi", horizon=n)
        if i == 0:
            W.csv("trajectory_0.csv", traj.to_csv)
        ratio.append(traj.xi[-1] / n)
        rows.append((i, int(traj.xi[-1]), float(ratio[-1])))
    ratio = np.array(ratio)
    W.rows("lln.csv", ["replica", "xi_n", "xi_over_n"], rows)
    se = float(ratio.std(ddof=1) / np.sqrt(R)) if R > 1 else float("nan")
    return {
        "v_P": _estimate(sp.v, sp.stderr, {"estimator": sp.estimator, "budget": sp.budget}),
        "xi_over_n": _estimate(float(ratio.mean()), se, {"horizon": n, "replicas": R}),
        "z": float((ratio.mean() - sp.v) / math.sqrt(se**2 + sp.stderr**2)) if R > 1 else None,
    }


def _task_clt(cfg, model, W):
    b, seed = cfg.budgets, cfg.master_seed
    sp = speed(model, cfg.options["estimator"], b["speed_budget"], cfg.tolerances["series"], derive_seed(seed, "speed"))
    clt = clt_sigma(model, b["clt_horizon"], cfg.options["lag_cap"], b["clt_replicas"], derive_seed(seed, "clt"), sp.v)
    W.rows(
        "lag_profile.csv",
        ["lag", "autocov", "partial_sum"],
        [(h, float(clt.autocov[h]), float(clt.lag_profile[h])) for h in range(len(clt.autocov))],
    )
    budget = {"horizon": clt.horizon, "replicas": clt.replicas, "lag_cap": clt.lag_cap}
    return {
        "v_P": _estimate(sp.v, sp.stderr, {"estimator": sp.estimator, "budget": sp.budget}),
        "sigma2_T": _estimate(clt.sigma2_T, clt.sigma2_T_stderr, budget),
        # delta method ignoring the (small) speed uncertainty
        "sigma2_xi": _estimate(clt.sigma2_xi, clt.sigma2_T_stderr * sp.v**3, budget),
        "warning": clt.warning,
        "degenerate": clt.degenerate,
        "notes": clt.notes,
    }


def _task_renewal(cfg, model, W):
    b, seed = cfg.budgets, cfg.master_seed
    i_star, est, se = select_istar(model, b["istar_budget"], derive_seed(seed, "istar"), b["guard"])
    traj, _ = simulate_model(model, derive_seed(seed, "renewal"), i_star, horizon=b["renewal_steps"])
    rec = extract_renewals(traj, i_star, b["guard"])
    W.csv("renewals.csv", rec.to_csv)
    inc = rec.increments
    K = len(inc)

    def mean_se(x):
        return _estimate(
            float(x.mean()) if K else None,
            float(x.std(ddof=1) / np.sqrt(K)) if K > 1 else None,
            {"increments": K, "steps": b["renewal_steps"]},
        )

    return {
        "i_star": i_star,
        "escape_by_height": {"value": est, "stderr": se},
        "escape_probability": _estimate(est[i_star], se[i_star], {"walks_per_height": b["istar_budget"], "guard": b["guard"]}),
        "renewals": len(rec),
        "mean_dxi": mean_se(inc[:, 0]) if K else None,
        "mean_drho": mean_se(inc[:, 1]) if K else None,
    }


def _task_evfp(cfg, model, W):
    b, seed = cfg.budgets, cfg.master_seed
    W_, n0 = b["radius"], b["evfp_start"]
    q = q_reference(model, W_, b["excursions"], derive_seed(seed, "qref"))
    half = b["excursions"] // 2
    qa = q_reference(model, W_, half, derive_seed(seed, "qref-a"))
    qb = q_reference(model, W_, half, derive_seed(seed, "qref-b"))
    h = evfp_replicas(model, W_, (n0, 2 * n0), b["evfp_replicas"], derive_seed(seed, "evfp"))
    W.csv("evfp.csv", lambda p: h.to_csv(p))
    W.csv("q_reference.csv", lambda p: q.to_csv(p, sidecar=W.path("signatures.json")))
    W.stamp_json("signatures.json")
    floor = qa.tv(qb)
    return {
        # the TV between two independent half-size references measures the sampling noise
        "tv": _estimate(q.tv(h), floor, {"excursions": b["excursions"], "replicas": b["evfp_replicas"],
                                         "time_range": [n0, 2 * n0], "radius": W_}, "noise_floor"),
        "height_marginal_q": q.height_marginal(model.d),
        "height_marginal_walk": h.height_marginal(model.d),
        "discarded_excursions": q.meta["discarded"],
    }


def _task_validate(cfg, model, W):
    only = cfg.options.get("only")
    rows = validate_suite(cfg.options["level"], cfg.master_seed, only=only, report=W.progress)
    W.rows(
        "validation.csv",
        ["criterion", "name", "passed", "required", "achieved"],
        [(r.criterion, r.name, r.passed, r.required, json.dumps(_clean(r.as_dict()["achieved"]), sort_keys=True))
         for r in rows],
    )
    table = []
    for r in rows:
        d = r.as_dict()
        d.pop("seconds")
        table.append(d)
    return {"rows": table, "passed": all(r.passed for r in rows), "_timing": {r.criterion: r.seconds for r in rows}}


_DISPATCH = {
    "classify": _task_classify,
    "speed": _task_speed,
    "moments": _task_moments,
    "lln": _task_lln,
    "clt": _task_clt,
    "renewal": _task_renewal,
    "evfp": _task_evfp,
    "validate": _task_validate,
}


def run_scenario(config, progress=None):
    """Run one scenario and write its report bundle.

    ``progress`` is an optional callable receiving each validation row as
    it finishes (task ``validate`` only).

    Raises
    ------
    TaskError
        Wrapping any package error, with the task name and configuration.
    """
    if isinstance(config, (str, os.PathLike)):
        config = ScenarioConfig.load(config)
    t0 = time.perf_counter()
    model = config.resolve_model()
    mhash = model.model_hash if model is not None else None
    writer = _Writer(config.output, config.master_seed, mhash)
    writer.progress = progress
    try:
        results = _DISPATCH[config.task](config, model, writer)
    except StripWalkError as exc:
        raise TaskError(config.task, config.as_dict(), exc) from exc
    timing = results.pop("_timing", {})
    from . import __version__

    summary = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "seed_scheme": SEED_SCHEME_VERSION,
        "task": config.task,
        "master_seed": config.master_seed,
        "model_hash": mhash,
        "model": None
        if model is None
        else {"hash": mhash, "name": model.name, "kind": model.kind, "d": model.d, "k": model.k},
        "config": config.as_dict(),
        "results": results,
        "files": sorted(writer.files),
    }
    if "passed" in results:
        summary["passed"] = results["passed"]
    summary = _clean(summary)
    sp = writer.path("summary.json")
    sp.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    tp = writer.path("timing.json")
    tp.write_text(json.dumps(_clean({**writer.provenance, "total_seconds": time.perf_counter() - t0, "checks": timing}), indent=2) + "\n")
    files = {**writer.files, "summary.json": str(sp), "timing.json": str(tp)}
    return ReportBundle(summary, files, str(writer.out))
