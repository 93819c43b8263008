import csv
import json
import subprocess
import sys

import pytest
import yaml

from stripwalk import catalog
from stripwalk.cli import main
from stripwalk.env import save_model
from stripwalk.errors import ConfigError, TaskError
from stripwalk.experiments import TASKS, ScenarioConfig, run_scenario
from stripwalk.seeding import derive_seed

SMALL = {
    "chain_length": 300,
    "lyap_replicas": 4,
    "speed_budget": 1000,
    "diag_n_max": 10,
    "diag_replicas": 200,
    "horizon": 5000,
    "replicas": 3,
    "clt_horizon": 300,
    "clt_replicas": 10,
    "renewal_steps": 20_000,
    "istar_budget": 300,
    "excursions": 1000,
    "evfp_start": 300,
    "evfp_replicas": 3,
}


def config(task, tmp_path, model=None, **kw):
    doc = {
        "task": task,
        "model": model or {"catalog": "coupled_d2"},
        "master_seed": 5,
        "output": str(tmp_path / task),
        "budgets": dict(SMALL),
        **kw,
    }
    return ScenarioConfig.from_dict(doc)


def read_stamp(path):
    with open(path) as fh:
        return fh.readline()


# --- seeds


def test_derive_seed_contract():
    assert derive_seed(1, "env", 0) == derive_seed(1, "env", 0)
    assert derive_seed(1, "env", 0) != derive_seed(1, "walk", 0)
    assert derive_seed(1, "env", 0) != derive_seed(2, "env", 0)
    assert 0 <= derive_seed(2**64 - 1, "x", 3) < 2**64


def test_derive_seed_frozen_values():
    # changing these values breaks reproducibility of every stored bundle
    assert derive_seed(0, "env", 0) == derive_seed(0, "env")
    frozen = {(0, "env", 0): derive_seed(0, "env", 0), (7, "lyapunov", 3): derive_seed(7, "lyapunov", 3)}
    import hashlib

    for (m, label, i), v in frozen.items():
        h = hashlib.blake2b(digest_size=8, person=b"stripwalk-v1")
        h.update(m.to_bytes(8, "little") + i.to_bytes(8, "little") + label.encode())
        assert int.from_bytes(h.digest(), "little") == v


@pytest.mark.slow
def test_derive_seed_no_collisions():
    seeds = {derive_seed(12345, "replica", i) for i in range(1_000_000)}
    assert len(seeds) == 1_000_000


# --- configuration


def test_config_defaults_and_validation(tmp_path):
    cfg = config("speed", tmp_path)
    assert cfg.budgets["guard"] == 50 and cfg.options["estimator"] == "ensemble"
    with pytest.raises(ConfigError):
        config("fly", tmp_path)
    with pytest.raises(ConfigError):
        config("speed", tmp_path, budgets={"speed_budget": 0})
    with pytest.raises(ConfigError):
        config("speed", tmp_path, budgets={"speed_budget": 1.5})
    with pytest.raises(ConfigError):
        config("speed", tmp_path, budgets={"nonsense": 3})
    with pytest.raises(ConfigError):
        config("speed", tmp_path, tolerances={"series": -1.0})
    with pytest.raises(ConfigError):
        config("speed", tmp_path, master_seed=-1)
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"task": "speed", "model": {"catalog": "x"}, "extra": 1}).resolve_model()
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"task": "speed", "model": {"catalog": "nope"}}).resolve_model()
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"task": "speed"})


def test_model_references(tmp_path):
    inline = catalog.two_atom_scalar().to_dict()
    assert config("speed", tmp_path, model=inline).resolve_model().model_hash == catalog.two_atom_scalar().model_hash
    save_model(catalog.coupled_d2(), tmp_path / "m.yaml")
    scen = tmp_path / "s.yaml"
    scen.write_text(yaml.safe_dump({"task": "classify", "model": "m.yaml"}))
    cfg = ScenarioConfig.load(scen)
    assert cfg.resolve_model().model_hash == catalog.coupled_d2().model_hash


# --- tasks


def test_classify_scalar(tmp_path):
    b = run_scenario(config("classify", tmp_path, model={"catalog": "homogeneous_scalar"}))
    r = b.summary["results"]
    assert r["transience_verdict"] == "transient-right"
    assert r["lambda"]["value"] == pytest.approx(-0.6931, abs=1e-4)
    assert r["diagnostics"]["contraction"]["slope"] == "-inf"


def test_speed_scalar(tmp_path):
    b = run_scenario(config("speed", tmp_path, model={"catalog": "homogeneous_scalar"}))
    assert b.summary["results"]["v_P"]["value"] == pytest.approx(1 / 3, abs=1e-12)


@pytest.mark.parametrize("task", [t for t in TASKS if t != "validate"])
def test_every_task_writes_a_stamped_bundle(task, tmp_path):
    b = run_scenario(config(task, tmp_path))
    assert b.schema_version == 1
    s = b.summary
    assert s["task"] == task and s["master_seed"] == 5
    h = catalog.coupled_d2().model_hash
    assert s["model"]["hash"] == h
    for name, path in b.files.items():
        if name.endswith(".csv"):
            assert read_stamp(path) == f"# master_seed=5 model_hash={h} schema_version=1\n"
            rows = list(csv.reader(open(path)))
            assert len(rows) >= 2
        else:
            doc = json.load(open(path))
            assert doc["master_seed"] == 5 and doc["model_hash"] == h
    _every_estimate_has_uncertainty(s["results"])


def _every_estimate_has_uncertainty(node):
    if isinstance(node, dict):
        if "value" in node:
            assert "budget" in node or "stderr" in node
            assert any(k in node for k in ("stderr", "tail_bound", "noise_floor"))
        for v in node.values():
            _every_estimate_has_uncertainty(v)
    elif isinstance(node, list):
        for v in node:
            _every_estimate_has_uncertainty(v)


def test_summary_is_deterministic(tmp_path):
    first = run_scenario(config("lln", tmp_path))
    before = {n: open(p, "rb").read() for n, p in first.files.items() if n != "timing.json"}
    second = run_scenario(config("lln", tmp_path))
    after = {n: open(p, "rb").read() for n, p in second.files.items() if n != "timing.json"}
    assert before == after


def test_task_errors_carry_inputs(tmp_path):
    cfg = config("speed", tmp_path, model={"catalog": "two_atom_scalar", "p_vals": [0.2, 0.3]})
    with pytest.raises(TaskError) as ei:
        run_scenario(cfg)
    assert ei.value.task == "speed" and ei.value.inputs["master_seed"] == 5


def test_validate_task_subset(tmp_path):
    cfg = ScenarioConfig.from_dict(
        {"task": "validate", "output": str(tmp_path / "v"), "options": {"only": [2, 3]}}
    )
    b = run_scenario(cfg)
    assert b.passed and [r["criterion"] for r in b.summary["results"]["rows"]] == [2, 3]
    assert "seconds" not in b.summary["results"]["rows"][0]


# --- command line


def test_cli_speed(tmp_path, capsys):
    rc = main(["speed", "--model", "homogeneous_scalar", "--seed", "3", "--out", str(tmp_path / "o")])
    assert rc == 0
    s = json.load(open(tmp_path / "o" / "summary.json"))
    assert s["master_seed"] == 3


def test_cli_config_and_overrides(tmp_path):
    scen = tmp_path / "s.yaml"
    scen.write_text(yaml.safe_dump({"task": "classify", "model": {"catalog": "homogeneous_scalar"},
                                    "budgets": {"chain_length": 100, "lyap_replicas": 2},
                                    "options": {"diagnostics": False}}))
    rc = main(["classify", "--config", str(scen), "--out", str(tmp_path / "o"), "--quiet"])
    assert rc == 0
    s = json.load(open(tmp_path / "o" / "summary.json"))
    assert s["config"]["budgets"]["chain_length"] == 100


def test_cli_exit_codes(tmp_path, monkeypatch):
    assert main(["speed", "--model", "missing.yaml", "--out", str(tmp_path), "--quiet"]) == 1
    with pytest.raises(SystemExit) as ei:
        main(["launch"])
    assert ei.value.code == 1
    with pytest.raises(SystemExit) as ei:
        main(["speed", "--seed", "-4"])
    assert ei.value.code == 1

    from stripwalk import validation

    monkeypatch.setitem(validation.CHECKS, 2, lambda ctx: validation.CheckResult(2, "x", False, {}, "never"))
    scen = tmp_path / "v.yaml"
    scen.write_text(yaml.safe_dump({"task": "validate", "options": {"only": [2]}}))
    assert main(["validate", "--config", str(scen), "--out", str(tmp_path / "v"), "--quiet"]) == 2


def test_module_entry_point(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "stripwalk", "speed", "--model", "homogeneous_scalar", "--out", str(tmp_path)],
        capture_output=True, text=True, check=False,
    )
    assert out.returncode == 0, out.stderr
    assert "v_P" in out.stdout
