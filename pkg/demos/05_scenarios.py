"""Declarative scenarios: one YAML file per experiment.

Each file under ``configs/`` names a task, a model and budgets.  Running it
writes ``summary.json`` (a pure function of the file) and CSV tables into
the output directory.  The same files work with the command line tool::

    stripwalk speed --config demos/configs/speed_coupled.yaml
"""

import json
import sys
from pathlib import Path

from stripwalk import ScenarioConfig, run_scenario

here = Path(__file__).parent
names = sys.argv[1:] or ["classify_scalar.yaml", "speed_coupled.yaml", "moments_random.yaml"]
for name in names:
    cfg = ScenarioConfig.load(here / "configs" / name)
    cfg.output = str(Path("out") / Path(name).stem)
    bundle = run_scenario(cfg)
    print(f"== {name} -> {bundle.out_dir}")
    print(json.dumps(bundle.summary["results"], indent=1, sort_keys=True)[:1200])
