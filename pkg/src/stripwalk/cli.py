"""Command line entry point.

Usage::

    stripwalk TASK [--config PATH] [--model NAME|PATH] [--seed U64] [--out DIR] [--level fast|full]

Exit codes: 0 success, 1 task or usage error, 2 validation failure.
"""

import argparse
import json
import sys

from .errors import ConfigError, StripWalkError
from .experiments import CATALOG, TASKS, ScenarioConfig, run_scenario

EXIT_OK, EXIT_TASK, EXIT_VALIDATION = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for validation failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_TASK, f"{self.prog}: error: {message}\n")


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def build_parser():
    p = _Parser(prog="stripwalk", description="Random walks in random environments on a strip.")
    p.add_argument("task", choices=TASKS)
    p.add_argument("--config", metavar="PATH", help="scenario YAML file")
    p.add_argument("--model", metavar="NAME|PATH", help=f"catalog model ({', '.join(sorted(CATALOG))}) or model file")
    p.add_argument("--seed", type=_u64, metavar="U64", help="master seed (overrides the config)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    p.add_argument("--level", choices=("fast", "full"), help="validation scale (overrides the config)")
    p.add_argument("--quiet", action="store_true", help="print nothing but errors")
    return p


def make_config(args):
    """Merge a scenario file with command line overrides."""
    doc = {}
    source = ""
    if args.config:
        import yaml

        try:
            with open(args.config) as fh:
                doc = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("scenario document must be a mapping")
        source = args.config
    doc["task"] = args.task
    if args.model:
        doc["model"] = {"catalog": args.model} if args.model in CATALOG else args.model
    elif doc.get("model") is None and args.task != "validate":
        doc["model"] = {"catalog": "coupled_d2"}
    if args.seed is not None:
        doc["master_seed"] = args.seed
    doc.setdefault("output", f"out/{args.task}")
    if args.out:
        doc["output"] = args.out
    if args.level:
        doc.setdefault("options", {})
        doc["options"] = {**(doc["options"] or {}), "level": args.level}
    return ScenarioConfig.from_dict(doc, source=source)


def main(argv=None):
    args = build_parser().parse_args(argv)
    say = (lambda *a, **kw: None) if args.quiet else print
    try:
        cfg = make_config(args)
        progress = (lambda row: say(row.line(), flush=True)) if args.task == "validate" else None
        bundle = run_scenario(cfg, progress=progress)
    except (StripWalkError, ValueError, OSError) as exc:
        print(f"stripwalk {args.task}: {exc}", file=sys.stderr)
        return EXIT_TASK
    if args.task != "validate":
        say(json.dumps(bundle.summary["results"], indent=2, sort_keys=True))
    say(f"wrote {len(bundle.files)} files to {bundle.out_dir}")
    if not bundle.passed:
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
