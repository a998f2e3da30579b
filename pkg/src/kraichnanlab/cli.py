"""Command line interface.

    kraichnanlab run --config cfg.json [--seed S] [--threads N] [--out DIR]
    kraichnanlab report --out DIR

The config file is JSON with keys ``experiment`` (one of the experiment
names), optional ``parameters`` (per-experiment overrides; unknown keys are
rejected), optional ``seed`` and ``output_dir``.  Command line flags override
file values.  Exit status: 0 all assertions pass, 1 numerical assertion
failure (or missing runs for ``report``), 2 invalid configuration.
"""

import argparse
import json
import sys

from .errors import ConfigurationError
from .experiments import (aggregate_report, print_summary, resolve_params,
                          run_experiment)

CONFIG_KEYS = {"experiment", "parameters", "seed", "output_dir"}


def _fail_config(message):
    diag = {"error": "invalid-config", "detail": message}
    print(json.dumps(diag), file=sys.stderr)
    return 2


def _load_config(path):
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigurationError("config root must be a JSON object")
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    if not cfg.get("experiment"):
        raise ConfigurationError("config must name a non-empty experiment")
    return cfg


def main(argv=None):
    parser = argparse.ArgumentParser(prog="kraichnanlab")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("--config", required=True, help="JSON config path")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--threads", type=int, default=1)
    p_run.add_argument("--out", default=None, help="output directory")

    p_rep = sub.add_parser("report", help="aggregate completed runs")
    p_rep.add_argument("--out", required=True, help="directory holding runs")

    args = parser.parse_args(argv)

    if args.command == "run":
        try:
            cfg = _load_config(args.config)
            experiment = cfg["experiment"]
            params = resolve_params(experiment, cfg.get("parameters", {}))
        except (ConfigurationError, OSError, json.JSONDecodeError) as exc:
            return _fail_config(str(exc))
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 1))
        out_dir = args.out or cfg.get("output_dir") or "."
        rows = run_experiment(experiment, params, seed=seed, out_dir=out_dir,
                              threads=max(1, args.threads))
        print_summary(rows)
        return 0 if all(r.passed for r in rows) else 1

    if args.command == "report":
        rows, missing = aggregate_report(args.out)
        for r in rows:
            print(f"[{r['pass']}] {r['experiment']} {r['criterion']} "
                  f"{r['name']}: {r['measured']} ({r['tolerance']})")
        if missing:
            print("missing experiments: " + ", ".join(missing), file=sys.stderr)
            return 1
        if not rows:
            return 1
        return 0 if all(r["pass"] == "pass" for r in rows) else 1

    return 2


if __name__ == "__main__":
    sys.exit(main())
