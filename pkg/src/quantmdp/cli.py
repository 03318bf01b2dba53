"""Command-line driver: ``quantmdp <design|solve|learn|sweep|compare|verify> --config FILE``.

Every command writes ``<command>.csv`` (plus any extra tables) and a JSON
sidecar ``<command>.json`` into the output directory.  Exit codes: 0 success,
2 configuration error, 3 convergence error, 4 unstable reference solution,
1 any other package error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import ConfigError, ConvergenceError, OracleUnstableError, QuantMdpError
from .experiments import RUNNERS

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_ORACLE = 0, 1, 2, 3, 4


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_table(path: Path, table) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.columns)
        for row in table.rows:
            w.writerow([_cell(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run(command: str, cfg: ExperimentConfig, out: Path, jobs: int = 1) -> list[Path]:
    """Run one command and write its outputs; returns the CSV paths written."""
    tables = RUNNERS[command](cfg, jobs=jobs)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for t in tables:
        p = out / f"{t.name}.csv"
        write_table(p, t)
        written.append(p)
    sidecar = {
        "command": command,
        "config": cfg.model_dump(mode="json"),
        "seed": cfg.seed,
        "versions": {"quantmdp": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "tables": {t.name: {"columns": t.columns, "meta": t.meta} for t in tables},
    }
    with open(out / f"{command}.json", "w") as fh:
        json.dump(_jsonable(sidecar), fh, indent=1, sort_keys=True)
    return written


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quantmdp", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(RUNNERS))
    p.add_argument("--config", help="YAML or JSON experiment configuration")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg = cfg.model_copy(update={"seed": args.seed})
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        out = Path(args.out if args.out else cfg.out)
        for path in run(args.command, cfg, out, args.jobs):
            print(path)
        return EXIT_OK
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as err:
        print(f"convergence error: {err} (residual={err.residual}, iterations={err.iterations})",
              file=sys.stderr)
        return EXIT_CONVERGENCE
    except OracleUnstableError as err:
        print(f"reference solution unstable: {err}", file=sys.stderr)
        return EXIT_ORACLE
    except QuantMdpError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_OTHER
    except FileNotFoundError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
