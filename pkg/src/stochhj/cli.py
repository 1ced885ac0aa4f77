"""Command line: ``stochhj run --config FILE`` and ``stochhj catalog``.

Exit codes: 0 when every counted check passes, 1 when some check fails,
2 for configuration/schema errors, 3 for numerical failures.
"""

import argparse
import csv
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .catalog import list_catalog
from .config import ConfigError, load_config
from .errors import StochHJError
from .experiments import run_case

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

_PLOT_COLUMNS = {
    "simulate": ("path", "accumulated_defect", "logscale y"),
    "action-check": ("path", "rel_err", "logscale y"),
    "hj": ("t_k", "S_tilde_k", ""),
    "convergence": ("K", "max_residual", "logscale xy"),
    "feynman-kac": ("x", "phi_hat", ""),
    "transform": ("t_k", "P1", ""),
}


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _plot_script(cases) -> str:
    lines = ["# gnuplot script; run with: gnuplot -p plot.gp", "set datafile separator ','", "set key autotitle columnhead"]
    for name, kind, header in cases:
        x, y, scale = _PLOT_COLUMNS[kind]
        if x not in header or y not in header:
            continue
        lines.append("")
        lines.append(f"set title '{name} ({kind})'")
        lines.append("unset logscale")
        if scale:
            lines.append(f"set {scale}")
        cols = f"{header.index(x) + 1}:{header.index(y) + 1}"
        extra = ""
        if kind == "feynman-kac":
            extra = f", '{name}.csv' using {header.index(x) + 1}:{header.index('phi_ref') + 1} with lines title 'reference'"
        lines.append(f"plot '{name}.csv' using {cols} with points title '{y}'{extra}")
        lines.append("pause -1")
    return "\n".join(lines) + "\n"


def run(config_path: str, overrides: dict, stream=None) -> int:
    stream = sys.stdout if stream is None else stream
    try:
        text = Path(config_path).read_text()
    except OSError as exc:
        print(f"error: cannot read {config_path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(text, overrides)
    except ConfigError as exc:
        for line in exc.lines:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    all_checks, plotted, notes = [], [], []
    try:
        for case in cfg.cases:
            checks, table, extra = run_case(cfg, case, cfg.threads)
            all_checks.extend(checks)
            _write_csv(out / f"{case.name}.csv", table.header, table.rows)
            if "trajectory" in extra:
                extra["trajectory"].to_csv(out / f"{case.name}_trajectory.csv")
            notes.extend(f"{case.name}: {w}" for w in extra.get("warnings", []))
            plotted.append((case.name, cfg.kind(case), table.header))
    except (StochHJError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    wall = time.perf_counter() - started

    _write_csv(out / "results.csv", ["case", "check", "measured", "threshold", "relation", "counts", "verdict"],
               [[c.case, c.name, c.measured, c.threshold, c.relation, c.counts, c.verdict] for c in all_checks])
    counted = [c for c in all_checks if c.counts]
    ok = all(c.passed for c in counted)
    report = [f"{c.verdict} {c.case}/{c.name}: measured={c.measured:.6g} {c.relation} {c.threshold:.6g}"
              + ("" if c.counts else " (informational)") for c in all_checks]
    report += [f"NOTE {n}" for n in notes]
    report.append(f"OVERALL {'PASS' if ok else 'FAIL'} ({sum(c.passed for c in counted)}/{len(counted)} checks)")
    (out / "report.txt").write_text("\n".join(report) + "\n")
    meta = {
        "version": __version__,
        "config": cfg.model_dump(mode="json"),
        "config_path": str(config_path),
        "seed": cfg.noise.seed,
        "threads": cfg.threads,
        "wall_time_s": wall,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    (out / "plot.gp").write_text(_plot_script(plotted))
    for line in report:
        print(line, file=stream)
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochhj", description="Stochastic Hamilton-Jacobi verification toolkit")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiments of a JSON configuration")
    r.add_argument("--config", required=True, help="path to the JSON run configuration")
    r.add_argument("--seed", type=int, help="override noise.seed")
    r.add_argument("--paths", type=int, help="override noise.paths")
    r.add_argument("--steps", type=int, help="override grid.steps")
    r.add_argument("--out", help="override the output directory")
    r.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    sub.add_parser("catalog", help="list built-in systems, sections and generating functions")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "catalog":
        sys.stdout.write(list_catalog())
        return EXIT_OK
    overrides = {}
    for flag, key in (("seed", "noise.seed"), ("paths", "noise.paths"), ("steps", "grid.steps"),
                      ("out", "out"), ("threads", "threads")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    return run(args.config, overrides)


if __name__ == "__main__":
    sys.exit(main())
