"""Command-line front end.

``subjective-bubbles run CONFIG`` simulates a scenario and writes every table;
``verify CONFIG`` runs the invariant suite only; ``oracle CONFIG`` compares
Monte Carlo with the exhaustive binomial tree.  Exit status is 0 on success,
1 when a numeric check or solver fails and 2 on usage or validation errors.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import format_config, parse_config
from .errors import ConvergenceError, SolvencyError, ValidationError
from .lattice import LatticeEconomy, lattice_monte_carlo, lattice_oracle_value
from .scenarios import (
    QUANTILE_LEVELS,
    ScenarioConfig,
    ScenarioOutput,
    law_equality_test,
    limiting_holdings_study,
    run_scenario,
)

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_USAGE = 2


def fmt(x) -> str:
    """Decimal text with 12 significant digits; integers and flags stay exact."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".12g")


class OutputWriter:
    """Writes CSV files under one directory and remembers their names."""

    def __init__(self, out: Path):
        self.out = out
        self.files: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def csv(self, name: str, header, rows) -> None:
        path = self.out / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([fmt(x) if not isinstance(x, str) else x for x in row])
        self.files.append(name)

    def text(self, name: str, body: str) -> None:
        (self.out / name).write_text(body, encoding="utf-8")
        self.files.append(name)

    def manifest(self, command: str, cfg: ScenarioConfig, started: float, status: int) -> None:
        lines = [
            "[run]",
            f'command = "{command}"',
            f'version = "{__version__}"',
            f"seed = {cfg.seed}",
            f"workers = {cfg.workers}",
            f"duration_seconds = {time.perf_counter() - started:.3f}",
            f"exit_status = {status}",
            "outputs = [" + ", ".join(f'"{f}"' for f in self.files + ["manifest.txt"]) + "]",
            "",
            "[config]",
            format_config(cfg),
        ]
        (self.out / "manifest.txt").write_text("\n".join(lines), encoding="utf-8")


def _write_tables(w: OutputWriter, output: ScenarioOutput, *, full: bool) -> None:
    w.csv("summary.csv", ["name", "mean", "stderr", "n"],
          ([name, *e.as_row()] for name, e in output.estimates.items()))
    w.csv("checks.csv", ["check", "passed"], ([name, bool(ok)] for name, ok in output.checks.items()))
    w.csv("details.csv", ["name", "value"], ([name, float(v)] for name, v in output.details.items()))
    if not full:
        return
    cfg = output.config
    for name, table in output.quantiles.items():
        header = ["t"] + [f"q{lvl:g}" for lvl in QUANTILE_LEVELS]
        w.csv(f"quantiles_{name}.csv", header, ([t, *row] for t, row in zip(cfg.checkpoint_times, table)))
    times = [fmt(t) for t in cfg.grid.times]
    for name, values in output.path_stats.items():
        w.csv(f"pathstat_{name}.csv", times, [list(values)])


def _extras(cfg: ScenarioConfig) -> tuple[list, dict[str, bool]]:
    rows, checks = [], {}
    if cfg.scenario in ("optimist", "pessimist", "drawdown_pair"):
        agents = (0, 1) if cfg.scenario == "drawdown_pair" else (0,)
        for k in agents:
            lh = limiting_holdings_study(cfg, factor=1, k=k).coarse
            prefix = f"limiting_holdings.agent{k + 1}"
            rows += [[f"{prefix}.n_bankrupt", lh.n_bankrupt], [f"{prefix}.median_rel_error", lh.median],
                     [f"{prefix}.p90_rel_error", lh.p90]]
    if cfg.scenario == "two_stock":
        law = law_equality_test(cfg)
        rows += [["law_equality.t_star", law.t_star], ["law_equality.ks_distance", law.ks.distance],
                 ["law_equality.pvalue", law.ks.pvalue], ["law_equality.swap_distance", law.swap_distance]]
        checks["law_equality"] = law.passed
    return rows, checks


def _apply_flags(cfg: ScenarioConfig, args) -> ScenarioConfig:
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.paths is not None:
        changes["n_paths"] = args.paths
    if args.steps is not None:
        changes["n_steps"] = args.steps
    if args.bridge:
        changes["bridge"] = True
    if args.workers is not None:
        changes["workers"] = args.workers
    return replace(cfg, **changes) if changes else cfg


def cmd_run(cfg: ScenarioConfig, w: OutputWriter, *, full: bool) -> int:
    output = run_scenario(cfg)
    checks = dict(output.checks)
    if full:
        rows, extra_checks = _extras(cfg)
        checks.update(extra_checks)
        w.csv("scenario_checks.csv", ["name", "value"], rows)
        output.checks.update(extra_checks)
    _write_tables(w, output, full=full)
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    failed = [name for name, ok in checks.items() if not ok]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_OK if not failed else EXIT_NUMERIC


def cmd_oracle(cfg: ScenarioConfig, w: OutputWriter) -> int:
    if cfg.scenario != "optimist":
        raise ValidationError("the lattice oracle covers the optimist scenario", "scenario")
    econ = LatticeEconomy(cfg.D0, cfg.v[0], cfg.rho, cfg.T, cfg.lattice_steps, tuple(cfg.weights), cfg.a)
    exact = lattice_oracle_value(econ)
    mc = lattice_monte_carlo(econ, cfg.n_paths, cfg.seed)
    rows, ok = [], True
    for name, value, est in (("F", exact.F, mc.F), ("F1", exact.F1, mc.F1), ("B1", exact.B1, mc.B1)):
        z = est.zscore(value)
        agree = abs(z) <= 3.0
        ok &= agree
        rows.append([name, value, est.mean, est.stderr, est.n, z, agree])
        print(f"{'PASS' if agree else 'FAIL'}  {name}: lattice {fmt(value)}  mc {fmt(est.mean)} +- {fmt(est.stderr)}  z {z:+.2f}")
    rows.append(["route_gap", exact.max_route_gap, math.nan, math.nan, 0, math.nan, exact.max_route_gap <= 1e-12])
    ok &= exact.max_route_gap <= 1e-12
    w.csv("oracle.csv", ["quantity", "lattice", "mc_mean", "mc_stderr", "n", "zscore", "agree"], rows)
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="scenario configuration file")
    common.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
    common.add_argument("--paths", type=int, help="number of Monte Carlo paths")
    common.add_argument("--steps", type=int, help="number of grid steps")
    common.add_argument("--bridge", action="store_true", help="bridge-corrected barrier detection")
    common.add_argument("--workers", type=int, help="worker processes (output does not depend on this)")
    common.add_argument("--out", type=Path, default=Path("results"), help="output directory (default: results)")
    parser = argparse.ArgumentParser(prog="subjective-bubbles", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="{run,verify,oracle}")
    sub.add_parser("run", parents=[common], help="simulate a scenario and write all tables")
    sub.add_parser("verify", parents=[common], help="run the invariant suite only")
    sub.add_parser("oracle", parents=[common], help="Monte Carlo against the binomial-tree oracle")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    started = time.perf_counter()
    try:
        cfg = _apply_flags(parse_config(args.config), args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    writer = OutputWriter(args.out)
    writer.text("config.toml", format_config(cfg))
    try:
        if args.command == "oracle":
            status = cmd_oracle(cfg, writer)
        else:
            status = cmd_run(cfg, writer, full=args.command == "run")
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_USAGE
    except (ConvergenceError, SolvencyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_NUMERIC
    writer.manifest(args.command, cfg, started, status)
    return status


if __name__ == "__main__":
    sys.exit(main())
