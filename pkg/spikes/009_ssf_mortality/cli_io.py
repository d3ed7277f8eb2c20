#!/usr/bin/env python3
"""
SSF mortality - batch command line

Reads life tables and deaths/exposure files, fits GGM models and writes
published-style SSF, NRA, CT1 and discrepancy tables as byte-stable CSV.

Run with:
    $ uv run python spikes/009_ssf_mortality/cli_io.py ssf-table --year 2012 --source official

Copyright (c) 2025 LAB271
SPDX-License-Identifier: Apache-2.0
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import threading
from collections.abc import Callable, Iterable, Sequence
from dataclasses import asdict, dataclass, field
from enum import Enum
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from clean_logging import setup_clean_logging
from errors import MissingVintageError, NumericalFailure, SchemaError
from ggm import (
    FitOptions,
    FitResult,
    MortalityData,
    expectancy_vector,
    fit,
    mortality_data_from_frame,
    mortality_data_from_lifetable,
)
from lifetable import ExpectancyTable, LifeTable, MortalitySource, rebuild_from_lx, round_half_up
from metrics import (
    SOURCE_KINDS,
    ScenarioComparison,
    compare,
    ct1,
    ct1_table,
    expectancy_comparison,
    nra,
    plot_series,
    ssf_matrix,
    sweep,
)
from rules import RuleConfig, RuleMode, Scenario, WorkerClass, load_rule_config, modes_for_year

logger = logging.getLogger(__name__)

DEFAULT_TABLES_DIR = Path(__file__).parent / "data"
EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3


def tool_version() -> str:
    try:
        return metadata.version("ssf-mortality-studies")
    except metadata.PackageNotFoundError:
        return "0.1.0"


# READING


def _numeric_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = np.flatnonzero(values.isna().to_numpy())
    if bad.size:
        # header is line 1
        raise SchemaError(f"column {column} has a non-numeric value {frame[column].iloc[bad[0]]!r}", line=int(bad[0]) + 2)
    return values.to_numpy(dtype=float)


def _read_frame(path: Path, required: Sequence[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except FileNotFoundError:
        raise SchemaError(f"file not found: {path}") from None
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path.name} is empty", line=1) from None
    frame.columns = [str(c).strip() for c in frame.columns]
    for column in required:
        if column not in frame.columns:
            raise SchemaError(f"missing column {column}", line=1)
    if frame.empty:
        raise SchemaError(f"{path.name} has a header but no rows", line=2)
    return frame


def _contiguous_ages(frame: pd.DataFrame) -> np.ndarray:
    ages = _numeric_column(frame, "age")
    for i in range(1, len(ages)):
        if ages[i] != ages[i - 1] + 1:
            raise SchemaError(f"age {ages[i]:g} does not follow {ages[i - 1]:g}", line=i + 2)
    return ages


def read_lifetable_csv(path: str | Path, terminal_m: float | None = None, label: str = "") -> LifeTable:
    """``age, lx[, ex]``; the last row is the open-ended age.

    Closing uses ``terminal_m`` when given, otherwise 1/ex of the last row.
    """
    path = Path(path)
    frame = _read_frame(path, ("age", "lx"))
    ages = _contiguous_ages(frame)
    lx = _numeric_column(frame, "lx")
    if terminal_m is None:
        last_line = len(frame) + 1
        if "ex" not in frame.columns or pd.isna(frame["ex"].iloc[-1]):
            raise SchemaError("open age needs an ex value or --terminal-m to close the table", line=last_line)
        e_open = pd.to_numeric(frame["ex"].iloc[-1], errors="coerce")
        if not e_open > 0:
            raise SchemaError(f"terminal ex must be positive, got {e_open}", line=last_line)
        terminal_m = 1.0 / e_open
    return rebuild_from_lx(lx, open_age=int(ages[-1]), terminal_m=terminal_m, start_age=int(ages[0]), label=label)


def read_expectancy_csv(path: str | Path, label: str = "") -> ExpectancyTable:
    path = Path(path)
    frame = _read_frame(path, ("age", "ex"))
    ages = _contiguous_ages(frame)
    ex = _numeric_column(frame, "ex")
    return ExpectancyTable(tuple(int(a) for a in ages), tuple(float(e) for e in ex), label=label)


def read_mortality_csv(path: str | Path) -> MortalityData:
    path = Path(path)
    frame = _read_frame(path, ("age", "deaths", "exposure"))
    numeric = pd.DataFrame({c: _numeric_column(frame, c) for c in ("age", "deaths", "exposure")})
    return mortality_data_from_frame(numeric)


def read_fit_record(path: str | Path, label: str = "") -> FitResult:
    path = Path(path)
    try:
        record = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SchemaError(f"file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path.name} is not valid JSON: {e.msg}", line=e.lineno) from None
    return FitResult.from_record(record, label=label)


class SourceCatalog:
    """Mortality sources by kind and table year, read from ``{kind}_{year}.csv|json``."""

    def __init__(self, directory: str | Path, on_load: Callable[[str], None] | None = None):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise SchemaError(f"tables directory not found: {self.directory}")
        self.on_load = on_load
        self._cache: dict[tuple[str, int], MortalitySource] = {}
        self._lock = threading.Lock()

    def _files(self, kind: str) -> dict[int, Path]:
        files: dict[int, Path] = {}
        for suffix in (".json", ".csv"):
            for path in self.directory.glob(f"{kind}_*{suffix}"):
                year = path.stem.removeprefix(f"{kind}_")
                if year.isdigit():
                    files.setdefault(int(year), path)
        return files

    def known_years(self, kind: str) -> list[int]:
        return sorted(self._files(kind))

    def source(self, kind: str, table_year: int) -> MortalitySource:
        if kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {kind!r}, expected one of {', '.join(SOURCE_KINDS)}")
        key = (kind, table_year)
        with self._lock:
            if key not in self._cache:
                files = self._files(kind)
                if table_year not in files:
                    raise MissingVintageError(kind, table_year, sorted(files))
                self._cache[key] = self._load(files[table_year], f"{kind} {table_year}")
                if self.on_load is not None:
                    self.on_load(str(files[table_year]))
            return self._cache[key]

    @staticmethod
    def _load(path: Path, label: str) -> MortalitySource:
        if path.suffix == ".json":
            return read_fit_record(path, label=label).params
        with path.open(encoding="utf-8") as fh:
            header = [c.strip() for c in fh.readline().split(",")]
        if "lx" in header:
            return read_lifetable_csv(path, label=label)
        return read_expectancy_csv(path, label=label)


# WRITING


def format_number(value: float, decimals: int) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return f"{value:.{decimals}f}"


def write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    logger.info(f"📄 Wrote {path}")
    return path


def write_frame(path: Path, frame: pd.DataFrame, decimals: dict[str, int]) -> Path:
    rows = []
    for record in frame.itertuples(index=False):
        row = []
        for column, value in zip(frame.columns, record, strict=True):
            if column in decimals:
                row.append(format_number(float(value), decimals[column]))
            else:
                row.append(str(value))
        rows.append(row)
    return write_rows(path, list(frame.columns), rows)


def write_matrix(path: Path, matrix: np.ndarray, ages: Sequence[int], cts: Sequence[int], ct_kind: str) -> Path:
    """Published layout: first column CT (or ECT), one column per age, blank cells for NaN."""
    rows = [[str(c), *[format_number(v, 3) for v in matrix[i]]] for i, c in enumerate(cts)]
    return write_rows(path, [ct_kind, *[str(x) for x in ages]], rows)


@dataclass
class RunManifest:
    command: str
    arguments: dict[str, Any] = field(default_factory=dict)
    inputs: list[str] = field(default_factory=list)
    overrides: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    out_dir: str = "output"
    version: str = field(default_factory=tool_version)

    @staticmethod
    def arguments_from(args: argparse.Namespace) -> dict[str, Any]:
        recorded = {"command", "out_dir", "seed"}
        return {k: str(v) if isinstance(v, Enum) else v for k, v in vars(args).items() if k not in recorded}

    def record_input(self, path: str) -> None:
        if path not in self.inputs:
            self.inputs.append(path)

    def write(self) -> Path:
        path = Path(self.out_dir) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        record = asdict(self) | {"inputs": sorted(self.inputs)}
        path.write_text(json.dumps(record, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return path


# ARGUMENTS


def parse_int_list(text: str) -> list[int]:
    """``43-60`` or ``50,65,80`` (ranges inclusive)."""
    values: list[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                values.extend(range(int(lo), int(hi) + 1))
            elif part:
                values.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers or ranges like 43-60, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssf-mortality", description="Social Security Factor mortality studies")
    parser.add_argument("--config", help="JSON rule config merged over the built-in defaults")
    parser.add_argument("--out-dir", default="output", help="directory for CSV outputs and manifest.json")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--log-level", default=None, help="overrides SSF_LOG_LEVEL")
    parser.add_argument("--tables-dir", default=None, help="mortality catalog (default: SSF_TABLES_DIR or spike data)")
    parser.add_argument("--A", dest="A", type=float, default=None, help="contribution-rate constant")
    parser.add_argument("--ceiling", type=float, default=None)
    parser.add_argument("--floor", type=float, default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lifetable", help="rebuild a life table from lx")
    p.add_argument("input")
    p.add_argument("--terminal-m", type=float, default=None)

    p = sub.add_parser("fit", help="fit a GGM model by Poisson maximum likelihood")
    p.add_argument("input", help="age,deaths,exposure CSV or age,lx[,ex] life table CSV")
    p.add_argument("--terminal-m", type=float, default=None)
    p.add_argument("--min-age", type=int, default=30)
    p.add_argument("--restarts", type=int, default=32)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--max-age", type=float, default=110.0)
    p.add_argument("--step", type=float, default=1.0, help="e-vector age step (e.g. 0.1)")

    def scenario_flags(p: argparse.ArgumentParser, years: bool = False) -> None:
        if years:
            p.add_argument("--years", type=parse_int_list, default=parse_int_list("2000-2019"))
        else:
            p.add_argument("--year", type=int, required=True, help="SSF calendar year")
            p.add_argument("--table-year", type=int, default=None, help="override the year-2 vintage lag")
        p.add_argument("--class", dest="worker_class", type=WorkerClass, default=WorkerClass.FEMALE_TEACHER)

    p = sub.add_parser("ssf-table", help="SSF matrix in the published layout")
    scenario_flags(p)
    p.add_argument("--source", choices=SOURCE_KINDS, default="official")
    p.add_argument("--ages", type=parse_int_list, default=parse_int_list("43-60"))
    p.add_argument("--cts", type=parse_int_list, default=parse_int_list("35-52"))
    p.add_argument("--ct-kind", choices=("ct", "ect"), default="ct")
    p.add_argument("--mode", type=RuleMode, choices=[RuleMode.SSF, RuleMode.COMBINED], default=None)

    p = sub.add_parser("nra", help="normal retirement age")
    scenario_flags(p)
    p.add_argument("--source", choices=SOURCE_KINDS, default="official")
    p.add_argument("--entry-age", type=float, default=18.0)
    p.add_argument("--rule", type=RuleMode, choices=list(RuleMode), default=None)

    p = sub.add_parser("ct1", help="contribution time giving a factor of one")
    p.add_argument("--years", type=parse_int_list, default=None)
    p.add_argument("--source", choices=SOURCE_KINDS, default="official")
    p.add_argument("--ages", type=parse_int_list, default=parse_int_list("53-64"))
    p.add_argument("--age", type=int, default=None, help="single evaluation with --e")
    p.add_argument("--e", type=float, default=None, help="rounded life expectancy for --age")

    p = sub.add_parser("compare", help="official vs GGM factors and discrepancy")
    scenario_flags(p)
    p.add_argument("--ages", type=parse_int_list, default=parse_int_list("43-60"))
    p.add_argument("--cts", type=parse_int_list, default=parse_int_list("35-52"))
    p.add_argument("--ct-kind", choices=("ct", "ect"), default="ct")

    p = sub.add_parser("sweep", help="compare over a range of SSF years")
    scenario_flags(p, years=True)
    p.add_argument("--ages", type=parse_int_list, default=parse_int_list("53-64"))
    p.add_argument("--cts", type=parse_int_list, default=parse_int_list("35-52"))
    p.add_argument("--ct-kind", choices=("ct", "ect"), default="ct")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("plot-data", help="e(50/65/80) trajectories per vintage")
    p.add_argument("--years", type=parse_int_list, default=parse_int_list("1998-2017"))
    p.add_argument("--ages", type=parse_int_list, default=parse_int_list("50,65,80"))
    p.add_argument("--discrepancy", action="store_true", help="also write the e discrepancy table")

    return parser


# COMMANDS


def _catalog(args: argparse.Namespace, manifest: RunManifest) -> SourceCatalog:
    directory = args.tables_dir or os.environ.get("SSF_TABLES_DIR") or DEFAULT_TABLES_DIR
    return SourceCatalog(directory, on_load=manifest.record_input)


def _table_year(args: argparse.Namespace) -> int:
    return args.table_year if args.table_year is not None else args.year - 2


def cmd_lifetable(args: argparse.Namespace, cfg: RuleConfig, out: Path, manifest: RunManifest) -> None:
    manifest.record_input(args.input)
    table = read_lifetable_csv(args.input, terminal_m=args.terminal_m, label=Path(args.input).stem)
    stem = Path(args.input).stem
    decimals = dict.fromkeys(["lx", "dx", "Lx", "Tx"], 4) | dict.fromkeys(["qx", "mx"], 8) | {"ex": 6}
    write_frame(out / f"lifetable_{stem}.csv", table.to_frame(), decimals)
    summary = []
    for x in (50, 65, 80):
        if table.start_age <= x <= table.open_age:
            summary.append([stem, str(x), format_number(table.life_expectancy(x), 6)])
    write_rows(out / f"lifetable_{stem}_summary.csv", ["table", "age", "ex"], summary)


def cmd_fit(args: argparse.Namespace, cfg: RuleConfig, out: Path, manifest: RunManifest) -> None:
    manifest.record_input(args.input)
    with open(args.input, encoding="utf-8") as fh:
        header = [c.strip() for c in fh.readline().split(",")]
    if "lx" in header:
        data = mortality_data_from_lifetable(read_lifetable_csv(args.input, args.terminal_m), args.min_age)
    else:
        data = read_mortality_csv(args.input)
    options = FitOptions(
        min_age=args.min_age, restarts=args.restarts, seed=args.seed, tol=args.tol, workers=args.workers
    )
    result = fit(data, options)
    stem = Path(args.input).stem
    record_path = out / f"fit_{stem}.json"
    record_path.parent.mkdir(parents=True, exist_ok=True)
    record_path.write_text(json.dumps(result.to_record(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info(f"📄 Wrote {record_path}")

    grid = np.round(np.arange(30.0, args.max_age + args.step / 2, args.step), 10)
    ex = expectancy_vector(result.params, grid, exact=True)
    rows = [[format_number(x, 1), format_number(e, 6), format_number(round_half_up(e, 1), 1)] for x, e in zip(grid, ex, strict=True)]
    write_rows(out / f"evector_{stem}.csv", ["age", "ex", "ex_rounded"], rows)


def cmd_ssf_table(args: argparse.Namespace, cfg: RuleConfig, out: Path, manifest: RunManifest) -> None:
    source = _catalog(args, manifest).source(args.source, _table_year(args))
    scenario = Scenario(args.year, source, cfg, args.source)
    modes = [args.mode] if args.mode else modes_for_year(args.year, cfg)
    for mode in modes:
        matrix = ssf_matrix(scenario, args.ages, args.cts, args.worker_class, mode, args.ct_kind)
        write_matrix(out / f"ssf_{args.year}_{args.source}_{mode}.csv", matrix, args.ages, args.cts, args.ct_kind)


def cmd_nra(args: argparse.Namespace, cfg: RuleConfig, out: Path, manifest: RunManifest) -> None:
    source = _catalog(args, manifest).source(args.source, _table_year(args))
    scenario = Scenario(args.year, source, cfg, args.source)
    modes = [args.rule] if args.rule else modes_for_year(args.year, cfg)
    rows = []
    for mode in modes:
        result = nra(args.worker_class, args.entry_age, scenario, mode)
        logger.info(f"NRA {args.year} {args.worker_class} ({mode}): {result.nra:.2f} with ECT {result.ect_at_nra:.2f}")
        rows.append(
            [
                str(args.year),
                args.source,
                str(args.worker_class),
                format_number(args.entry_age, 1),
                str(mode),
                format_number(result.nra, 2),
                format_number(result.ect_at_nra, 2),
            ]
        )
    header = ["ssf_year", "source", "worker_class", "entry_age", "rule_mode", "nra", "ect"]
    write_rows(out / f"nra_{args.year}_{args.source}_{args.worker_class}.csv", header, rows)


def cmd_ct1(args: argparse.Namespace, cfg: RuleConfig, out: Path, manifest: RunManifest) -> None:
    if args.e is not None or args.age is not None:
        if args.e is None or args.age is None:
            raise ValueError("--age and --e must be given together")
        value = ct1(args.age, args.e, cfg.A)
        logger.info(f"CT1 at age {args.age} with e={args.e}: {value:.2f}")
        write_rows(out / "ct1_direct.csv", ["age", "e", "ct1"], [[str(args.age), format_number(args.e, 1), format_number(value, 2)]])
        return
    catalog = _catalog(args, manifest)
    years = args.years or [y + 2 for y in catalog.known_years(args.source)]
    table = ct1_table(years, catalog, args.source, args.ages, cfg)
    write_frame(out / f"ct1_{args.source}.csv", table, {"ct1": 2})


def _write_comparison(out: Path, comparison: ScenarioComparison) -> None:
    stem = f"compare_{comparison.ssf_year}_{comparison.rule_mode}"
    for name, matrix in (
        ("official", comparison.factor_official),
        ("ggm", comparison.factor_counterfactual),
        ("discrepancy", comparison.discrepancy),
    ):
        write_matrix(out / f"{stem}_{name}.csv", matrix, comparison.ages, comparison.cts, comparison.ct_kind)


def cmd_compare(args: argparse.Namespace, cfg: RuleConfig, out: Path, manifest: RunManifest) -> None:
    catalog = _catalog(args, manifest)
    table_year = _table_year(args)
    official, fitted = catalog.source("official", table_year), catalog.source("ggm", table_year)
    for mode in modes_for_year(args.year, cfg):
        comparison = compare(
            args.year, official, fitted, args.ages, args.cts, args.worker_class, cfg, mode, args.ct_kind
        )
        _write_comparison(out, comparison)


def cmd_sweep(args: argparse.Namespace, cfg: RuleConfig, out: Path, manifest: RunManifest) -> None:
    results = sweep(
        args.years,
        _catalog(args, manifest),
        args.ages,
        args.cts,
        args.worker_class,
        cfg,
        args.ct_kind,
        workers=args.workers,
    )
    rows = []
    for comparison in results:
        if comparison.ok:
            _write_comparison(out, comparison)
            mean = float(np.nanmean(comparison.discrepancy)) if np.isfinite(comparison.discrepancy).any() else math.nan
            rows.append([str(comparison.ssf_year), str(comparison.rule_mode), "ok", format_number(mean, 3), ""])
        else:
            rows.append([str(comparison.ssf_year), str(comparison.rule_mode), "error", "", comparison.error or ""])
    write_rows(out / "sweep_summary.csv", ["ssf_year", "rule_mode", "status", "mean_discrepancy", "error"], rows)


def cmd_plot_data(args: argparse.Namespace, cfg: RuleConfig, out: Path, manifest: RunManifest) -> None:
    catalog = _catalog(args, manifest)
    series = plot_series(args.years, catalog, args.ages)
    write_frame(out / "plot_data.csv", series, {"value": 1})
    if args.discrepancy:
        years = [y for y in args.years if y in set(catalog.known_years("official")) & set(catalog.known_years("ggm"))]
        table = expectancy_comparison(years, catalog)
        write_frame(
            out / "expectancy_discrepancy.csv", table, {"e_official": 1, "e_ggm": 1, "discrepancy": 3}
        )


COMMANDS = {
    "lifetable": cmd_lifetable,
    "fit": cmd_fit,
    "ssf-table": cmd_ssf_table,
    "nra": cmd_nra,
    "ct1": cmd_ct1,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "plot-data": cmd_plot_data,
}


def main(argv: Sequence[str] | None = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    setup_clean_logging(args.log_level)

    overrides = {"A": args.A, "ceiling": args.ceiling, "floor": args.floor}
    manifest = RunManifest(
        command=args.command,
        arguments=RunManifest.arguments_from(args),
        overrides={k: v for k, v in overrides.items() if v is not None},
        seed=args.seed,
        out_dir=args.out_dir,
    )
    try:
        cfg = load_rule_config(args.config, overrides)
        if args.config:
            manifest.record_input(args.config)
        logger.info(f"🚀 Running {args.command}")
        COMMANDS[args.command](args, cfg, Path(args.out_dir), manifest)
        manifest.write()
    except NumericalFailure as e:
        logger.error(f"❌ Numerical failure: {e}")
        return EXIT_NUMERICAL
    except (ValueError, LookupError, OSError) as e:
        logger.error(f"❌ {e}")
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
