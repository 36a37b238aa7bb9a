"""Single runs, parameter sweeps and their CSV/manifest outputs.

Result and trace files are plain CSV.  The first line is a ``#`` comment
carrying the schema version and a timestamp; everything after it (the
body) depends only on the scenario, the sweep and the seed, so two runs
with the same inputs produce byte-identical bodies.  Wall-clock times are
therefore kept out of the CSV and written to the JSON manifest instead.
"""

from __future__ import annotations

import csv
import datetime as _dt
import enum
import io
import json
import logging
import math
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .metrics import antenna_load, feeder_powers
from .optimizer import Algorithm, Design, InnerSolveError, SolveReport, SystemInstance, dinkelbach, refine
from .scenario import Scenario, ScenarioError

log = logging.getLogger(__name__)

CSV_SCHEMA_VERSION = 1
FLOAT_DIGITS = 12

TRACE_COLUMNS = ("outer_iter", "inner_iter", "eta", "objective", "rate", "power", "swee", "phase")


class SweepVariable(str, enum.Enum):
    SAT_BUDGET_DBW = "sat_budget_dbw"
    WEIGHT_SPLIT = "weight_split"
    GW_BUDGET_DBW = "gw_budget_dbw"


class SweepError(ValueError):
    """Invalid sweep spec file or sweep arguments."""


@dataclass(frozen=True)
class SweepSpec:
    """One swept variable over a grid, for a set of algorithms and realizations.

    For ``weight_split`` each grid value is delta_GW and delta_Sa is set to
    ``1 - value``, so the two weights always sum to one.

    With ``continuation`` each realization walks the grid forward, backward
    and forward again, and every point is also re-optimized from the designs found at
    its neighbours (the best design seen is kept).  On an ascending budget
    grid this makes each realization's curve non-decreasing, as the optimal
    value is.
    """

    variable: SweepVariable
    grid: tuple[float, ...]
    algorithms: tuple[Algorithm, ...] = (Algorithm.JPFBM, Algorithm.JPAF, Algorithm.BASELINE)
    realizations: int = 1
    seed: int | None = None
    continuation: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variable", SweepVariable(self.variable))
        object.__setattr__(self, "grid", tuple(float(v) for v in self.grid))
        object.__setattr__(self, "algorithms", tuple(Algorithm(a) for a in self.algorithms))
        if not self.grid:
            raise SweepError("sweep grid must not be empty")
        if not self.algorithms:
            raise SweepError("at least one algorithm is required")
        if not isinstance(self.continuation, bool):
            raise SweepError("continuation must be true or false")
        if self.realizations < 1:
            raise SweepError("realizations must be >= 1")
        if not all(math.isfinite(v) for v in self.grid):
            raise SweepError("grid values must be finite")
        if self.variable is SweepVariable.WEIGHT_SPLIT and not all(0.0 <= v <= 1.0 for v in self.grid):
            raise SweepError("weight_split values are delta_GW in [0, 1]; delta_Sa = 1 - delta_GW")

    def apply(self, scenario: Scenario, value: float) -> Scenario:
        if self.variable is SweepVariable.SAT_BUDGET_DBW:
            return scenario.with_sat_budget_dbw(value)
        if self.variable is SweepVariable.GW_BUDGET_DBW:
            return scenario.with_gw_budget_dbw(value)
        return scenario.with_weights(value, 1.0 - value)


def load_sweep_spec(text: str) -> SweepSpec:
    """Parse a YAML sweep document (keys: variable, grid, algorithms, realizations, seed, continuation)."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SweepError(f"cannot parse sweep spec: {exc}") from exc
    if not isinstance(raw, dict):
        raise SweepError("sweep spec must be a mapping")
    allowed = {f.name for f in fields(SweepSpec)}
    unknown = set(raw) - allowed
    if unknown:
        raise SweepError(f"unknown sweep keys: {sorted(unknown)}")
    missing = {"variable", "grid"} - set(raw)
    if missing:
        raise SweepError(f"missing sweep keys: {sorted(missing)}")
    try:
        return SweepSpec(**raw)
    except (TypeError, ValueError) as exc:
        raise SweepError(str(exc)) from exc


# --------------------------------------------------------------------------
# Records
# --------------------------------------------------------------------------


@dataclass
class RunRecord:
    scenario_hash: str
    algorithm: str
    variable: str
    value: float
    realization: str  # integer offset, or "mean" for averaged rows
    status: str  # "ok", "failed: ...", or "k/n ok" on averaged rows
    swee: float
    rate: float
    p_gw: float
    p_sat: float
    p_total: float
    p_total_weighted: float
    active_links: float
    outer_iterations: float
    inner_iterations: float
    polish_iterations: float
    c3_slack_min: float
    c4_slack_min: float
    warnings: str = ""
    wall_time: float = field(default=0.0, metadata={"csv": False})

    @classmethod
    def columns(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls) if f.metadata.get("csv", True))

    def consistent(self, rtol: float = 1e-9) -> bool:
        """swee equals rate / p_total_weighted recomputed from this record."""
        if math.isnan(self.swee) and (self.status != "ok"):
            return True
        return math.isclose(self.swee, self.rate / self.p_total_weighted, rel_tol=rtol)


def _slack_min(inst: SystemInstance, report: SolveReport) -> tuple[float, float]:
    c3 = 1.0 - feeder_powers(report.W) / inst.gw_budget
    c4 = 1.0 - antenna_load(report.W, report.B, inst.F, inst.power.noise_cov_sat) / inst.sat_budget
    return float(c3.min()), float(c4.min())


def record_from_report(
    inst: SystemInstance, report: SolveReport, scenario_hash: str, variable: str, value: float, realization: int
) -> RunRecord:
    m = report.metrics
    c3, c4 = _slack_min(inst, report)
    warnings = list(m.warnings)
    if not report.converged:
        warnings.append("not converged")
    if report.audit:
        warnings.append(f"{len(report.audit)} descent audit events")
    return RunRecord(
        scenario_hash=scenario_hash,
        algorithm=report.algorithm.value,
        variable=variable,
        value=float(value),
        realization=str(realization),
        status="ok",
        swee=m.swee,
        rate=m.rate_total,
        p_gw=m.p_gw,
        p_sat=m.p_sat,
        p_total=m.p_gw + m.p_sat,
        p_total_weighted=m.p_total_weighted,
        active_links=m.active_fl_count,
        outer_iterations=report.outer_iterations,
        inner_iterations=report.inner_iterations,
        polish_iterations=report.polish_iterations,
        c3_slack_min=c3,
        c4_slack_min=c4,
        warnings="; ".join(warnings),
        wall_time=report.wall_time,
    )


def failed_record(scenario_hash, algorithm, variable, value, realization, reason: str) -> RunRecord:
    nan = float("nan")
    return RunRecord(
        scenario_hash, str(algorithm), variable, float(value), str(realization), f"failed: {reason}",
        nan, nan, nan, nan, nan, nan, nan, nan, nan, nan, nan, nan,
    )  # fmt: skip


_NUMERIC = ("swee", "rate", "p_gw", "p_sat", "p_total", "p_total_weighted", "active_links",
            "outer_iterations", "inner_iterations", "polish_iterations", "c3_slack_min", "c4_slack_min")  # fmt: skip


def mean_record(records: list[RunRecord]) -> RunRecord:
    """Average of the successful rows of one (value, algorithm) group."""
    ok = [r for r in records if r.status == "ok"]
    first = records[0]
    values = {}
    for name in _NUMERIC:
        values[name] = float(np.mean([getattr(r, name) for r in ok])) if ok else float("nan")
    if ok:
        # keep the averaged row self-consistent: SWEE of the mean design point
        values["swee"] = values["rate"] / values["p_total_weighted"]
    return RunRecord(
        scenario_hash=first.scenario_hash,
        algorithm=first.algorithm,
        variable=first.variable,
        value=first.value,
        realization="mean",
        status=f"{len(ok)}/{len(records)} ok",
        warnings="",
        wall_time=float(sum(r.wall_time for r in records)),
        **values,
    )


def mean_of_ratios(records: list[RunRecord]) -> float:
    """Mean of per-realization SWEE values (the average plotted in the sweeps)."""
    vals = [r.swee for r in records if r.status == "ok" and r.realization != "mean"]
    return float(np.mean(vals)) if vals else float("nan")


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if v == int(v) and abs(v) < 1e15:
            return str(int(v))
        return f"{v:.{FLOAT_DIGITS}g}"
    return str(v)


def csv_text(columns, rows, kind: str) -> str:
    """CSV document with a timestamped comment line followed by the body."""
    buf = io.StringIO()
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    buf.write(f"# bentpipe {kind} schema={CSV_SCHEMA_VERSION} generated={stamp}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def csv_body(text: str) -> str:
    """Everything after the leading comment line."""
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


def trace_rows(report: SolveReport):
    for r in report.trace:
        yield (r.outer_iter, r.inner_iter, r.eta, r.objective, r.rate, r.power, r.swee, r.phase)


def records_rows(records: list[RunRecord]):
    cols = RunRecord.columns()
    for r in records:
        yield tuple(getattr(r, c) for c in cols)


# --------------------------------------------------------------------------
# Manifest
# --------------------------------------------------------------------------


def git_revision(cwd=None) -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], cwd=cwd, capture_output=True, text=True, timeout=10, check=True
        )
        return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_manifest(path, scenario: Scenario, extra: dict) -> dict:
    manifest = {
        "schema": CSV_SCHEMA_VERSION,
        "scenario_hash": scenario.digest(),
        "seed": scenario.seed,
        "git_revision": git_revision(Path(__file__).parent),
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        **extra,
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return manifest


# --------------------------------------------------------------------------
# Runs
# --------------------------------------------------------------------------


def solve_one(scenario: Scenario, algorithm, seed_offset: int = 0) -> tuple[SystemInstance, SolveReport]:
    inst = SystemInstance.from_scenario(scenario, seed_offset)
    return inst, dinkelbach(inst, Algorithm(algorithm))


def run_single(scenario: Scenario, algorithm, seed_offset: int = 0, outdir=None) -> tuple[RunRecord, SolveReport]:
    """Solve one realization; with ``outdir`` write trace.csv, summary.csv and manifest.json."""
    inst, report = solve_one(scenario, algorithm, seed_offset)
    record = record_from_report(inst, report, scenario.digest(), "none", float("nan"), seed_offset)
    if outdir is not None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.csv").write_text(csv_text(TRACE_COLUMNS, trace_rows(report), "trace"))
        (out / "summary.csv").write_text(csv_text(RunRecord.columns(), records_rows([record]), "results"))
        write_manifest(
            out / "manifest.json",
            scenario,
            {"mode": "single", "algorithm": report.algorithm.value, "seed_offset": seed_offset,
             "wall_time": report.wall_time, "notes": report.notes},
        )  # fmt: skip
    return record, report


def _chain(args) -> list[RunRecord]:
    """One algorithm and realization across the grid.

    With continuation, a forward pass starts each point also from the
    previous point's design, a backward pass offers every point the design of
    its successor, and a last forward pass the design of its predecessor;
    each point keeps the best design it has seen.
    """
    scenarios, spec_variable, grid, algorithm, realization, continuation = args
    n = len(grid)
    insts, reports, errors = [None] * n, [None] * n, [None] * n

    def attempt(i, fn):
        try:
            if insts[i] is None:
                insts[i] = SystemInstance.from_scenario(scenarios[i], realization)
            reports[i] = fn(insts[i])
        except (InnerSolveError, ScenarioError, ArithmeticError, np.linalg.LinAlgError) as exc:
            log.warning("run failed (%s=%s, %s, realization %d): %s", spec_variable, grid[i], algorithm, realization, exc)
            errors[i] = str(exc)

    design = lambda r: Design(r.W, r.B) if (continuation and r is not None) else None
    for i in range(n):
        start = design(reports[i - 1]) if i else None
        attempt(i, lambda inst: dinkelbach(inst, Algorithm(algorithm), start=start))
    if continuation:
        # backward, then forward again so that no point ends below the design
        # it could inherit from its predecessor
        order = list(range(n - 2, -1, -1)) + list(range(1, n))
        for k, i in enumerate(order):
            j = i + 1 if k < n - 1 else i - 1
            if reports[i] is not None and reports[j] is not None:
                start = design(reports[j])
                attempt(i, lambda inst: refine(inst, reports[i], start))
    records = []
    for i in range(n):
        digest = scenarios[i].digest()
        if errors[i] is not None and reports[i] is None:
            records.append(failed_record(digest, Algorithm(algorithm).value, spec_variable, grid[i], realization, errors[i]))
        else:
            records.append(record_from_report(insts[i], reports[i], digest, spec_variable, grid[i], realization))
    return records


@dataclass
class SweepResult:
    records: list[RunRecord]  # per realization, in task order
    means: list[RunRecord]  # one per (value, algorithm)

    @property
    def failures(self) -> int:
        return sum(r.status != "ok" for r in self.records)

    def rows(self) -> list[RunRecord]:
        return self.records + self.means

    def mean_swee(self, algorithm, value) -> float:
        algorithm = Algorithm(algorithm).value
        return mean_of_ratios([r for r in self.records if r.algorithm == algorithm and r.value == value])


def run_sweep(spec: SweepSpec, scenario: Scenario, workers: int = 1, outdir=None) -> SweepResult:
    """Every (grid value, algorithm, realization) run, then one averaged row per (value, algorithm).

    Realization ``r`` uses seed offset ``r``; ``spec.seed`` overrides the
    scenario seed.  Each (algorithm, realization) chain is independent and may
    execute in a process pool, but results are collected and written in
    (value, algorithm, realization) order by this process only.
    """
    if spec.seed is not None:
        scenario = scenario.with_seed(spec.seed)
    var = spec.variable.value
    scenarios = [spec.apply(scenario, value) for value in spec.grid]
    chains = [
        (scenarios, var, spec.grid, alg.value, r, spec.continuation)
        for alg in spec.algorithms
        for r in range(spec.realizations)
    ]
    if workers > 1 and len(chains) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_chain, chains))
    else:
        done = [_chain(c) for c in chains]
    # reorder to (value, algorithm, realization)
    n, n_alg = spec.realizations, len(spec.algorithms)
    records = [done[a * n + r][i] for i in range(len(spec.grid)) for a in range(n_alg) for r in range(n)]
    means = []
    n = spec.realizations
    for i in range(0, len(records), n):
        means.append(mean_record(records[i : i + n]))
    result = SweepResult(records, means)
    if outdir is not None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.csv").write_text(csv_text(RunRecord.columns(), records_rows(result.rows()), "results"))
        spec_dict = asdict(spec)
        spec_dict["variable"] = spec.variable.value
        spec_dict["algorithms"] = [a.value for a in spec.algorithms]
        write_manifest(
            out / "manifest.json",
            scenario,
            {"mode": "sweep", "sweep": spec_dict, "workers": workers, "failures": result.failures,
             "wall_times": [r.wall_time for r in records]},
        )  # fmt: skip
    return result
