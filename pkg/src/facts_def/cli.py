"""Command line: run scenarios, sweep the STATCOM droop, run the path study, export datasets."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pathstudy
from .config import ConfigError, ScenarioConfig, apply_overrides, parse_config, preset, serialize
from .datasets import load_dataset
from .energy import (
    AnalysisError,
    ConsistencyError,
    SlopeVerdict,
    analysis_window,
    cycle_increments,
    def_statcom_decompose,
    def_tcsc_decompose,
    slope_estimate,
    statcom_dq,
    summary_block,
    total_injection,
)
from .simulator import Trajectory, run

DEFAULT_DROOP_GRID = (-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
DEFAULT_ALPHAS = (0.5, 1.0, 2.0)


@dataclass
class RunSummary:
    name: str
    verdicts: dict[str, SlopeVerdict] = field(default_factory=dict)
    cycle_labels: dict[str, str] = field(default_factory=dict)
    consistency: dict[str, float] = field(default_factory=dict)
    checks: dict[str, bool] = field(default_factory=dict)
    files: list[str] = field(default_factory=list)
    events: list[str] = field(default_factory=list)
    values: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def text(self) -> str:
        out = {"scenario": self.name}
        for device, v in self.verdicts.items():
            out[f"{device}.label"] = v.label
            out[f"{device}.slope"] = v.slope
            out[f"{device}.ci_halfwidth"] = v.ci_halfwidth
            out[f"{device}.threshold"] = v.threshold
            out[f"{device}.period"] = v.period
            out[f"{device}.cycles"] = v.n_cycles
        for device, label in self.cycle_labels.items():
            out[f"{device}.closed_cycle"] = label
        for device, err in self.consistency.items():
            out[f"{device}.decomposition_error"] = err
        out.update(self.values)
        for name, passed in self.checks.items():
            out[f"check.{name}"] = "pass" if passed else "fail"
        for k, path in enumerate(self.files):
            out[f"file.{k}"] = path
        for k, event in enumerate(self.events):
            out[f"event.{k}"] = event
        out["status"] = "pass" if self.ok else "fail"
        return summary_block(out)


def load_scenario(name_or_path: str) -> ScenarioConfig:
    path = Path(name_or_path)
    if path.suffix in (".ini", ".cfg", ".txt") or path.is_file():
        return parse_config(path.read_text())
    return preset(name_or_path)


def _window(traj: Trajectory, cfg: ScenarioConfig) -> tuple[float, float]:
    start, end = analysis_window(traj, cfg.analysis.settle)
    if cfg.analysis.t_start is not None:
        start = cfg.analysis.t_start
    if cfg.analysis.t_end is not None:
        end = min(end, cfg.analysis.t_end)
    return start, end


def _reference(traj: Trajectory, cfg: ScenarioConfig) -> np.ndarray:
    name, _, end = cfg.analysis.reference.partition("@")
    return traj.branch_power(name, int(end))


def analyze(traj: Trajectory, cfg: ScenarioConfig, summary: RunSummary | None = None) -> RunSummary:
    """Decompose, classify and check a finished run against its expectations."""
    summary = summary or RunSummary(cfg.name)
    window = _window(traj, cfg)
    reference = _reference(traj, cfg)
    period = None
    for device in ("tcsc", "statcom"):
        if getattr(cfg, device) is None:
            continue
        try:
            if device == "tcsc":
                trace = def_tcsc_decompose(traj)
                br = traj.network.branch(traj.tcsc.branch)
                u = np.abs(traj.bus_voltage(br.from_bus) - traj.bus_voltage(br.to_bus))
                deviation = u - u[0]
            else:
                trace = def_statcom_decompose(traj)
                vd = statcom_dq(traj)[0]
                deviation = vd - vd[0]
            summary.checks[f"{device}.decomposition"] = True
        except ConsistencyError as exc:
            summary.events.append(str(exc))
            summary.checks[f"{device}.decomposition"] = False
            continue
        summary.consistency[device] = trace.consistency_error()
        verdict = slope_estimate(trace, window, reference=reference)
        period = verdict.period
        summary.verdicts[device] = verdict
        try:
            summary.cycle_labels[device] = cycle_increments(traj.t, trace.W_pathdep, deviation, window).label
        except AnalysisError:
            summary.cycle_labels[device] = "indeterminate"
        for label in cfg.expect.get(device, ()):
            got = summary.cycle_labels[device] if label.startswith("path_") else verdict.label
            summary.checks[f"{device}.{label}"] = got == label
    total = slope_estimate(total_injection(traj), window, period=period, reference=reference, channel="W_total")
    summary.verdicts["total"] = total
    summary.checks["conservation"] = total.label == "neutral"
    summary.checks["limits"] = not any(e.device == "tcsc" for e in traj.events)
    summary.events += [f"{e.t:.3f}s {e.device}: {e.message}" for e in traj.events]
    return summary


def run_command(
    name: str,
    overrides=None,
    out_dir: str | os.PathLike | None = None,
    dt: float | None = None,
    duration: float | None = None,
) -> RunSummary:
    """Simulate a preset or scenario file, analyse it and write the CSV outputs."""
    if name == "path-study":
        return path_study_command(out_dir=out_dir)
    cfg = load_scenario(name)
    extra = list(overrides or [])
    if dt is not None:
        extra.append(f"scenario.dt={dt!r}")
    if duration is not None:
        extra.append(f"scenario.duration={duration!r}")
    cfg = apply_overrides(cfg, extra)
    traj = run(cfg.to_case())
    summary = analyze(traj, cfg)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = _safe(cfg.name)
        traj.to_csv(out / f"{stem}_trajectory.csv")
        summary.files.append(str(out / f"{stem}_trajectory.csv"))
        if cfg.tcsc is not None:
            def_tcsc_decompose(traj).to_csv(out / f"{stem}_tcsc_energy.csv")
            summary.files.append(str(out / f"{stem}_tcsc_energy.csv"))
        if cfg.statcom is not None:
            def_statcom_decompose(traj).to_csv(out / f"{stem}_statcom_energy.csv")
            summary.files.append(str(out / f"{stem}_statcom_energy.csv"))
        total_injection(traj).to_csv(out / f"{stem}_total_energy.csv")
        summary.files.append(str(out / f"{stem}_total_energy.csv"))
        (out / f"{stem}_summary.txt").write_text(summary.text())
        summary.files.append(str(out / f"{stem}_summary.txt"))
    return summary


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


# --- droop sweep -------------------------------------------------------------

@dataclass
class SweepRow:
    kdroop: float
    slope: float
    label: str
    threshold: float


@dataclass
class SweepTable:
    rows: list[SweepRow]
    brackets: list[tuple[float, float]]

    @property
    def monotone(self) -> bool:
        slopes = np.array([r.slope for r in self.rows])
        steps = np.diff(slopes)
        return bool(np.all(steps <= 0) or np.all(steps >= 0))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("Kdroop,slope,label,threshold\n")
            for r in self.rows:
                fh.write(f"{r.kdroop!r},{r.slope!r},{r.label},{r.threshold!r}\n")


def _sweep_point(args) -> SweepRow:
    kdroop, base_text, overrides = args
    cfg = apply_overrides(parse_config(base_text), [*overrides, f"statcom.Kdroop={kdroop!r}"])
    traj = run(cfg.to_case())
    trace = def_statcom_decompose(traj)
    verdict = slope_estimate(trace, _window(traj, cfg), reference=_reference(traj, cfg))
    return SweepRow(kdroop, verdict.slope, verdict.label, verdict.threshold)


def _brackets(rows: list[SweepRow]) -> list[tuple[float, float]]:
    out = []
    for a, b in zip(rows[:-1], rows[1:]):
        if np.sign(a.slope) != np.sign(b.slope) and a.slope != 0 and b.slope != 0:
            out.append((a.kdroop, b.kdroop))
    return out


def droop_sweep(grid=DEFAULT_DROOP_GRID, base: str = "B-droop(0)", overrides=(), workers: int | None = None) -> SweepTable:
    """STATCOM path-dependent slope for each droop value, with sign-change brackets."""
    grid = [float(x) for x in grid]
    if len(grid) < 3:
        raise ValueError("droop grid needs at least 3 points")
    if grid != sorted(grid):
        raise ValueError("droop grid must be sorted")

    base_text = serialize(load_scenario(base))
    jobs = [(x, base_text, tuple(overrides)) for x in grid]
    workers = workers or os.cpu_count() or 1
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(job) for job in jobs]
    return SweepTable(rows, _brackets(rows))


def refine_bracket(table: SweepTable, base: str = "B-droop(0)", overrides=(), index: int = 0) -> SweepTable:
    """Add the midpoint of one bracket to the table (one bisection step)."""

    lo, hi = table.brackets[index]
    mid = 0.5 * (lo + hi)
    row = _sweep_point((mid, serialize(load_scenario(base)), tuple(overrides)))
    rows = sorted([*table.rows, row], key=lambda r: r.kdroop)
    return SweepTable(rows, _brackets(rows))


# --- path study ----------------------------------------------------------------

def path_study_command(alphas=DEFAULT_ALPHAS, tc: float = 0.1, prefactor: float = 1.0,
                       out_dir=None) -> RunSummary:
    summary = RunSummary("path-study")
    lag = pathstudy.alpha_sweep(alphas, tc=tc, prefactor=prefactor, kernel="lag")
    alg = pathstudy.alpha_sweep(alphas, tc=tc, prefactor=prefactor, kernel="algebraic")
    for r, a in zip(lag, alg):
        key = f"alpha={r.alpha:g}"
        summary.values[f"{key}.value_I"] = r.value_I
        summary.values[f"{key}.value_II"] = r.value_II
        summary.values[f"{key}.delta"] = r.delta
        summary.values[f"{key}.tolerance"] = r.tolerance
        summary.checks[f"{key}.lag_path_dependent"] = abs(r.delta) > 100 * r.tolerance
        scale = max(abs(a.value_I), abs(a.value_II))
        summary.checks[f"{key}.algebraic_path_independent"] = abs(a.delta) <= 1e-6 * scale
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        pathstudy.write_csv(lag, out / "path_study.csv", tc, prefactor)
        pathstudy.write_csv(alg, out / "path_study_algebraic.csv", tc, prefactor)
        (out / "path_study_summary.txt").write_text(summary.text())
        summary.files += [str(out / n) for n in ("path_study.csv", "path_study_algebraic.csv",
                                                 "path_study_summary.txt")]
    return summary


# --- entry point -----------------------------------------------------------------

def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="facts-def", description=__doc__)
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--out-dir", default=None, help="directory for CSV and summary files")
        p.add_argument("--dt", type=float, default=None, help="integration step in seconds")
        p.add_argument("--duration", type=float, default=None, help="simulated time in seconds")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="section.key=value, repeatable")

    p = sub.add_parser("run", help="simulate a preset or scenario file")
    p.add_argument("scenario", help="preset name (A-i, A-ii, ..., B-droop(x), path-study) or file")
    common(p)
    p = sub.add_parser("sweep-droop", help="STATCOM droop sweep")
    p.add_argument("--grid", type=_floats, default=list(DEFAULT_DROOP_GRID), help="comma separated Kdroop values")
    p.add_argument("--refine", type=int, default=0, help="bisection steps on the first bracket")
    p.add_argument("--workers", type=int, default=None)
    common(p)
    p = sub.add_parser("path-study", help="path I / path II alpha sweep")
    p.add_argument("--alphas", type=_floats, default=list(DEFAULT_ALPHAS))
    p.add_argument("--tc", type=float, default=0.1)
    p.add_argument("--prefactor", type=float, default=1.0)
    p.add_argument("--out-dir", default=None)
    p = sub.add_parser("export-network", help="write a dataset as JSON")
    p.add_argument("--network", default="kundur")
    p.add_argument("--out", default=None, help="file path (stdout if omitted)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "run":
            summary = run_command(args.scenario, args.override, args.out_dir, args.dt, args.duration)
            print(summary.text(), end="")
            return 0 if summary.ok else 1
        if args.verb == "sweep-droop":
            extra = list(args.override)
            if args.dt is not None:
                extra.append(f"scenario.dt={args.dt!r}")
            if args.duration is not None:
                extra.append(f"scenario.duration={args.duration!r}")
            table = droop_sweep(args.grid, overrides=extra, workers=args.workers)
            for _ in range(args.refine):
                if len(table.brackets) != 1:
                    break
                table = refine_bracket(table, overrides=extra)
            out = {}
            for r in table.rows:
                out[f"Kdroop={r.kdroop:g}.slope"] = r.slope
                out[f"Kdroop={r.kdroop:g}.label"] = r.label
            out["monotone"] = str(table.monotone).lower()
            out["brackets"] = ";".join(f"[{a:g},{b:g}]" for a, b in table.brackets) or "none"
            if args.out_dir:
                Path(args.out_dir).mkdir(parents=True, exist_ok=True)
                table.to_csv(Path(args.out_dir) / "droop_sweep.csv")
                out["file.0"] = str(Path(args.out_dir) / "droop_sweep.csv")
            print(summary_block(out), end="")
            return 0 if table.monotone and len(table.brackets) == 1 else 1
        if args.verb == "path-study":
            summary = path_study_command(args.alphas, args.tc, args.prefactor, args.out_dir)
            print(summary.text(), end="")
            return 0 if summary.ok else 1
        if args.verb == "export-network":
            text = json.dumps(load_dataset(args.network), indent=1)
            if args.out:
                Path(args.out).write_text(text)
            else:
                print(text)
            return 0
    except (ConfigError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, RuntimeError, AnalysisError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 2


if __name__ == "__main__":
    sys.exit(main())
