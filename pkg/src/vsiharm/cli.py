"""Command-line harness.

    vsiharm [--config FILE] [--out DIR] [--fidelity averaged|switched]
            [--orders K0..K1] [--mode ideal|loop-corrected] COMMAND ...

Commands: bode, predict, simulate, sweep, sensitivity, estimate, report.
Every command writes CSV files with a header row and a ``manifest.txt``
holding the resolved configuration. Exit codes: 0 ok, 1 usage/config
error, 2 numerical or convergence failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analytic
from .estimate import EstimationError, eol_report, estimate_delta_ron, estimate_health
from .params import (ConfigError, DeviceHealth, ScenarioConfig, SystemParams, default_health,
                     default_params, dump_config, load_config, operating_point)
from .simulate import REF_CHANNELS, ConvergenceError, PairedRun, SimOptions, run_paired, simulate
from .spectrum import SpectrumError, spectra_from_csv, spectra_to_csv

log = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
TABLE_IV_ORDERS = (0, 6, 12, 18, 24)


@dataclass(frozen=True)
class Scenario:
    params: SystemParams
    health: DeviceHealth
    device_id: str = "S1"
    delta_r_on: float = 1e-3
    fidelity: str = "averaged"
    n_cycles: int = 10
    settle_cycles: int = 20
    n_over: int = 200
    out_dir: Path = Path("out")

    def __post_init__(self):
        self.scenario_config  # validates device, delta, fidelity and cycle counts

    @classmethod
    def from_config(cls, params, health, sc: ScenarioConfig, out_dir=Path("out")) -> "Scenario":
        return cls(params, health, sc.degraded_device, sc.delta_r_on, sc.fidelity,
                   sc.n_cycles, sc.settle_cycles, sc.n_over, Path(out_dir))

    @property
    def sim_options(self) -> SimOptions:
        return SimOptions(fidelity=self.fidelity, n_cycles=self.n_cycles,
                          settle_cycles=self.settle_cycles, n_over=self.n_over)

    @property
    def scenario_config(self) -> ScenarioConfig:
        return ScenarioConfig(self.device_id, self.delta_r_on, self.fidelity,
                              self.n_cycles, self.settle_cycles, self.n_over)


def default_scenario(out_dir=Path("out"), **changes) -> Scenario:
    return replace(Scenario(default_params(), default_health(), out_dir=Path(out_dir)), **changes)


# ---------------------------------------------------------------------------
# output helpers

def write_csv(path: Path, columns: Sequence[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(x) for x in row])
    path.write_text(buf.getvalue())
    return path


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _cell(x) -> str:
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return "" if x is None else str(x)


def write_manifest(out_dir: Path, command: str, scenario: Scenario, extra: dict | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"command = {command}\n"]
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}\n")
    lines.append("\n")
    lines.append(dump_config(scenario.params, scenario.health, scenario.scenario_config))
    path = out_dir / "manifest.txt"
    path.write_text("".join(lines))
    return path


# ---------------------------------------------------------------------------
# commands

def cmd_bode(params: SystemParams, f_min: float = 0.0, f_max: float = 2000.0, points: int = 200,
             out_path: Path | None = None) -> list[tuple]:
    """Rows (f_hz, order, gain, phase_deg, error_pct): a log grid, then the loop-table orders."""
    if not 0.0 <= f_min < f_max:
        raise ConfigError("need 0 <= f_min < f_max")
    if points < 2:
        raise ConfigError("points must be >= 2")
    lo = f_min if f_min > 0 else min(1.0, f_max / 10.0)
    freqs = list(np.geomspace(lo, f_max, points))
    if f_min == 0.0:
        freqs.insert(0, 0.0)
    rows = []
    for f in freqs:
        lr = analytic.loop_response(params, f)
        err = 100.0 * abs(1.0 - complex(analytic.closed_loop_gain(params, f)))
        rows.append((float(f), None, lr.gain, lr.phase_deg, err))
    for k in TABLE_IV_ORDERS:
        lr = analytic.loop_response(params, k * params.f_g)
        rows.append((k * params.f_g, k, lr.gain, lr.phase_deg, analytic.suppression_error(params, k)))
    if out_path is not None:
        write_csv(out_path, ("f_hz", "order", "gain", "phase_deg", "error_pct"), rows)
    return rows


def cmd_predict(scenario: Scenario, k_max: int = 10, mode: str = analytic.LOOP_CORRECTED,
                out_path: Path | None = None) -> list[tuple]:
    """Rows (order, |dv_d*|, |dv_q*|, |dv_a*|, |dv_b*|, |dv_c*|) in volts."""
    op = operating_point(scenario.params)
    spectra = analytic.predicted_ref_harmonics(scenario.delta_r_on, op, scenario.params, k_max, mode,
                                               scenario.device_id)
    rows = [(k, *(abs(spectra[ch][k]) for ch in REF_CHANNELS)) for k in range(k_max + 1)]
    if out_path is not None:
        write_csv(out_path, ("order", "dv_d", "dv_q", "dv_a", "dv_b", "dv_c"), rows)
    return rows


def cmd_simulate(scenario: Scenario, orders: Sequence[int] = range(11), write: bool = True) -> PairedRun:
    """Paired healthy/degraded runs; writes traces, raw spectra and the difference spectra."""
    run = run_paired(scenario.params, scenario.health, scenario.device_id, scenario.delta_r_on,
                     scenario.sim_options, orders)
    if write:
        out = Path(scenario.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        run.baseline.to_csv(out / "trace_baseline.csv")
        run.degraded.to_csv(out / "trace_degraded.csv")
        spectra_to_csv(run.baseline_spectra.values(), out / "spectra_baseline.csv")
        spectra_to_csv(run.degraded_spectra.values(), out / "spectra_degraded.csv")
        spectra_to_csv(run.delta.values(), out / "spectra_delta.csv")
        write_manifest(out, "simulate", scenario, {
            "orders": " ".join(str(k) for k in orders),
            "converged": run.converged,
            "saturated": run.saturated,
            "settle_cycles_baseline": run.baseline.settle_cycles,
            "settle_cycles_degraded": run.degraded.settle_cycles,
        })
    if not run.converged:
        raise ConvergenceError("closed loop did not reach periodic steady state")
    return run


def _sweep_point(args):
    scenario, delta, orders, baseline = args
    run = run_paired(scenario.params, scenario.health, scenario.device_id, delta,
                     scenario.sim_options, orders, baseline=baseline)
    return delta, {ch: run.delta[ch] for ch in ("v_d*", "v_q*")}, run.converged


@dataclass
class SweepResult:
    rows: list[tuple]
    summary: list[tuple]


def linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares line through the origin-free data: (slope, intercept, r2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def cmd_sweep(scenario: Scenario, deltas: Sequence[float], orders: Sequence[int] = range(6),
              mode: str = analytic.LOOP_CORRECTED, jobs: int = 1, write: bool = True) -> SweepResult:
    """Model-vs-simulation comparison over a list of resistance increases.

    ``rows``: (delta_r_on, order, pred_d, pred_q, sim_d, sim_q, err_d_pct, err_q_pct).
    ``summary``: per order, mean relative error over nonzero deltas, and the
    fitted slope/R^2 of simulated |dv_d*| against delta_r_on.
    """
    deltas = [float(d) for d in deltas]
    if not deltas:
        raise ConfigError("empty delta list")
    orders = tuple(orders)
    params = scenario.params
    op = operating_point(params)
    baseline = simulate(params, scenario.health, scenario.sim_options)
    if not baseline.meta["converged"]:
        raise ConvergenceError("baseline did not converge")
    tasks = [(scenario, d, orders, baseline) for d in deltas]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]
    if not all(conv for _, _, conv in results):
        raise ConvergenceError("a sweep point did not converge")
    unit = analytic.predicted_ref_harmonics(1.0, op, params, max(orders), mode, scenario.device_id)
    rows = []
    for delta, spec, _ in results:
        for k in orders:
            pd, pq = delta * abs(unit["v_d*"][k]), delta * abs(unit["v_q*"][k])
            sd, sq = abs(spec["v_d*"][k]), abs(spec["v_q*"][k])
            ed = 100.0 * abs(sd - pd) / pd if pd > 0 else math.nan
            eq = 100.0 * abs(sq - pq) / pq if pq > 1e-12 * max(pd, 1e-300) else math.nan
            rows.append((delta, k, pd, pq, sd, sq, ed, eq))
    summary = []
    for k in orders:
        sel = [r for r in rows if r[1] == k]
        ed = [r[6] for r in sel if not math.isnan(r[6])]
        eq = [r[7] for r in sel if not math.isnan(r[7])]
        if len(sel) >= 2:
            slope, _, r2 = linear_fit([r[0] for r in sel], [r[4] for r in sel])
        else:
            slope, r2 = math.nan, math.nan
        summary.append((k, float(np.mean(ed)) if ed else math.nan, float(np.mean(eq)) if eq else math.nan,
                        slope, abs(unit["v_d*"][k]), r2))
    if write:
        out = Path(scenario.out_dir)
        write_csv(out / "sweep.csv", ("delta_r_on", "order", "pred_d", "pred_q", "sim_d", "sim_q",
                                      "err_d_pct", "err_q_pct"), rows)
        write_csv(out / "sweep_summary.csv", ("order", "mean_err_d_pct", "mean_err_q_pct",
                                              "sim_slope_d", "model_slope_d", "r2_d"), summary)
        write_manifest(out, "sweep", scenario, {"deltas": " ".join(repr(d) for d in deltas), "mode": mode})
    return SweepResult(rows, summary)


def cmd_sensitivity(params: SystemParams, orders: Sequence[int] = range(7), i_a: float = 1.0,
                    m_d: float = 0.775, mode: str = analytic.IDEAL,
                    out_path: Path | None = None) -> list[tuple[int, float, float]]:
    op = analytic.normalized_operating_point(params, i_a, m_d)
    rows = analytic.sensitivity_table(params, op, orders, mode)
    if out_path is not None:
        write_csv(out_path, ("order", "d_axis_v_per_ohm", "q_axis_v_per_ohm"), rows)
    return rows


def cmd_estimate(spectra_path, params: SystemParams, health: DeviceHealth,
                 orders: Sequence[int] = (0, 1, 2), mode: str = analytic.LOOP_CORRECTED,
                 out_dir: Path | None = None):
    """Estimate, localize and grade from a difference-spectra CSV."""
    delta = spectra_from_csv(spectra_path)
    missing = [ch for ch in REF_CHANNELS if ch not in delta]
    if missing:
        raise SpectrumError(f"{spectra_path}: missing channels {missing}")
    op = operating_point(params)
    est = estimate_health(delta, op, params, orders, mode)
    dc_only = estimate_delta_ron(delta, op, params, (0,), mode, device_id=est.device_model)
    report = eol_report(est, health)
    report.extra["delta_r_on_hat_dc_only"] = dc_only.delta_r_on_hat
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "estimate.txt").write_text(report.to_text())
        d = report.as_dict()
        write_csv(out / "estimate.csv", list(d), [list(d.values())])
    return report


def cmd_report(scenario: Scenario, mode: str = analytic.LOOP_CORRECTED) -> dict[str, Path]:
    """Loop-gain table, sensitivity table and one model-vs-simulation comparison."""
    out = Path(scenario.out_dir)
    paths = {}
    rows = [r for r in cmd_bode(scenario.params, 0.0, 2000.0, 2) if r[1] is not None]
    paths["loop_gain"] = write_csv(out / "table_loop_gain.csv",
                                   ("f_hz", "order", "gain", "phase_deg", "error_pct"), rows)
    paths["sensitivity"] = out / "table_sensitivity.csv"
    cmd_sensitivity(scenario.params, out_path=paths["sensitivity"])
    run = cmd_simulate(replace(scenario, out_dir=out / "simulate"), range(6))
    pred = cmd_predict(scenario, 5, mode)
    comp = []
    for k in range(6):
        sd, sq = abs(run.delta["v_d*"][k]), abs(run.delta["v_q*"][k])
        pd, pq = pred[k][1], pred[k][2]
        comp.append((k, pd, sd, 100 * abs(sd - pd) / pd if pd else math.nan,
                     pq, sq, 100 * abs(sq - pq) / pq if pq > 1e-12 else math.nan))
    paths["comparison"] = write_csv(out / "table_model_vs_sim.csv",
                                    ("order", "pred_d", "sim_d", "err_d_pct", "pred_q", "sim_q", "err_q_pct"),
                                    comp)
    write_manifest(out, "report", scenario, {"mode": mode})
    return paths


# ---------------------------------------------------------------------------
# argument parsing

def parse_orders(text: str) -> list[int]:
    """``"0..5"`` -> [0..5]; ``"0,1,2"`` -> [0, 1, 2]."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo or lo < 0:
                raise ValueError
            return list(range(lo, hi + 1))
        out = [int(x) for x in text.split(",") if x.strip()]
        if not out or min(out) < 0:
            raise ValueError
        return out
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad order range {text!r}, expected K0..K1") from None


def parse_deltas(text: str) -> list[float]:
    """``"0:1e-3:1e-4"`` (inclusive start:stop:step) or a comma list."""
    try:
        if ":" in text:
            a, b, c = (float(x) for x in text.split(":"))
            if c <= 0 or b < a:
                raise ValueError
            n = int(round((b - a) / c))
            return [a + i * c for i in range(n + 1)]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad delta list {text!r}") from None


def _mode(text: str) -> str:
    m = text.replace("-", "_")
    if m not in analytic.MODES:
        raise argparse.ArgumentTypeError("mode must be ideal or loop-corrected")
    return m


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--config", type=Path, default=S, help="INI config (system/health/scenario)")
    common.add_argument("--out", type=Path, default=S, help="output directory")
    common.add_argument("--fidelity", choices=("averaged", "switched"), default=S)
    common.add_argument("--orders", type=parse_orders, default=S, help="harmonic orders, K0..K1")
    common.add_argument("--mode", type=_mode, default=S, help="ideal | loop-corrected")
    common.add_argument("-v", "--verbose", action="store_true", default=S)

    p = _Parser(prog="vsiharm", description=__doc__.split("\n\n")[0], parents=[common],
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("bode", parents=[common], help="closed-loop response table")
    b.add_argument("--f-min", type=float, default=0.0)
    b.add_argument("--f-max", type=float, default=2000.0)
    b.add_argument("--points", type=int, default=200)

    pr = sub.add_parser("predict", parents=[common], help="analytic harmonic increments")
    pr.add_argument("--delta", type=float, default=None, help="resistance increase, ohm")
    pr.add_argument("--device", default=None)

    si = sub.add_parser("simulate", parents=[common], help="paired healthy/degraded simulation")
    si.add_argument("--delta", type=float, default=None)
    si.add_argument("--device", default=None)

    sw = sub.add_parser("sweep", parents=[common], help="model vs simulation over a resistance sweep")
    sw.add_argument("--deltas", type=parse_deltas, default=parse_deltas("0:1e-3:1e-4"))
    sw.add_argument("--device", default=None)
    sw.add_argument("--jobs", type=int, default=1)

    se = sub.add_parser("sensitivity", parents=[common], help="harmonic sensitivity table")
    se.add_argument("--i-a", type=float, default=1.0, help="normalized current amplitude, A")
    se.add_argument("--m-d", type=float, default=0.775, help="modulation index")

    es = sub.add_parser("estimate", parents=[common], help="estimate from difference spectra")
    es.add_argument("spectra", type=Path, help="difference spectra CSV (e.g. spectra_delta.csv)")

    sub.add_parser("report", parents=[common], help="loop, sensitivity and comparison tables")
    return p


def _resolve(ns) -> tuple[Scenario, dict]:
    if getattr(ns, "config", None):
        params, health, sc = load_config(ns.config)
    else:
        params, health, sc = default_params(), default_health(), ScenarioConfig()
    if getattr(ns, "fidelity", None):
        sc = replace(sc, fidelity=ns.fidelity)
    if getattr(ns, "delta", None) is not None:
        sc = replace(sc, delta_r_on=ns.delta)
    if getattr(ns, "device", None):
        sc = replace(sc, degraded_device=ns.device)
    out = getattr(ns, "out", Path("out"))
    scenario = Scenario.from_config(params, health, sc, out)
    opts = {"orders": getattr(ns, "orders", None), "mode": getattr(ns, "mode", None)}
    return scenario, opts


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(ns, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        scenario, opts = _resolve(ns)
        out = Path(scenario.out_dir)
        cmd = ns.command
        if cmd == "bode":
            cmd_bode(scenario.params, ns.f_min, ns.f_max, ns.points, out / "bode.csv")
            write_manifest(out, cmd, scenario)
        elif cmd == "predict":
            orders = opts["orders"] or list(range(11))
            rows = cmd_predict(scenario, max(orders), opts["mode"] or analytic.LOOP_CORRECTED)
            write_csv(out / "predict.csv", ("order", "dv_d", "dv_q", "dv_a", "dv_b", "dv_c"),
                      [r for r in rows if r[0] in orders])
            write_manifest(out, cmd, scenario, {"mode": opts["mode"] or analytic.LOOP_CORRECTED})
        elif cmd == "simulate":
            run = cmd_simulate(scenario, opts["orders"] or range(11))
            d0 = run.delta["v_d*"][0] if 0 in run.delta["v_d*"] else float("nan")
            print(f"d-axis DC increment: {d0.real * 1e3:.6f} mV (files in {out})")
        elif cmd == "sweep":
            res = cmd_sweep(scenario, ns.deltas, opts["orders"] or range(6),
                            opts["mode"] or analytic.LOOP_CORRECTED, ns.jobs)
            for row in res.summary:
                print("order {}: mean err d {:.2f}%  q {:.2f}%  R2 {:.6f}".format(row[0], row[1], row[2], row[5]))
        elif cmd == "sensitivity":
            rows = cmd_sensitivity(scenario.params, opts["orders"] or range(7), ns.i_a, ns.m_d,
                                   opts["mode"] or analytic.IDEAL, out / "sensitivity.csv")
            for k, d, q in rows:
                print(f"{k:2d}  {d:.4f}  {q:.4f}")
            write_manifest(out, cmd, scenario, {"i_a": ns.i_a, "m_d": ns.m_d})
        elif cmd == "estimate":
            report = cmd_estimate(ns.spectra, scenario.params, scenario.health,
                                  opts["orders"] or (0, 1, 2), opts["mode"] or analytic.LOOP_CORRECTED, out)
            sys.stdout.write(report.to_text())
            write_manifest(out, cmd, scenario, {"spectra": ns.spectra})
        elif cmd == "report":
            paths = cmd_report(scenario, opts["mode"] or analytic.LOOP_CORRECTED)
            for name, path in paths.items():
                print(f"{name}: {path}")
    except (ConfigError, SpectrumError, FileNotFoundError, KeyError) as exc:
        print(f"vsiharm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, EstimationError, FloatingPointError) as exc:
        print(f"vsiharm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
