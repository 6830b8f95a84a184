"""Command-line runner: ``refarm {rate,outage,sweep,plan}``.

Every command writes a canonical JSON result bundle plus CSV tables into the
output directory.  Exit codes: 0 success, 2 usage error, 3 configuration
error, 4 numerical failure, 5 infeasible plan.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import QuadratureError, lte_user_rate, outage_curve, scenario_average_outages
from .config import ConfigError, ScenarioConfig, load_config
from .geometry import outage_probes
from .simulator import (
    default_workers,
    run_outage_sim,
    run_rate_sim,
    sweep_small_cell_position,
    write_debug_log,
)
from .spectrum_plan import PlanInfeasible, build_plan, calibrate_power

log = logging.getLogger("refarm")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4
EXIT_INFEASIBLE = 5

RATE_COLUMNS = ("ue_x", "ue_y", "mode", "rate_bps", "ci_halfwidth")
OUTAGE_COLUMNS = ("probe_r", "probe_psi", "scenario", "threshold_db", "p_out", "ci_lo", "ci_hi")
SWEEP_COLUMNS = ("d", "theta", "mean_rate_bps", "ci")

# CLI scenario names -> analysis names
_SCENARIO_KEYS = {"no_lte": "no_lte", "direct": "direct_overlay", "dsr": "dsr"}


class UsageError(Exception):
    pass


# -- result bundle -------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _timestamp() -> str | None:
    """UTC time from SOURCE_DATE_EPOCH when set (reproducible builds), else now."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return t.strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class ResultBundle:
    """Run metadata plus named tables (lists of row dicts) and curves."""

    meta: dict
    tables: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)

    @classmethod
    def start(cls, command: str, cfg: ScenarioConfig) -> "ResultBundle":
        meta = {
            "command": command,
            "config_hash": cfg.config_hash(),
            "seed": cfg.seed,
            "tool_version": __version__,
            "timestamp": _timestamp(),
            "config": cfg.semantic_dict(),
        }
        return cls(meta)

    def add_rows(self, table: str, rows) -> None:
        h = self.meta["config_hash"]
        self.tables.setdefault(table, []).extend({**r, "config_hash": h} for r in rows)

    def to_json(self) -> str:
        doc = {"meta": self.meta, "tables": self.tables, "curves": self.curves}
        return json.dumps(_jsonable(doc), sort_keys=True, indent=2, ensure_ascii=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ResultBundle":
        doc = json.loads(text)
        return cls(doc["meta"], doc.get("tables", {}), doc.get("curves", {}))

    def write(self, path: Path) -> None:
        path.write_text(self.to_json())


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if not math.isfinite(v) else repr(v)
    return str(v)


def write_csv(path: Path, columns, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    path.write_text(buf.getvalue())


# -- argument parsing helpers --------------------------------------------------


def _pairs(items, what) -> list[tuple[float, float]]:
    out = []
    for it in items:
        for tok in str(it).replace(";", " ").split():
            parts = tok.split(",")
            if len(parts) != 2:
                raise UsageError(f"{what}: expected 'a,b' pairs, got {tok!r}")
            try:
                out.append((float(parts[0]), float(parts[1])))
            except ValueError:
                raise UsageError(f"{what}: not a number in {tok!r}") from None
    if not out:
        raise UsageError(f"{what}: at least one position is required")
    return out


def _floats(text, what) -> list[float]:
    """Comma list ``a,b,c`` or range ``start:stop:step`` (inclusive)."""
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if not step > 0 or stop < start:
                raise UsageError(f"{what}: need step > 0 and stop >= start")
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            vals = [round(start + j * step, 12) for j in range(n)]
        else:
            vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{what}: cannot parse {text!r}") from None
    if not vals:
        raise UsageError(f"{what}: empty list")
    return vals


def _out_dir(args, cfg) -> Path:
    d = Path(args.out if args.out is not None else cfg.data["output"]["dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


# -- commands ------------------------------------------------------------------


def cmd_rate(args, cfg: ScenarioConfig) -> int:
    positions = _pairs(args.ue_positions, "--ue-positions") if args.ue_positions is not None else cfg.ue_positions()
    out = _out_dir(args, cfg)
    g = cfg.geometry("rate")
    for x, y in positions:
        if not 0.0 < math.hypot(x, y) <= g.R_c:
            raise UsageError(f"--ue-positions: ({x}, {y}) is outside the small-cell coverage (0, {g.R_c}] m")
    bundle = ResultBundle.start("rate", cfg)
    # UEs listed together share the cell unless the config fixes the count
    n_ue = args.n_ue
    if n_ue is None and cfg.data["bands"]["n_ue"] is None and cfg.data["bands"]["lambda_ue"] == 0.0:
        n_ue = float(len(positions))
    rows, ana, sim = [], None, None
    if args.mode in ("analysis", "both"):
        ctx = cfg.analysis_context("rate", n_ue=n_ue)
        bundle.meta["analysis_users_per_cell"] = ctx.users_per_cell
        ana = [lte_user_rate(math.hypot(x, y), ctx) for x, y in positions]
        rows += [dict(ue_x=x, ue_y=y, mode="analysis", rate_bps=v, ci_halfwidth=0.0)
                 for (x, y), v in zip(positions, ana)]
    if args.mode in ("sim", "both"):
        sc = cfg.sim_config("rate")
        res = run_rate_sim(sc, positions, args.workers, record=args.debug_log is not None)
        sim = res.ue_rates
        rows += [dict(ue_x=x, ue_y=y, mode="sim", rate_bps=v, ci_halfwidth=c)
                 for (x, y), v, c in zip(positions, res.ue_rates, res.ue_ci)]
        if args.debug_log is not None:
            with open(args.debug_log, "w") as fh:
                write_debug_log(res.records, fh)
    bundle.add_rows("rate", rows)
    if ana is not None and sim is not None:
        comp = [dict(ue_x=x, ue_y=y, simulation_bps=s, analysis_bps=a, gap_bps=s - a, gap_over_sim=(s - a) / s)
                for (x, y), s, a in zip(positions, sim, ana)]
        bundle.add_rows("comparison", comp)
        print(format_rate_table(comp))
    else:
        for r in rows:
            print(f"({r['ue_x']:g}, {r['ue_y']:g})  {r['mode']:8s}  {r['rate_bps'] / 1e6:8.3f} Mbit/s")
    write_csv(out / "rate.csv", RATE_COLUMNS, rows)
    bundle.write(out / "rate.json")
    return EXIT_OK


def format_rate_table(comp) -> str:
    head = f"{'UE Position':<16}{'Simulation':>12}{'Analysis':>12}{'Gap':>10}{'Gap/Sim':>10}"
    lines = [head, "-" * len(head)]
    for c in comp:
        pos = f"({c['ue_x']:g}, {c['ue_y']:g})"
        lines.append(f"{pos:<16}{c['simulation_bps'] / 1e6:>12.2f}{c['analysis_bps'] / 1e6:>12.2f}"
                     f"{c['gap_bps'] / 1e6:>10.2f}{c['gap_over_sim']:>10.2f}")
    lines.append("rates in Mbit/s")
    return "\n".join(lines)


def _outage_radio(cfg: ScenarioConfig):
    """Radio parameters of the outage study, calibrating P_l if unset."""
    rp = cfg.radio("outage")
    if rp.P_l is None:
        ctx = cfg.analysis_context("outage", radio=rp.with_power(0.0))
        rp = rp.with_power(calibrate_power(ctx.geometry, rp, ctx, cfg.data["plan"]["max_degradation_db"]))
    return rp


def cmd_outage(args, cfg: ScenarioConfig) -> int:
    out = _out_dir(args, cfg)
    g = cfg.geometry("outage")
    if args.probes is not None:
        probes = _pairs(args.probes, "--probes")
    elif cfg.data["outage"]["probes"] is not None:
        probes = [tuple(p) for p in cfg.data["outage"]["probes"]]
    else:
        probes = outage_probes(g)
    for r, _ in probes:
        if r < 0.0:
            raise UsageError("--probes: r must be non-negative")
    t_db = _floats(args.thresholds, "--thresholds") if args.thresholds else cfg.thresholds_db()
    scen = [s.strip() for s in args.scenarios.split(",")] if args.scenarios else list(cfg.data["outage"]["scenarios"])
    if "all" in scen:
        scen = list(_SCENARIO_KEYS)
    for s in scen:
        if s not in _SCENARIO_KEYS:
            raise UsageError(f"--scenarios: unknown scenario {s!r}")
    rp = _outage_radio(cfg)
    bundle = ResultBundle.start("outage", cfg)
    bundle.meta["P_l_w"] = rp.P_l
    ctx = cfg.analysis_context("outage", radio=rp)

    def point_key(r, s):
        # at a single point DSR protects users strictly inside the guard disk
        if s == "dsr":
            return "no_lte" if r < g.R_s else "with_lte"
        return "no_lte" if s == "no_lte" else "with_lte"

    if args.mode in ("analysis", "both"):
        rows = []
        for r, psi in probes:
            curve = outage_curve(r, psi, t_db, ctx)
            for s in scen:
                p = curve.probabilities[point_key(r, s)]
                rows += [dict(probe_r=r, probe_psi=psi, scenario=s, threshold_db=t, p_out=v, ci_lo=None, ci_hi=None)
                         for t, v in zip(t_db, p)]
        bundle.add_rows("outage_analysis", rows)
        write_csv(out / "outage_analysis.csv", OUTAGE_COLUMNS, rows)
        avg_rows = []
        radius = g.R_s + g.delta_R_s
        for t in t_db:
            vals = scenario_average_outages(10.0 ** (t / 10.0), ctx)
            avg_rows += [dict(probe_r=radius, probe_psi=None, scenario=s, threshold_db=t,
                              p_out=vals[_SCENARIO_KEYS[s]], ci_lo=None, ci_hi=None) for s in scen]
        bundle.add_rows("outage_average", avg_rows)
        write_csv(out / "outage_average.csv", OUTAGE_COLUMNS, avg_rows)
    if args.mode in ("sim", "both"):
        sc = cfg.sim_config("outage", radio=rp)
        need = {point_key(r, s) for r, _ in probes for s in scen}
        res = {k: run_outage_sim(sc, probes, t_db, k == "with_lte", args.workers) for k in sorted(need)}
        rows = []
        for j, (r, psi) in enumerate(probes):
            for s in scen:
                e = res[point_key(r, s)]
                lo, hi = e.outage_interval()
                rows += [dict(probe_r=r, probe_psi=psi, scenario=s, threshold_db=t,
                              p_out=e.outage[j, k], ci_lo=lo[j, k], ci_hi=hi[j, k])
                         for k, t in enumerate(t_db)]
        bundle.add_rows("outage_sim", rows)
        write_csv(out / "outage_sim.csv", OUTAGE_COLUMNS, rows)
    bundle.write(out / "outage.json")
    print(f"outage: {len(probes)} probes x {len(t_db)} thresholds, P_l = {rp.P_l:.4g} W -> {out}")
    return EXIT_OK


def cmd_sweep(args, cfg: ScenarioConfig) -> int:
    out = _out_dir(args, cfg)
    d_grid = _floats(args.d_grid, "--d-grid") if args.d_grid else [float(x) for x in cfg.data["sweep"]["d_grid"]]
    t_grid = (_floats(args.theta_grid, "--theta-grid") if args.theta_grid
              else [float(x) for x in cfg.data["sweep"]["theta_grid"]])
    positions = [(d, t) for d in d_grid for t in t_grid]
    sc = cfg.sim_config("sweep")
    points = sweep_small_cell_position(sc, positions, cfg.ue_positions(), args.workers)
    rows = [dict(d=p.D, theta=p.theta, mean_rate_bps=p.mean_rate, ci=p.ci) for p in points if p.valid]
    flagged = [dict(d=p.D, theta=p.theta) for p in points if not p.valid]
    if not rows:
        log.warning("no placement in the grid keeps the guard region inside its sector")
    bundle = ResultBundle.start("sweep", cfg)
    bundle.add_rows("sweep", rows)
    bundle.add_rows("invalid_placements", flagged)
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    bundle.write(out / "sweep.json")
    print(f"sweep: {len(rows)} valid, {len(flagged)} flagged -> {out}")
    return EXIT_OK


def cmd_plan(args, cfg: ScenarioConfig) -> int:
    out = _out_dir(args, cfg)
    g = cfg.geometry("outage")
    rp = cfg.radio("outage")
    ctx = cfg.analysis_context("outage", radio=rp.with_power(0.0))
    pl = cfg.data["plan"]
    plan = build_plan(g, ctx, reserved_bw=float(cfg.data["bands"]["reserved_hz"]),
                      max_degradation_db=float(pl["max_degradation_db"]), position=pl["position"],
                      max_cell_ids=int(pl["max_cell_ids"]))
    doc = plan.to_dict()
    if rp.P_l is not None:
        doc["P_l_configured_w"] = rp.P_l
    bundle = ResultBundle.start("plan", cfg)
    bundle.curves["plan"] = doc
    bundle.write(out / "plan.json")
    print(f"plan: {doc['carrier_grid']['n_carriers']} carriers, R_s = {plan.R_s:.2f} m, "
          f"calibrated P_l = {plan.P_l:.4g} W -> {out / 'plan.json'}")
    for r in plan.reservations:
        print(f"  sector {r.sector}: carriers {list(r.carriers)} -> PRBs {list(r.prbs)}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML scenario file (defaults to the built-in profile)")
    common.add_argument("-o", "--out", help="output directory (overrides output.dir)")
    common.add_argument("-w", "--workers", type=int, default=None,
                        help="worker processes (default: $REFARM_WORKERS or 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="refarm", description="LTE small cells refarming GSM spectrum: "
                                "rates, outage and deployment planning.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("rate", parents=[common], help="LTE UE rates (analysis and/or simulation)")
    r.add_argument("--ue-positions", nargs="*", metavar="X,Y",
                   help="UE offsets from the small cell in metres")
    r.add_argument("--mode", choices=("analysis", "sim", "both"), default="both")
    r.add_argument("--n-ue", type=float, default=None,
                   help="UEs sharing the cell in the analysis (default: number of positions)")
    r.add_argument("--debug-log", help="write per-drop SINR/scheduling records here")
    r.set_defaults(func=cmd_rate)

    o = sub.add_parser("outage", parents=[common], help="GSM outage curves and scenario averages")
    o.add_argument("--probes", nargs="*", metavar="R,PSI", help="probe positions (r m, psi rad)")
    o.add_argument("--thresholds", help="dB list 'a,b,c' or range 'start:stop:step'")
    o.add_argument("--scenarios", help="comma list of no_lte,direct,dsr (or 'all')")
    o.add_argument("--mode", choices=("analysis", "sim", "both"), default="analysis")
    o.set_defaults(func=cmd_outage)

    s = sub.add_parser("sweep", parents=[common], help="small-cell throughput over (D, theta)")
    s.add_argument("--d-grid", help="distances in m, list or range")
    s.add_argument("--theta-grid", help="azimuths in rad, list or range")
    s.set_defaults(func=cmd_sweep)

    pl = sub.add_parser("plan", parents=[common], help="carrier grid, punctured PRBs and power")
    pl.set_defaults(func=cmd_plan)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers is None:
        args.workers = default_workers()
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"refarm {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"refarm: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"refarm: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PlanInfeasible as exc:
        print(f"refarm plan: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (QuadratureError, FloatingPointError) as exc:
        print(f"refarm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
