"""Command-line front end: ``gfmguard run | verify | sweep | defaults``.

Exit codes: 0 success, 1 check failure, 2 configuration error, 3 integration abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import analysis
from .config import ConfigError, ScenarioConfig, dump_config, load_config, to_dict
from .engine import PLANT_NAMES, IntegrationAbort, Trajectory, grid_voltage, integrate
from .safety import SafetyEventLog

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3

SIGNAL_COLUMNS = (
    "p", "q", "omega", "v_ref_d", "W_d", "W_q", "eta", "h", "filter_active",
    "v_t_d", "v_t_q", "v_t_nominal_d", "v_t_nominal_q",
)


def csv_columns(cfg: ScenarioConfig) -> tuple[str, ...]:
    return ("t", *PLANT_NAMES, "theta", *cfg.controller_states, *SIGNAL_COLUMNS)


def write_csv(traj: Trajectory, path: Path) -> None:
    cols = csv_columns(traj.cfg)
    data = np.column_stack([traj[c] for c in cols])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(cols), comments="")


def summarize(traj: Trajectory, log: SafetyEventLog, runtime: float | None = None) -> dict:
    it = traj.i_t_norm()
    k = int(np.argmax(it))
    names = ("t", *PLANT_NAMES, "theta", *traj.cfg.controller_states)
    out = {
        "final_state": {n: float(traj[n][-1]) for n in names},
        "N_eta": log.N_eta,
        "T_eta": log.T_eta,
        "episodes": [[a, b] for a, b in log.episodes],
        "max_i_t": float(it[k]),
        "t_max_i_t": float(traj.t[k]),
        "n_records": len(traj),
        "n_steps": traj.n_steps,
    }
    if runtime is not None:
        out["runtime_s"] = runtime
    return out


def _simulate(cfg: ScenarioConfig):
    """Worker entry point; returns ``(trajectory, log, runtime)`` or the abort message."""
    t0 = time.perf_counter()
    try:
        traj, log = integrate(cfg)
    except IntegrationAbort as exc:
        return None, None, str(exc)
    return traj, log, time.perf_counter() - t0


def _prepare_out(path: str | None) -> Path:
    out = Path(path or "gfmguard-out")
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from None
    return out


def _manifest(args, out: Path, **extra) -> None:
    body = {"command": args.command, "config": args.config, "out": str(out), "seed": args.seed}
    body.update(extra)
    (out / "manifest.json").write_text(json.dumps(body, indent=2))


def _parse_value(raw: str):
    """YAML scalar, except that ``1e-4`` style numbers (strings to YAML 1.1) become floats."""
    value = yaml.safe_load(raw)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            pass
    return value


def _apply_sets(cfg: ScenarioConfig, sets) -> ScenarioConfig:
    for item in sets or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        cfg = cfg.with_value(key.strip(), _parse_value(raw))
    return cfg


# ---------------------------------------------------------------- run


def cmd_run(args) -> int:
    cfg = _apply_sets(load_config(args.config), args.set)
    out = _prepare_out(args.out)
    _manifest(args, out)
    (out / "scenario.yaml").write_text(dump_config(cfg))
    traj, log, info = _simulate(cfg)
    if traj is None:
        print(f"integration aborted: {info}", file=sys.stderr)
        return EXIT_ABORT
    write_csv(traj, out / "trajectory.csv")
    summary = summarize(traj, log, info)
    summary["scenario"] = to_dict(cfg)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=analysis._jsonable))
    print(f"t_end={traj.t[-1]:g} records={len(traj)} steps={traj.n_steps} "
          f"max|i_t|={summary['max_i_t']:.6f} at t={summary['t_max_i_t']:.4f} "
          f"N_eta={log.N_eta} T_eta={log.T_eta:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------- verify

SCENARIOS = (("dads", False), ("dads", True), ("pi", False), ("pi", True))


def scenario_name(controller: str, filtered: bool) -> str:
    return f"{'safe-' if filtered else ''}{controller}"


def scenario_checks(traj: Trajectory, settle_window: float = 0.5) -> list[analysis.CheckReport]:
    cfg = traj.cfg
    reports = []
    if cfg.controller == "dads" and not cfg.safety.enabled:
        # segments shorter than the settle window have nothing to settle into
        windows = [(b - settle_window, b) for a, b in traj.segments if b - a >= settle_window]
        if windows:
            reports.append(analysis.check_residual_band(traj, windows=windows))
        faults = [(a + settle_window, b) for a, b in traj.segments
                  if b - a > settle_window and math.hypot(*grid_voltage(a, cfg)) == 0.0]
        if faults:
            reports.append(analysis.check_residual_band(traj, windows=faults, name="residual_band_fault"))
        reports.append(analysis.check_decay_envelope(traj))
    if cfg.safety.enabled:
        reports.append(analysis.check_current_invariance(traj))
    if cfg.controller == "dads":
        reports.append(analysis.check_gain_monotone_bounded(traj))
    return reports


def _pool(jobs: int | None, n: int):
    jobs = jobs or min(n, os.cpu_count() or 1)
    return ProcessPoolExecutor(max_workers=max(1, jobs))


def cmd_verify(args) -> int:
    base = _apply_sets(load_config(args.config), args.set)
    out = _prepare_out(args.out)
    _manifest(args, out)
    cfgs = [base.replace(controller=c, safety=dataclasses.replace(base.safety, enabled=f)) for c, f in SCENARIOS]
    with _pool(args.jobs, len(cfgs)) as pool:
        results = list(pool.map(_simulate, cfgs))

    report: dict = {"scenarios": {}, "oracles": []}
    status = EXIT_OK
    for (c, f), cfg, (traj, log, info) in zip(SCENARIOS, cfgs, results):
        name = scenario_name(c, f)
        if traj is None:
            print(f"ABORT {name}: {info}")
            report["scenarios"][name] = {"aborted": info}
            status = EXIT_ABORT
            continue
        checks = scenario_checks(traj)
        for r in checks:
            print(f"[{name}] {r.line()}")
            if not r.passed and status == EXIT_OK:
                status = EXIT_CHECK
        summary = summarize(traj, log, info)
        print(f"[{name}] max|i_t|={summary['max_i_t']:.6f} N_eta={log.N_eta} T_eta={log.T_eta:.6g}")
        report["scenarios"][name] = {"summary": summary, "checks": [r.to_dict() for r in checks]}

    if not args.skip_oracles:
        rng = np.random.default_rng(args.seed)
        for r in analysis.filter_bound_suite(rng) + analysis.projection_suite(rng):
            print(f"[oracle] {r.line()}")
            report["oracles"].append(r.to_dict())
            if not r.passed and status == EXIT_OK:
                status = EXIT_CHECK
    report["pass"] = status == EXIT_OK
    report["scenario"] = to_dict(base)
    (out / "verify_report.json").write_text(json.dumps(report, indent=2, default=analysis._jsonable))
    print("verify:", "PASS" if status == EXIT_OK else "FAIL")
    return status


# ---------------------------------------------------------------- sweep


def sweep_row(value, traj: Trajectory | None, log: SafetyEventLog | None, info) -> dict:
    if traj is None:
        return {"value": value, "aborted": info}
    first = traj.segments[0]
    res = analysis.residual_signal(traj)
    m = (traj.t >= first[1] - 0.5) & (traj.t <= first[1])
    seg = traj.t <= first[1]
    eps = traj.cfg.dads.epsilon
    band = math.sqrt(2.0 * eps) * 1.05
    outside = np.nonzero(seg & (res > band))[0]
    settle = float(traj.t[outside[-1]]) if outside.size else 0.0
    return {
        "value": value,
        "settle_time": settle,
        "residual": float(res[m].max()),
        "max_i_t": float(traj.i_t_norm().max()),
        "z_d": float(traj["z_d"][-1]) if "z_d" in traj.columns else math.nan,
        "z_q": float(traj["z_q"][-1]) if "z_q" in traj.columns else math.nan,
        "N_eta": log.N_eta,
        "T_eta": log.T_eta,
    }


def cmd_sweep(args) -> int:
    base = _apply_sets(load_config(args.config), args.set)
    tokens = [v.strip() for v in args.values.split(",") if v.strip()]
    if not tokens:
        raise ConfigError("--values is empty")
    values = [_parse_value(v) for v in tokens]
    cfgs = [base.with_value(args.param, v) for v in values]
    out = _prepare_out(args.out)
    _manifest(args, out, param=args.param, values=values)
    with _pool(args.jobs, len(cfgs)) as pool:
        results = list(pool.map(_simulate, cfgs))
    rows, status = [], EXIT_OK
    for tok, v, cfg, (traj, log, info) in zip(tokens, values, cfgs, results):
        sub = out / f"{args.param}={tok}"
        sub.mkdir(exist_ok=True)
        (sub / "scenario.yaml").write_text(dump_config(cfg))
        if traj is None:
            status = EXIT_ABORT
        else:
            if not args.no_csv:
                write_csv(traj, sub / "trajectory.csv")
            (sub / "summary.json").write_text(json.dumps(summarize(traj, log, info), indent=2))
        rows.append(sweep_row(v, traj, log, info))

    keys = ["value", "settle_time", "residual", "max_i_t", "z_d", "z_q", "N_eta", "T_eta"]
    lines = [",".join(keys)]
    for r in rows:
        lines.append(",".join(r.get("aborted", "") if k != "value" and "aborted" in r else _fmt(r[k]) for k in keys))
    (out / "sweep_summary.csv").write_text("\n".join(lines) + "\n")
    print(f"{args.param:>14} " + " ".join(f"{k:>12}" for k in keys[1:]))
    for r in rows:
        if "aborted" in r:
            print(f"{r['value']!s:>14} aborted: {r['aborted']}")
        else:
            print(f"{r['value']!s:>14} " + " ".join(f"{r[k]:>12.5g}" for k in keys[1:]))
    return status


def _fmt(v) -> str:
    return format(v, ".17g") if isinstance(v, float) else str(v)


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gfmguard", description="Grid-forming inverter DADS/CBF simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="scenario YAML (defaults apply when omitted)")
        sp.add_argument("--out", help="output directory (default ./gfmguard-out)")
        sp.add_argument("--seed", type=int, default=0, help="seed for randomized oracle suites")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a dotted config key")

    common(sub.add_parser("run", help="simulate one scenario and write CSV + summary"))
    v = sub.add_parser("verify", help="run DADS/PI with and without the filter and check them")
    common(v)
    v.add_argument("--jobs", type=int, help="parallel worker processes")
    v.add_argument("--skip-oracles", action="store_true", help="skip the randomized oracle suites")
    s = sub.add_parser("sweep", help="simulate once per parameter value")
    common(s)
    s.add_argument("--param", required=True, help="dotted config key, e.g. dads.Gamma or dads.epsilon")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--jobs", type=int, help="parallel worker processes")
    s.add_argument("--no-csv", action="store_true", help="write summaries only")
    sub.add_parser("defaults", help="print the default scenario as YAML")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "defaults":
            sys.stdout.write(dump_config(ScenarioConfig()))
            return EXIT_OK
        return {"run": cmd_run, "verify": cmd_verify, "sweep": cmd_sweep}[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
