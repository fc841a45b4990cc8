"""Command-line entry point: ``tridentnav simulate | fuse | analyze``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import AnalysisReport, analyze
from .ekf import (
    FIX_ACCEPTED,
    FIX_GATED,
    gate_threshold,
    init_filter,
    raise_for_result,
    run_filter,
)
from .errors import DivergenceError, NumericalHealthError, TridentNavError
from .logio import (
    RunConfig,
    read_gps_array,
    read_gps_csv,
    read_imu_array,
    read_nav_csv,
    read_profile,
    read_truth_array,
    write_gps_csv,
    write_imu_csv,
    write_nav_csv,
    write_truth_csv,
)
from .simulator import simulate

__all__ = ["AnalysisReport", "main", "cmd_simulate", "cmd_fuse", "cmd_analyze"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _err(msg):
    print(f"tridentnav: error: {msg}", file=sys.stderr)


def cmd_simulate(spec_file, out_dir, seed=None) -> int:
    sim = read_profile(spec_file)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        _err(f"cannot create {out}: {exc.strerror or exc}")
        return EXIT_DATA
    res = simulate(sim, seed)
    write_truth_csv(out / "truth.csv", res.truth_table())
    write_imu_csv(out / "imu.csv", res.imu)
    write_gps_csv(out / "gps.csv", res.gps)
    tr = res.truth
    dist = float(np.sum(np.linalg.norm(np.diff(tr.p_e, axis=0), axis=1)))
    print(f"simulated {tr.t[-1]:.3f} s at {tr.rate:g} Hz: "
          f"{res.imu.shape[0]} IMU samples, {res.gps.shape[0]} GPS fixes, "
          f"path length {dist:.2f} m, max speed {np.linalg.norm(tr.v_e, axis=1).max():.2f} m/s")
    print(f"wrote {out / 'truth.csv'}, {out / 'imu.csv'}, {out / 'gps.csv'}")
    return EXIT_OK


def cmd_fuse(imu_log, gps_log, config, out_file, form=None, ins_only=False) -> int:
    cfg = RunConfig.from_file(config) if config else RunConfig()
    if form is not None:
        cfg = cfg.replace(form=form)
    imu = read_imu_array(imu_log)
    fixes = read_gps_csv(gps_log, cfg.noise.r_p, cfg.noise.r_v)
    fs0 = init_filter(fixes, imu, cfg.init, cfg.earth)
    gps = read_gps_array(gps_log)
    std = np.tile([cfg.noise.r_p, cfg.noise.r_v], (gps.shape[0], 1))
    res = run_filter(
        fs0, imu, (gps, std), cfg.noise, cfg.earth, cfg.form, ins_only,
        gate_threshold(cfg.gate_quantile), cfg.dt_nominal, cfg.dt_gate,
    )
    n = res.n_rows
    inn = np.full((res.t.size, 7), np.nan)
    used = (res.fix_row >= 0) & ((res.fix_status == FIX_ACCEPTED) | (res.fix_status == FIX_GATED))
    inn[res.fix_row[used], 0:6] = res.dy[used]
    inn[res.fix_row[used], 6] = res.nis[used]
    table = np.hstack([res.t[:, None], res.states])
    write_nav_csv(out_file, table[:n], res.pdiag[:n], inn[:n])
    last = res.states[n - 1]
    print(f"fused {res.counters['imu_samples']} IMU samples ({cfg.form} form"
          f"{', INS only' if ins_only else ''}); wrote {n} rows to {out_file}")
    print("final t={:.3f} p=[{:.3f}, {:.3f}, {:.3f}] v=[{:.4f}, {:.4f}, {:.4f}]".format(
        res.t[n - 1], *last[7:10], *last[4:7]))
    print("final b_w=[{:.3e}, {:.3e}, {:.3e}] b_f=[{:.3e}, {:.3e}, {:.3e}]".format(
        *last[10:13], *last[13:16]))
    print("health: " + ", ".join(f"{k}={v}" for k, v in res.counters.items()))
    raise_for_result(res)
    return EXIT_OK


def cmd_analyze(nav_file, truth_file, out_report, max_lag=50) -> int:
    nav = read_nav_csv(nav_file)
    truth = read_truth_array(truth_file) if truth_file else None
    try:
        rep = analyze(nav, truth, max_lag)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_DATA
    text = json.dumps(rep.to_dict(), indent=1, sort_keys=True)
    try:
        Path(out_report).write_text(text + "\n")
    except OSError as exc:
        _err(f"cannot write {out_report}: {exc.strerror or exc}")
        return EXIT_DATA
    print(f"{rep.n_fixes} innovations, mean NIS "
          f"{'n/a' if rep.nis_mean is None else format(rep.nis_mean, '.3f')}"
          + ("" if rep.nees_mean is None else f", mean NEES (diagonal) {rep.nees_mean:.3f}"))
    print(f"wrote {out_report}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tridentnav", description="Trident-quaternion INS/GPS toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate truth, IMU and GPS logs from a profile")
    s.add_argument("spec", help="profile file (key = value)")
    s.add_argument("out_dir", help="directory for truth.csv, imu.csv, gps.csv")
    s.add_argument("--seed", type=int, default=None, help="override the profile seed")

    f = sub.add_parser("fuse", help="run the EKF over IMU and GPS logs")
    f.add_argument("imu", help="IMU log")
    f.add_argument("gps", help="GPS log")
    f.add_argument("out", help="navigation output CSV")
    f.add_argument("--config", default=None, help="run configuration (key = value)")
    f.add_argument("--form", choices=("classical", "trident"), default=None,
                   help="mechanization form (default: config, else trident)")
    f.add_argument("--ins-only", action="store_true", help="skip GPS updates")

    a = sub.add_parser("analyze", help="innovation and consistency diagnostics")
    a.add_argument("nav", help="navigation output CSV")
    a.add_argument("out", help="report file (JSON)")
    a.add_argument("--truth", default=None, help="truth CSV written by simulate")
    a.add_argument("--max-lag", type=int, default=50)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args.spec, args.out_dir, args.seed)
        if args.command == "fuse":
            return cmd_fuse(args.imu, args.gps, args.config, args.out, args.form, args.ins_only)
        if args.max_lag < 1:
            _err("--max-lag must be at least 1")
            return EXIT_USAGE
        return cmd_analyze(args.nav, args.truth, args.out, args.max_lag)
    except (DivergenceError, NumericalHealthError) as exc:
        _err(str(exc))
        return EXIT_DIVERGED
    except TridentNavError as exc:
        _err(str(exc))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
