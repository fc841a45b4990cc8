"""Compiled kernels against the pure-numpy fallback.

Each backend runs in its own interpreter because the backend is chosen at
import time::

    python3 benchmarks/bench_jit.py --seconds 20
"""
import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
import numpy as np
from tridentnav import _jit
from tridentnav.algebra import Quaternion
from tridentnav.ekf import GpsFix, init_filter, run_filter
from tridentnav.error_model import NoiseParams
from tridentnav.mechanization import NavState, propagate_arrays
from tridentnav.simulator import ProfileSpec, Segment, SimulationSpec, simulate

seconds = float(sys.argv[1])
segs = [Segment("hover", 10.0), Segment("constant-accel", 5.0, accel=2.0),
        Segment("coordinated-turn", max(seconds - 15.0, 1.0), rate=0.2)]
out = simulate(SimulationSpec(ProfileSpec(segs, seed=1)))
fixes = [GpsFix(r[0], r[1:4], r[4:7]) for r in out.gps]
tr = out.truth
st0 = NavState(Quaternion.from_array(tr.q_be[0]), tr.v_e[0], tr.p_e[0])
fs0 = init_filter(fixes, out.imu)

def timed(fn):
    fn(10)  # warm up (compiles or loads the cache)
    t0 = time.perf_counter()
    fn(None)
    return time.perf_counter() - t0

res = {"jit": _jit.JIT_ENABLED, "samples": int(out.imu.shape[0])}
for form in ("classical", "trident"):
    res["ins_" + form] = timed(lambda n: propagate_arrays(st0, out.imu[:n], form))
res["ekf_trident"] = timed(lambda n: run_filter(fs0, out.imu[:n] if n else out.imu, fixes, NoiseParams()))
print(json.dumps(res))
"""


def run(disable, seconds):
    env = dict(os.environ)
    env.pop("TRIDENTNAV_DISABLE_JIT", None)
    if disable:
        env["TRIDENTNAV_DISABLE_JIT"] = "1"
    r = subprocess.run([sys.executable, "-c", WORKER, str(seconds)], env=env,
                       capture_output=True, text=True, check=True)
    return json.loads(r.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seconds", type=float, default=20.0, help="flight length to process")
    args = ap.parse_args(argv)
    t0 = time.perf_counter()
    jit = run(False, args.seconds)
    py = run(True, args.seconds)
    n = jit["samples"]
    print(f"{n} IMU samples ({args.seconds:g} s at 200 Hz)")
    print(f"{'workload':<16}{'numba (s)':>12}{'numpy (s)':>12}{'speedup':>10}{'us/sample jit':>16}")
    for key in ("ins_classical", "ins_trident", "ekf_trident"):
        a, b = jit[key], py[key]
        print(f"{key:<16}{a:>12.4f}{b:>12.4f}{b / a:>9.0f}x{1e6 * a / n:>16.2f}")
    print(f"total wall time {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
