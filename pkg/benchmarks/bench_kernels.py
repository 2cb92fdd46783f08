"""Time the training kernels with numba against the pure-Python fallback.

Usage: python3 benchmarks/bench_kernels.py [--rounds 1000] [--repeat 3]

The fallback runs in a child process with FEDSIM_DISABLE_NUMBA=1 so that no
compiled helper leaks into it. Both modes must produce identical trajectories.
"""

import argparse
import hashlib
import json
import os
import subprocess
import sys
import time

import numpy as np


def measure(rounds, repeat):
    from fedsim import kernels, preset
    from fedsim._accel import NUMBA_ENABLED
    from fedsim.sampling import noise_schedule, order_schedule

    spec = preset("group4")
    K, eta = 10, 0.01
    orders = order_schedule(1234, spec.M, spec.M, rounds)
    noise = noise_schedule(1234, spec.M, rounds, K, spec.dim, 0.5)
    x0 = np.ones(spec.dim)
    out = {"numba": NUMBA_ENABLED}
    for name, fn in (("sfl", kernels.sfl_kernel), ("pfl", kernels.pfl_kernel)):
        args = (spec.A_stack, spec.b_stack, x0, orders, noise, K, eta, -1.0, kernels.CLIP_STEP, 1e12)
        traj = fn(*args)[0]  # warm-up (compiles under numba)
        best = min(_timed(fn, args) for _ in range(repeat))
        out[name] = {"seconds": best, "digest": hashlib.sha256(traj.tobytes()).hexdigest()[:16]}
    return out


def _timed(fn, args):
    t = time.perf_counter()
    fn(*args)
    return time.perf_counter() - t


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rounds", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(measure(args.rounds, args.repeat)))
        return 0

    fast = measure(args.rounds, args.repeat)
    env = dict(os.environ, FEDSIM_DISABLE_NUMBA="1")
    child = subprocess.run([sys.executable, __file__, "--child", "--rounds", str(args.rounds),
                            "--repeat", str(args.repeat)], env=env, check=True,
                           capture_output=True, text=True)
    slow = json.loads(child.stdout)
    print(f"rounds={args.rounds} (group4, M=2, K=10, sigma=0.5)")
    print(f"{'kernel':8}{'numba s':>12}{'python s':>12}{'speedup':>10}  identical")
    for k in ("sfl", "pfl"):
        a, b = fast[k]["seconds"], slow[k]["seconds"]
        same = fast[k]["digest"] == slow[k]["digest"]
        print(f"{k:8}{a:>12.5f}{b:>12.5f}{b / a:>10.1f}  {same}")
    if not fast["numba"]:
        print("note: numba unavailable here, both columns ran the fallback")
    return 0


if __name__ == "__main__":
    sys.exit(main())
