"""Time one-atom integrations with the compiled and pure-Python backends.

Usage::

    python benchmarks/bench_kernel.py [--repeats N] [--currents 0.02,0.1,0.5]

Prints wall time per atom for each backend, the speed-up, and the largest
difference in final polar angle between the two backends.
"""
import argparse
import time

import numpy as np

from cqdsim.core import FRISCH_SEGRE, MomentState
from cqdsim.dynamics import AVAILABLE_BACKENDS, integrate_atom


def time_backend(backend, current, init, repeats):
    best, theta = np.inf, None
    for _ in range(repeats):
        start = time.perf_counter()
        tr = integrate_atom(init, current, FRISCH_SEGRE, backend=backend)
        best = min(best, time.perf_counter() - start)
        theta = tr.theta_e_final
    return best, theta


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--currents", default="0.02,0.1,0.5")
    args = p.parse_args(argv)
    currents = [float(c) for c in args.currents.split(",")]
    init = MomentState.from_angles(np.pi, 0.0, 5 * np.pi / 8, 11 * np.pi / 10)
    if "compiled" not in AVAILABLE_BACKENDS:
        print("compiled extension not built; only the Python backend is available")
    print(f"{'current_A':>10} " + " ".join(f"{b + '_s':>12}" for b in AVAILABLE_BACKENDS) + f" {'speedup':>8} {'max_dtheta':>11}")
    for c in currents:
        res = {b: time_backend(b, c, init, args.repeats) for b in AVAILABLE_BACKENDS}
        times = " ".join(f"{res[b][0]:12.4f}" for b in AVAILABLE_BACKENDS)
        if len(res) == 2:
            speed = res["python"][0] / res["compiled"][0]
            dtheta = abs(res["python"][1] - res["compiled"][1])
            print(f"{c:10.4g} {times} {speed:8.1f} {dtheta:11.2e}")
        else:
            print(f"{c:10.4g} {times}")


if __name__ == "__main__":
    main()
