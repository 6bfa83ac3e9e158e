"""Gauss-Seidel vs Jacobi dynamic iteration on the shipped RL + single-cell device benchmark.

Reports sweep counts, runtime and the deviation from the monolithic coupled run
for a range of window lengths.
"""

import argparse
import pathlib
import time

import numpy as np

from phdae import coupler, fit, mna, netlist
from phdae.cosim import CosimConfig, run_cosim
from phdae.integrators import SolverConfig, consistent_init, integrate

BENCH = pathlib.Path(__file__).resolve().parents[1] / "benchmarks"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--h", type=float, default=1e-3)
    ap.add_argument("--T", type=float, default=1.0)
    ap.add_argument("--windows", type=float, nargs="+", default=[5e-3, 1e-2, 2e-2, 5e-2])
    ap.add_argument("--tol", type=float, default=1e-8)
    args = ap.parse_args()

    g = netlist.parse_file(BENCH / "toy_rl.net")
    dev = fit.load_device(BENCH / "toy_device.dev")
    cpl = coupler.couple(coupler.extend_circuit(g), dev)
    con = cpl.condensed
    u = mna.source_function(g)
    x0 = consistent_init(con, np.zeros(con.dim_state), u(0.0))
    ref = integrate(con, SolverConfig(h=args.h, t_end=args.T, scheme="midpoint"), x0, u)

    print(f"{'mode':<14}{'window':>10}{'max sweeps':>12}{'total':>8}{'deviation':>12}{'time [s]':>10}")
    for window in args.windows:
        for mode in ("gauss-seidel", "jacobi"):
            cfg = CosimConfig(window=window, h=args.h, t_end=args.T, mode=mode, tol=args.tol)
            start = time.perf_counter()
            res = run_cosim(cpl.circuit, cpl.device, cfg, cpl.split_state(x0), u)
            elapsed = time.perf_counter() - start
            dev_err = float(np.max(np.abs(res.final_state - ref.final_state)))
            print(f"{mode:<14}{window:>10.0e}{max(res.sweeps):>12}{sum(res.sweeps):>8}{dev_err:>12.2e}{elapsed:>10.2f}")


if __name__ == "__main__":
    main()
