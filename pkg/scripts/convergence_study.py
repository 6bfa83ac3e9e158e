"""Step-size study on the driven series RLC circuit against its closed-form solution.

Prints the maximum state error and the error ratio under halving for each scheme.
"""

import argparse

import numpy as np

from phdae import mna, netlist
from phdae.core import SCHEMES
from phdae.integrators import SolverConfig, consistent_init, integrate

R, L, C = 1.0, 1.0, 0.25


def exact(t):
    a = R / (2 * L)
    wd = np.sqrt(1 / (L * C) - a * a)
    cur = np.exp(-a * t) * np.sin(wd * t) / (L * wd)
    vc = 1 - np.exp(-a * t) * (np.cos(wd * t) + a / wd * np.sin(wd * t))
    return cur, vc


def max_error(scheme, n_steps, t_end):
    g = netlist.parse(f"V1 1 0 DC 1\nR1 1 2 {R}\nL1 2 3 {L}\nC1 3 0 {C}")
    sys = mna.assemble(g)
    u = mna.source_function(g)
    x0 = consistent_init(sys, np.zeros(sys.dim_state), u(0.0))
    traj = integrate(sys, SolverConfig(h=t_end / n_steps, t_end=t_end, scheme=scheme), x0, u)
    cur, vc = exact(traj.times)
    return max(np.max(np.abs(traj.states[1] / L - cur)), np.max(np.abs(traj.states[0] / C - vc)))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--T", type=float, default=10.0)
    ap.add_argument("--steps", type=int, nargs="+", default=[250, 500, 1000, 2000, 4000])
    args = ap.parse_args()
    print(f"{'scheme':<20}{'steps':>8}{'h':>12}{'max error':>14}{'ratio':>9}")
    for scheme in SCHEMES:
        prev = None
        for n in args.steps:
            err = max_error(scheme, n, args.T)
            ratio = f"{prev / err:9.3f}" if prev else " " * 9
            print(f"{scheme:<20}{n:>8}{args.T / n:>12.3e}{err:>14.3e}{ratio}")
            prev = err


if __name__ == "__main__":
    main()
