"""Command-line interface.

Commands::

    phdae check <netlist>
    phdae run <netlist> [--scheme S --h H --T T]
    phdae couple <netlist> <device>
    phdae cosim <netlist> <device> [--mode jacobi|gauss-seidel --window Hw]
    phdae demo-splitting

Common flags: ``--out DIR --seed N --reference FILE --config FILE``.  The
config file holds flat ``key = value`` lines using the long flag names
(``scheme``, ``h``, ``T``, ``mode``, ``window``, ``tol``, ``max_sweeps``,
``out``, ``seed``, ``reference``, ``samples``); flags override it.

Exit codes: 0 ok, 2 input error, 3 solver failure, 4 audit failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import coupler, cosim, fit, mna, netlist
from .core import EnergyLedger, Trajectory, energy_audit, validate_structure
from .errors import (
    InitializationError,
    IntegrationError,
    ModelError,
    ParseError,
    PreconditionError,
    StructureError,
    WindowDivergenceError,
)
from .integrators import SolverConfig, consistent_init, integrate, lie_trotter_demo

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_AUDIT = 0, 2, 3, 4

DEFAULTS = {
    "scheme": "midpoint",
    "h": 1e-3,
    "T": 1.0,
    "mode": "gauss-seidel",
    "window": None,
    "tol": 1e-8,
    "max_sweeps": 30,
    "out": "out",
    "seed": 0,
    "reference": None,
    "samples": 100,
}
_TYPES = {"h": float, "T": float, "window": float, "tol": float, "max_sweeps": int, "seed": int, "samples": int}


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    analysis: str
    netlist: Optional[str] = None
    device: Optional[str] = None
    scheme: str = "midpoint"
    h: float = 1e-3
    T: float = 1.0
    mode: str = "gauss-seidel"
    window: Optional[float] = None
    tol: float = 1e-8
    max_sweeps: int = 30
    out: str = "out"
    seed: int = 0
    reference: Optional[str] = None
    samples: int = 100

    def __post_init__(self):
        for path in (self.netlist, self.device, self.reference):
            if path is not None and not os.path.isfile(path):
                raise InputError(f"file not found: {path}")
        if self.analysis in ("couple", "cosim") and self.device is None:
            raise InputError(f"{self.analysis} needs a device file")


def read_config(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key = key.strip()
            if not sep or key not in DEFAULTS:
                raise InputError(f"{path}: line {lineno}: unknown or malformed entry {raw.strip()!r}")
            val = val.strip()
            try:
                out[key] = _TYPES.get(key, str)(val)
            except ValueError:
                raise InputError(f"{path}: line {lineno}: bad value for {key}: {val!r}") from None
    return out


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, help="seed for randomized validators (default: 0)")
    common.add_argument("--reference", help="trajectory CSV to compare the final state against")
    common.add_argument("--config", help="flat key = value config file; flags override it")
    common.add_argument("--samples", type=int, help="sample count for randomized checks")
    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--scheme", choices=["implicit-euler", "midpoint", "discrete-gradient"])
    solver.add_argument("--h", type=float, help="step size")
    solver.add_argument("--T", type=float, help="end time")

    p = argparse.ArgumentParser(prog="phdae", description="Port-Hamiltonian DAE circuit and field simulation")
    sub = p.add_subparsers(dest="analysis", required=True)
    c = sub.add_parser("check", parents=[common], help="topology, index and passivity report")
    c.add_argument("netlist")
    r = sub.add_parser("run", parents=[common, solver], help="monolithic circuit simulation")
    r.add_argument("netlist")
    c = sub.add_parser("couple", parents=[common, solver], help="monolithic field/circuit simulation")
    c.add_argument("netlist")
    c.add_argument("device")
    c = sub.add_parser("cosim", parents=[common, solver], help="dynamic-iteration co-simulation")
    c.add_argument("netlist")
    c.add_argument("device")
    c.add_argument("--mode", choices=list(cosim.MODES))
    c.add_argument("--window", type=float, help="window length (default 10 h)")
    c.add_argument("--tol", type=float)
    c.add_argument("--max-sweeps", dest="max_sweeps", type=int)
    sub.add_parser("demo-splitting", parents=[common], help="Lie-Trotter splitting counterexample")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    vals = dict(DEFAULTS)
    if getattr(args, "config", None):
        if not os.path.isfile(args.config):
            raise InputError(f"file not found: {args.config}")
        vals.update(read_config(args.config))
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            vals[key] = v
    return RunConfig(
        analysis=args.analysis,
        netlist=getattr(args, "netlist", None),
        device=getattr(args, "device", None),
        **vals,
    )


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------


def cmd_check(cfg: RunConfig, out) -> int:
    g = netlist.parse_file(cfg.netlist)
    rep = netlist.analyze(g)
    lines = [f"netlist: {cfg.netlist}", f"nodes: {g.node_count}, branches: {len(g.branches)}"] + rep.lines()
    passive = True
    if rep.sound:
        models = mna.models_from_graph(g)
        prep = mna.verify_passivity(models, samples=cfg.samples, seed=cfg.seed)
        passive = prep.ok
        lines += prep.lines()
        sys_ = coupler.extend_circuit(g, models) if g.of_kind("E") else mna.assemble(g, models)
        lines += validate_structure(sys_, samples=cfg.samples, seed=cfg.seed).lines()
    lines.append("status: " + ("ok" if rep.sound and passive else "FAILED"))
    print("\n".join(lines), file=out)
    if not rep.sound:
        return EXIT_INPUT
    return EXIT_OK if passive else EXIT_AUDIT


def _solver_cfg(cfg: RunConfig) -> SolverConfig:
    try:
        scfg = SolverConfig(h=cfg.h, t_end=cfg.T, scheme=cfg.scheme)
        scfg.n_steps
        return scfg
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _write_outputs(cfg: RunConfig, traj: Trajectory, ledger: EnergyLedger, summary: List[str]) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    traj.to_csv(os.path.join(cfg.out, "trajectory.csv"))
    ledger.to_csv(os.path.join(cfg.out, "ledger.csv"))
    h0 = ledger.hamiltonian_samples[0]
    tol = 1e-8 * (1.0 + abs(h0))
    ok = ledger.dissipation_inequality_holds(tol)
    summary = list(summary) + [
        f"initial H: {h0:.17g}",
        f"final H: {ledger.hamiltonian_samples[-1]:.17g}",
        f"max balance residual per step: {ledger.max_step_residual:.6e}",
        f"dissipated: {ledger.dissipated[-1]:.17g}",
        f"supplied: {ledger.supplied[-1]:.17g}",
    ]
    if traj.newton_iterations.size:
        summary.append(
            f"newton iterations: total {int(traj.newton_iterations.sum())}, max per step {int(traj.newton_iterations.max())}"
        )
    if cfg.reference:
        ref = np.loadtxt(cfg.reference, delimiter=",", skiprows=1, ndmin=2)
        n = traj.states.shape[0]
        if ref.shape[1] < 1 + n:
            raise InputError(f"reference {cfg.reference} has {ref.shape[1] - 1} data columns, need {n} states")
        if abs(ref[-1, 0] - traj.times[-1]) > 1e-9 * max(1.0, abs(traj.times[-1])):
            raise InputError(f"reference ends at t={ref[-1, 0]}, run ends at t={traj.times[-1]}")
        dev = float(np.max(np.abs(ref[-1, 1 : 1 + n] - traj.final_state)))
        summary.append(f"final deviation vs reference: {dev:.6e}")
    summary.append(f"audit (dissipation inequality, tol {tol:.1e}): " + ("pass" if ok else "FAILED-AUDIT"))
    with open(os.path.join(cfg.out, "summary.txt"), "w") as fh:
        fh.write("\n".join(summary) + "\n")
    return EXIT_OK if ok else EXIT_AUDIT


def _initial_state(sys_, u):
    x = np.zeros(sys_.dim_state)
    return consistent_init(sys_, x, None if u is None else u(0.0))


def cmd_run(cfg: RunConfig, out) -> int:
    g = netlist.parse_file(cfg.netlist)
    if g.of_kind("E"):
        raise InputError("netlist has field-port (E) branches; use the couple or cosim command")
    sys_ = mna.assemble(g)
    scfg = _solver_cfg(cfg)
    u = mna.source_function(g)
    traj = integrate(sys_, scfg, _initial_state(sys_, u), u)
    ledger = energy_audit(sys_, traj)
    summary = ["analysis: run", f"netlist: {cfg.netlist}", f"scheme: {cfg.scheme}, h: {cfg.h!r}, T: {cfg.T!r}"]
    summary.append("states: " + ",".join(sys_.state_labels))
    code = _write_outputs(cfg, traj, ledger, summary)
    print(open(os.path.join(cfg.out, "summary.txt")).read(), end="", file=out)
    return code


def _load_pair(cfg: RunConfig):
    g = netlist.parse_file(cfg.netlist)
    spec = fit.parse_device(open(cfg.device).read())
    ids = {b.device for b in g.of_kind("E")}
    if not ids:
        raise InputError("netlist has no E-branch to attach the device to")
    if ids != {spec.name}:
        raise InputError(f"netlist references device(s) {sorted(ids)}, device file defines {spec.name!r}")
    device = spec.build()
    circuit = coupler.extend_circuit(g)
    return g, circuit, device


def cmd_couple(cfg: RunConfig, out) -> int:
    g, circuit, device = _load_pair(cfg)
    fc = coupler.couple(circuit, device)
    sys_ = fc.condensed
    scfg = _solver_cfg(cfg)
    u = mna.source_function(g)
    traj = integrate(sys_, scfg, _initial_state(sys_, u), u)
    ledger = energy_audit(sys_, traj)
    worst = 0.0
    for k in range(traj.times.size):
        a, b = fc.port_powers(traj.states[:, k])
        worst = max(worst, float(np.max(np.abs(a + b))))
    summary = [
        "analysis: couple",
        f"netlist: {cfg.netlist}",
        f"device: {cfg.device} ({device.n_h} magnetic, {device.n_e} electric unknowns, {device.n_ports} ports)",
        f"scheme: {cfg.scheme}, h: {cfg.h!r}, T: {cfg.T!r}",
        "states: " + ",".join(sys_.state_labels),
        f"max port power mismatch: {worst:.6e}",
    ]
    code = _write_outputs(cfg, traj, ledger, summary)
    print(open(os.path.join(cfg.out, "summary.txt")).read(), end="", file=out)
    return code


def cmd_cosim(cfg: RunConfig, out) -> int:
    g, circuit, device = _load_pair(cfg)
    fc = coupler.couple(circuit, device)
    sys_ = fc.condensed
    u = mna.source_function(g)
    x0 = _initial_state(sys_, u)
    window = cfg.window if cfg.window is not None else 10 * cfg.h
    try:
        ccfg = cosim.CosimConfig(
            window=window,
            h=cfg.h,
            t_end=cfg.T,
            mode=cfg.mode,
            tol=cfg.tol,
            max_sweeps=cfg.max_sweeps,
            scheme=cfg.scheme,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None
    res = cosim.run_cosim(circuit, device.system, ccfg, fc.split_state(x0), u)
    ct, dt = res.circuit, res.device
    ext = fc.circuit_split.n_external
    ext_idx = [i for i, lab in enumerate(circuit.port_labels) if not lab.startswith("port:")]
    traj = Trajectory(
        times=ct.times,
        states=np.vstack([ct.states, dt.states]),
        outputs=ct.outputs[ext_idx] if ext else np.zeros((0, ct.times.size)),
        efforts=np.vstack([ct.efforts, dt.efforts]),
        inputs=ct.inputs[ext_idx] if ext else np.zeros((0, ct.steps)),
        scheme=ct.scheme,
        newton_iterations=ct.newton_iterations + dt.newton_iterations,
    )
    ledger = energy_audit(sys_, traj)
    os.makedirs(cfg.out, exist_ok=True)
    res.diagnostics_csv(os.path.join(cfg.out, "diagnostics.csv"))
    summary = [
        "analysis: cosim",
        f"netlist: {cfg.netlist}",
        f"device: {cfg.device}",
        f"mode: {cfg.mode}, leader: {ccfg.leader}, window: {window!r}, h: {cfg.h!r}, T: {cfg.T!r}, tol: {cfg.tol!r}",
        f"windows: {len(res.sweeps)}, sweeps per window: min {min(res.sweeps)}, max {max(res.sweeps)}, total {sum(res.sweeps)}",
        "sweeps: " + " ".join(str(s) for s in res.sweeps),
        f"max per-sweep subsystem balance residual: {res.max_sweep_audit():.6e}",
    ]
    code = _write_outputs(cfg, traj, ledger, summary)
    print(open(os.path.join(cfg.out, "summary.txt")).read(), end="", file=out)
    return code


SPLIT_E = np.diag([1.0, 0.0, 1.0])
SPLIT_J = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
SPLIT_R = np.diag([0.0, 1.0, 1.0])
SPLIT_X0 = np.array([1.0, -1.0, 0.0])


def cmd_demo_splitting(cfg: RunConfig, out) -> int:
    rep = lie_trotter_demo(SPLIT_E, SPLIT_J, SPLIT_R, SPLIT_X0, h=cfg.h, seed=cfg.seed)
    text = "\n".join(rep.lines()) + "\n"
    print(text, end="", file=out)
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        with open(os.path.join(cfg.out, "summary.txt"), "w") as fh:
            fh.write(text)
    return EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "run": cmd_run,
    "couple": cmd_couple,
    "cosim": cmd_cosim,
    "demo-splitting": cmd_demo_splitting,
}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = _build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[cfg.analysis](cfg, out)
    except (InputError, ParseError, ModelError, StructureError, PreconditionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (IntegrationError, InitializationError, WindowDivergenceError) as exc:
        at = f" (t = {exc.time:.6g})" if getattr(exc, "time", None) is not None else ""
        print(f"solver failure{at}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
