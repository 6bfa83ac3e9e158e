"""Windowed dynamic iteration (waveform relaxation) for a circuit/device pair.

Each window ``[T, T + Hw]`` is solved repeatedly: the circuit with the
device voltage waveform from the previous iterate as its field-port input,
and the device with the circuit port current as its source.  Gauss-Seidel
feeds the fresh waveform of the leading subsystem to the follower within the
same sweep; Jacobi uses the previous iterate for both.  Waveforms live on the
micro grid and are interpolated linearly.

The exchanged signals are the received inputs ``u1 = -s y2`` and
``u2 = s y1`` with coupling scale ``s``; sweep deltas are measured on them.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from .core import PhDaeSystem, Trajectory, energy_audit
from .errors import IntegrationError, WindowDivergenceError
from .integrators import SolverConfig, integrate
from .interconnect import PortSplit

MODES = ("jacobi", "gauss-seidel")


@dataclass(frozen=True)
class CosimConfig:
    window: float
    h: float
    t_end: float
    mode: str = "gauss-seidel"
    tol: float = 1e-8
    max_sweeps: int = 30
    scheme: str = "midpoint"
    leader: str = "circuit"
    parallel: bool = False
    coupling_scale: float = 1.0
    newton_tol: float = 1e-12

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.leader not in ("circuit", "device"):
            raise ValueError("leader must be 'circuit' or 'device'")
        if not (self.window > 0 and self.h > 0 and self.t_end > 0):
            raise ValueError("window, h and t_end must be positive")
        if self.h > self.window * (1 + 1e-12):
            raise ValueError("micro step h must not exceed the window length")
        if self.tol <= 0 or self.max_sweeps < 1:
            raise ValueError("tol and max_sweeps must be positive")
        _multiple(self.window, self.h, "window", "h")
        _multiple(self.t_end, self.window, "t_end", "window")

    @property
    def steps_per_window(self) -> int:
        return _multiple(self.window, self.h, "window", "h")

    @property
    def n_windows(self) -> int:
        return _multiple(self.t_end, self.window, "t_end", "window")


def _multiple(a, b, na, nb) -> int:
    k = int(round(a / b))
    if k < 1 or abs(k * b - a) > 1e-9 * a:
        raise ValueError(f"{na}={a} is not an integer multiple of {nb}={b}")
    return k


@dataclass
class SweepRecord:
    window: int
    sweep: int
    delta_y1: float
    delta_y2: float
    contraction: float
    audit_circuit: float = 0.0
    audit_device: float = 0.0


@dataclass
class CosimResult:
    circuit: Trajectory
    device: Trajectory
    records: List[SweepRecord]
    sweeps: List[int]
    config: CosimConfig

    @property
    def final_state(self) -> np.ndarray:
        return np.concatenate([self.circuit.final_state, self.device.final_state])

    def contraction_history(self, window: int) -> List[float]:
        return [r.contraction for r in self.records if r.window == window]

    def max_sweep_audit(self) -> float:
        return max((max(r.audit_circuit, r.audit_device) for r in self.records), default=0.0)

    def diagnostics_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["window", "sweep", "delta_y1", "delta_y2", "contraction"])
            for r in self.records:
                w.writerow([r.window, r.sweep, f"{r.delta_y1:.17g}", f"{r.delta_y2:.17g}", f"{r.contraction:.17g}"])


def _interp(times, values):
    """Componentwise piecewise linear interpolant of ``values`` (k x len(times))."""
    values = np.atleast_2d(values)

    def fn(t):
        return np.array([np.interp(t, times, row) for row in values])

    return fn


def _concat(trajs: List[Trajectory]) -> Trajectory:
    return Trajectory(
        times=np.concatenate([trajs[0].times[:1]] + [t.times[1:] for t in trajs]),
        states=np.hstack([trajs[0].states[:, :1]] + [t.states[:, 1:] for t in trajs]),
        outputs=np.hstack([trajs[0].outputs[:, :1]] + [t.outputs[:, 1:] for t in trajs]),
        efforts=np.hstack([t.efforts for t in trajs]),
        inputs=np.hstack([t.inputs for t in trajs]),
        scheme=trajs[0].scheme,
        newton_iterations=np.concatenate([t.newton_iterations for t in trajs]),
    )


class _Subsystem:
    """One block with its internal port columns and a frozen-input solver."""

    def __init__(self, sys: PhDaeSystem, cfg: SolverConfig, external: Optional[Callable]):
        self.sys = sys
        split = PortSplit.from_labels(sys)
        labels = sys.port_labels or ()
        self.internal = [i for i, lab in enumerate(labels) if lab.startswith("port:")]
        self.external = [i for i in range(sys.dim_input) if i not in self.internal]
        if split.n_internal == 0:
            raise ValueError("subsystem has no field ports (port:* labels)")
        self.cfg = cfg
        self.ext_fn = external

    def solve(self, x0, t0, steps, times, received):
        m = self.sys.dim_input
        wave = _interp(times, received)
        internal, external, ext_fn = self.internal, self.external, self.ext_fn

        def u(t):
            val = np.zeros(m)
            val[internal] = wave(t)
            if external and ext_fn is not None:
                val[external] = ext_fn(t)
            return val

        traj = integrate(self.sys, self.cfg, x0, u, t0=t0, n_steps=steps)
        return traj, traj.outputs[self.internal]


def run_cosim(
    circuit: PhDaeSystem,
    device: PhDaeSystem,
    cfg: CosimConfig,
    x0: Tuple[np.ndarray, np.ndarray],
    external: Optional[Callable[[float], np.ndarray]] = None,
) -> CosimResult:
    """Dynamic iteration over ``cfg.n_windows`` windows.

    ``external(t)`` returns the circuit's external source values in the order
    of its non-port input columns.
    """
    scfg = SolverConfig(h=cfg.h, t_end=cfg.window, scheme=cfg.scheme, newton_tol=cfg.newton_tol)
    circ = _Subsystem(circuit, scfg, external)
    dev = _Subsystem(device, scfg, None)
    if len(circ.internal) != len(dev.internal):
        raise ValueError(f"port mismatch: circuit {len(circ.internal)} vs device {len(dev.internal)}")
    s = cfg.coupling_scale
    steps = cfg.steps_per_window
    xc = np.asarray(x0[0], dtype=float)
    xd = np.asarray(x0[1], dtype=float)
    y1_now = circuit.output(circuit.effort_fn(xc))[circ.internal]
    y2_now = device.output(device.effort_fn(xd))[dev.internal]
    records: List[SweepRecord] = []
    sweeps: List[int] = []
    c_trajs, d_trajs = [], []
    pool = ThreadPoolExecutor(max_workers=2) if (cfg.parallel and cfg.mode == "jacobi") else None
    try:
        for w in range(cfg.n_windows):
            t0 = w * steps * cfg.h
            times = t0 + cfg.h * np.arange(steps + 1)
            # constant continuation of the exchanged signals as initial guess
            u1 = np.tile(-s * y2_now[:, None], steps + 1)
            u2 = np.tile(s * y1_now[:, None], steps + 1)
            prev_delta = math.nan
            contraction_hist = []
            converged = False
            for sweep in range(1, cfg.max_sweeps + 1):
                try:
                    if cfg.mode == "jacobi":
                        if pool is not None:
                            fc = pool.submit(circ.solve, xc, t0, steps, times, u1)
                            fd = pool.submit(dev.solve, xd, t0, steps, times, u2)
                            (tc, y1), (td, y2) = fc.result(), fd.result()
                        else:
                            tc, y1 = circ.solve(xc, t0, steps, times, u1)
                            td, y2 = dev.solve(xd, t0, steps, times, u2)
                        new_u1, new_u2 = -s * y2, s * y1
                    elif cfg.leader == "circuit":
                        tc, y1 = circ.solve(xc, t0, steps, times, u1)
                        new_u2 = s * y1
                        td, y2 = dev.solve(xd, t0, steps, times, new_u2)
                        new_u1 = -s * y2
                    else:
                        td, y2 = dev.solve(xd, t0, steps, times, u2)
                        new_u1 = -s * y2
                        tc, y1 = circ.solve(xc, t0, steps, times, new_u1)
                        new_u2 = s * y1
                except IntegrationError as exc:
                    raise IntegrationError(f"window {w}, sweep {sweep}: {exc}", time=exc.time) from exc
                d1 = float(np.max(np.abs(new_u2 - u2))) if u2.size else 0.0
                d2 = float(np.max(np.abs(new_u1 - u1))) if u1.size else 0.0
                delta = max(d1, d2)
                if cfg.mode == "gauss-seidel" and sweep == 1:
                    # the follower's input guess is never used in the first sweep
                    delta = d2 if cfg.leader == "circuit" else d1
                contraction = delta / prev_delta if prev_delta > 0 else math.nan
                contraction_hist.append(contraction)
                records.append(
                    SweepRecord(
                        w,
                        sweep,
                        d1,
                        d2,
                        contraction,
                        energy_audit(circuit, tc).max_step_residual,
                        energy_audit(device, td).max_step_residual,
                    )
                )
                prev_delta = delta
                u1, u2 = new_u1, new_u2
                if delta <= cfg.tol:
                    converged = True
                    break
            if not converged:
                raise WindowDivergenceError(
                    f"window {w}: no convergence within {cfg.max_sweeps} sweeps (last change {prev_delta:.3e})",
                    window=w,
                    contraction=contraction_hist,
                )
            sweeps.append(sweep)
            c_trajs.append(tc)
            d_trajs.append(td)
            xc, xd = tc.final_state, td.final_state
            y1_now, y2_now = y1[:, -1], y2[:, -1]
    finally:
        if pool is not None:
            pool.shutdown()
    return CosimResult(_concat(c_trajs), _concat(d_trajs), records, sweeps, cfg)
