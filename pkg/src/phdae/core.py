"""Port-Hamiltonian DAE representation, structural checks and energy audit.

A system is

    d/dt (E x) = J z(x) - r(z(x)) + B u,     y = B^T z(x),

with a Hamiltonian ``H`` such that ``grad H(x) = E^T z(x)`` whenever ``z(x)``
lies in the admissible subspace ``V``.  ``V`` is carried explicitly as a basis
matrix so that skew-symmetry and accretivity can be checked numerically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import EvaluationError, StructureError

SCHEMES = ("implicit-euler", "midpoint", "discrete-gradient")
SAMPLE_SCALES = (1.0, 1e-3, 1e3)

Vector = np.ndarray
Matrix = np.ndarray


def _frozen(a, ndim, name):
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise StructureError(f"{name}: expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PhDaeSystem:
    """Immutable PH-DAE ``(E, J, r, z, B)`` with Hamiltonian and subspace.

    Only the first seven fields are required.  The optional callables let
    front-ends hand the integrators exact Jacobians (``effort_jac_fn``,
    ``resistive_jac_fn``), a tailored discrete gradient
    (``discrete_effort_fn(x, x_new)``) and a sampler of states whose effort
    lies in ``V`` (``state_sampler(rng, scale)``), which the compatibility
    check needs when ``V`` is a proper subspace and ``z`` is nonlinear.
    """

    e_matrix: Matrix
    j_matrix: Matrix
    b_matrix: Matrix
    effort_fn: Callable[[Vector], Vector]
    resistive_fn: Callable[[Vector], Vector]
    hamiltonian_fn: Callable[[Vector], float]
    hamiltonian_grad_fn: Callable[[Vector], Vector]
    subspace_basis: Optional[Matrix] = None
    linear_effort: Optional[Matrix] = None
    linear_resistive: Optional[Matrix] = None
    effort_jac_fn: Optional[Callable[[Vector], Matrix]] = None
    resistive_jac_fn: Optional[Callable[[Vector], Matrix]] = None
    discrete_effort_fn: Optional[Callable[[Vector, Vector], Vector]] = None
    discrete_effort_jac_fn: Optional[Callable[[Vector, Vector], Matrix]] = None
    state_sampler: Optional[Callable[[np.random.Generator, float], Vector]] = None
    state_labels: Optional[tuple] = None
    port_labels: Optional[tuple] = None

    def __post_init__(self):
        e = _frozen(self.e_matrix, 2, "e_matrix")
        n = e.shape[0]
        if n < 1 or e.shape != (n, n):
            raise StructureError(f"e_matrix: must be square and non-empty, got {e.shape}")
        j = _frozen(self.j_matrix, 2, "j_matrix")
        if j.shape != (n, n):
            raise StructureError(f"j_matrix: expected {(n, n)}, got {j.shape}")
        b = np.array(self.b_matrix, dtype=float)
        if b.ndim == 1 and b.size == 0:
            b = np.zeros((n, 0))
        b = _frozen(b, 2, "b_matrix")
        if b.shape[0] != n:
            raise StructureError(f"b_matrix: expected {n} rows, got {b.shape[0]}")
        basis = np.eye(n) if self.subspace_basis is None else self.subspace_basis
        basis = _frozen(basis, 2, "subspace_basis")
        if basis.shape[0] != n or basis.shape[1] > n:
            raise StructureError(f"subspace_basis: expected {n} rows and at most {n} columns, got {basis.shape}")
        object.__setattr__(self, "e_matrix", e)
        object.__setattr__(self, "j_matrix", j)
        object.__setattr__(self, "b_matrix", b)
        object.__setattr__(self, "subspace_basis", basis)
        for name in ("linear_effort", "linear_resistive"):
            mat = getattr(self, name)
            if mat is not None:
                mat = _frozen(mat, 2, name)
                if mat.shape != (n, n):
                    raise StructureError(f"{name}: expected {(n, n)}, got {mat.shape}")
                object.__setattr__(self, name, mat)
        if self.state_labels is not None and len(self.state_labels) != n:
            raise StructureError(f"state_labels: expected {n} labels, got {len(self.state_labels)}")
        if self.port_labels is not None and len(self.port_labels) != b.shape[1]:
            raise StructureError(f"port_labels: expected {b.shape[1]} labels, got {len(self.port_labels)}")

    @property
    def dim_state(self) -> int:
        return self.e_matrix.shape[0]

    @property
    def dim_input(self) -> int:
        return self.b_matrix.shape[1]

    @property
    def is_linear(self) -> bool:
        return self.linear_effort is not None and self.linear_resistive is not None

    @property
    def differential_mask(self) -> np.ndarray:
        """Boolean mask of state coordinates with a nonzero column in ``E``."""
        return np.any(self.e_matrix != 0.0, axis=0)

    def output(self, z: Vector) -> Vector:
        return self.b_matrix.T @ z

    def effort_jacobian(self, x: Vector, step: float = 1e-7) -> Matrix:
        if self.linear_effort is not None:
            return np.array(self.linear_effort)
        if self.effort_jac_fn is not None:
            return self.effort_jac_fn(x)
        return central_jacobian(self.effort_fn, x, step)

    def resistive_jacobian(self, z: Vector, step: float = 1e-7) -> Matrix:
        if self.linear_resistive is not None:
            return np.array(self.linear_resistive)
        if self.resistive_jac_fn is not None:
            return self.resistive_jac_fn(z)
        return central_jacobian(self.resistive_fn, z, step)

    @classmethod
    def linear(cls, e, j, r, q, b, subspace_basis=None, **kwargs) -> "PhDaeSystem":
        """Quasilinear system with ``z = Q x``, ``r = R z``, ``H = x^T E^T Q x / 2``."""
        e = np.asarray(e, dtype=float)
        q = np.asarray(q, dtype=float)
        r = np.asarray(r, dtype=float)
        eq = e.T @ q
        return cls(
            e_matrix=e,
            j_matrix=j,
            b_matrix=b,
            effort_fn=lambda x: q @ x,
            resistive_fn=lambda z: r @ z,
            hamiltonian_fn=lambda x: 0.5 * float(x @ (eq @ x)),
            hamiltonian_grad_fn=lambda x: eq @ x,
            subspace_basis=subspace_basis,
            linear_effort=q,
            linear_resistive=r,
            **kwargs,
        )


def central_jacobian(fn, x, step=1e-7):
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fn(x))
    jac = np.empty((f0.size, x.size))
    for i in range(x.size):
        dx = np.zeros_like(x)
        dx[i] = step * max(1.0, abs(x[i]))
        jac[:, i] = (np.asarray(fn(x + dx)) - np.asarray(fn(x - dx))) / (2 * dx[i])
    return jac


# ----------------------------------------------------------------------------
# structural validation
# ----------------------------------------------------------------------------


@dataclass
class StructureReport:
    skew_violation: float
    accretivity_min: float
    accretivity_witness: Vector
    compatibility_violation: float
    compatibility_witness: Optional[Vector]
    tol: float
    accretivity_raw_min: float = 0.0

    @property
    def skew_ok(self) -> bool:
        return self.skew_violation <= self.tol

    @property
    def accretive_ok(self) -> bool:
        return self.accretivity_min >= -self.tol

    @property
    def compatibility_ok(self) -> bool:
        return self.compatibility_violation <= self.tol

    @property
    def ok(self) -> bool:
        return self.skew_ok and self.accretive_ok and self.compatibility_ok

    def lines(self):
        flag = {True: "pass", False: "FAIL"}
        return [
            f"skew-symmetry on V: {flag[self.skew_ok]} (max violation {self.skew_violation:.3e})",
            f"accretivity on V: {flag[self.accretive_ok]} (min v.r(v)/|v|^2 {self.accretivity_min:.3e})",
            f"compatibility grad H = E^T z: {flag[self.compatibility_ok]} (max violation {self.compatibility_violation:.3e})",
        ]


def _check_dims(sys: PhDaeSystem, x: Vector):
    n = sys.dim_state
    z = np.asarray(sys.effort_fn(x))
    if z.shape != (n,):
        raise StructureError(f"effort_fn: returned shape {z.shape}, expected {(n,)}")
    r = np.asarray(sys.resistive_fn(z))
    if r.shape != (n,):
        raise StructureError(f"resistive_fn: returned shape {r.shape}, expected {(n,)}")
    g = np.asarray(sys.hamiltonian_grad_fn(x))
    if g.shape != (n,):
        raise StructureError(f"hamiltonian_grad_fn: returned shape {g.shape}, expected {(n,)}")
    if np.ndim(sys.hamiltonian_fn(x)) != 0:
        raise StructureError("hamiltonian_fn: must return a scalar")


def _consistent_space(sys: PhDaeSystem) -> Optional[Matrix]:
    """Basis of ``{x : Q x in V}`` for quasilinear systems."""
    from scipy.linalg import null_space, orth

    if sys.linear_effort is None:
        return None
    v = orth(sys.subspace_basis)
    proj = np.eye(sys.dim_state) - v @ v.T
    return null_space(proj @ sys.linear_effort)


def sample_consistent_states(sys: PhDaeSystem, rng, count, scale):
    """States ``x`` with ``z(x)`` in ``V`` (sampler, quasilinear null space or ``V = R^n``)."""
    n = sys.dim_state
    if sys.state_sampler is not None:
        return [np.asarray(sys.state_sampler(rng, scale), dtype=float) for _ in range(count)]
    basis = _consistent_space(sys)
    if basis is None:
        if sys.subspace_basis.shape[1] < n or np.linalg.matrix_rank(sys.subspace_basis) < n:
            raise StructureError(
                "state_sampler: required for the compatibility check of a nonlinear effort on a proper subspace"
            )
        basis = np.eye(n)
    if basis.shape[1] == 0:
        return [np.zeros(n) for _ in range(count)]
    out = []
    for _ in range(count):
        c = rng.standard_normal(basis.shape[1])
        x = basis @ c
        nrm = np.linalg.norm(x)
        out.append(scale * x / nrm if nrm > 0 else x)
    return out


def validate_structure(sys: PhDaeSystem, samples: int = 100, tol: float = 1e-10, seed: int = 0) -> StructureReport:
    """Check skew-symmetry, accretivity and compatibility on ``V``.

    Skew-symmetry is tested on all pairs of basis columns.  Accretivity is
    sampled on the normalized basis columns and on ``samples`` random unit
    vectors of ``V`` per scale in ``{1, 1e-3, 1e3}``; the reported minimum is
    ``v.r(v) / |v|^2`` so that roundoff does not grow with the scale.
    Compatibility is sampled on states whose effort lies in ``V``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    n = sys.dim_state
    _check_dims(sys, np.zeros(n))

    basis = sys.subspace_basis
    gram = basis.T @ sys.j_matrix @ basis
    skew = float(np.max(np.abs(gram + gram.T))) if gram.size else 0.0

    candidates = []
    for col in basis.T:
        nrm = np.linalg.norm(col)
        if nrm > 0:
            candidates.append(col / nrm)
    for _ in range(samples):
        c = rng.standard_normal(basis.shape[1])
        v = basis @ c
        nrm = np.linalg.norm(v)
        if nrm > 0:
            candidates.append(v / nrm)
    acc_min, acc_raw, witness = np.inf, np.inf, np.zeros(n)
    for s in SAMPLE_SCALES:
        for w in candidates:
            v = s * w
            val = float(v @ np.asarray(sys.resistive_fn(v)))
            if not np.isfinite(val):
                raise EvaluationError("resistive_fn: non-finite value", point=v)
            acc_raw = min(acc_raw, val)
            if val / s**2 < acc_min:
                acc_min, witness = val / s**2, v
    if not candidates:
        acc_min = acc_raw = 0.0

    comp, comp_witness = 0.0, None
    for s in SAMPLE_SCALES:
        for x in sample_consistent_states(sys, rng, samples, s):
            z = np.asarray(sys.effort_fn(x))
            diff = np.max(np.abs(np.asarray(sys.hamiltonian_grad_fn(x)) - sys.e_matrix.T @ z))
            if not np.isfinite(diff):
                raise EvaluationError("non-finite gradient or effort", point=x)
            if diff > comp:
                comp, comp_witness = float(diff), x
    return StructureReport(skew, acc_min, witness, comp, comp_witness, tol, acc_raw)


def gradient_check(sys: PhDaeSystem, x: Vector, h: float = 1e-5) -> float:
    """Max relative deviation of ``grad H`` from central differences of ``H``."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)
    grad = np.asarray(sys.hamiltonian_grad_fn(x), dtype=float)
    err = 0.0
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        hp, hm = sys.hamiltonian_fn(x + step), sys.hamiltonian_fn(x - step)
        if not (np.isfinite(hp) and np.isfinite(hm)):
            bad = x + step if not np.isfinite(hp) else x - step
            raise EvaluationError(f"non-finite Hamiltonian at {bad}", point=bad)
        fd = (hp - hm) / (2 * h)
        err = max(err, abs(grad[i] - fd) / (1 + abs(grad[i])))
    return err


# ----------------------------------------------------------------------------
# scheme evaluation points
# ----------------------------------------------------------------------------


def gonzalez_gradient(sys: PhDaeSystem, x: Vector, x_new: Vector, mask=None) -> Vector:
    """Mean-value discrete gradient of ``H`` restricted to the ``mask`` coordinates."""
    if mask is None:
        mask = sys.differential_mask
    mid = 0.5 * (x + x_new)
    g = np.where(mask, np.asarray(sys.hamiltonian_grad_fn(mid), dtype=float), 0.0)
    d = np.where(mask, x_new - x, 0.0)
    dd = float(d @ d)
    if dd <= 1e-300:
        return g
    dh = sys.hamiltonian_fn(x_new) - sys.hamiltonian_fn(x)
    return g + (dh - float(g @ d)) / dd * d


def hybrid_point(sys: PhDaeSystem, x: Vector, x_new: Vector) -> Vector:
    """Midpoint on differential coordinates, ``x_new`` on algebraic ones."""
    return np.where(sys.differential_mask, 0.5 * (x + x_new), x_new)


def discrete_gradient_effort(sys: PhDaeSystem, x: Vector, x_new: Vector) -> Vector:
    """Effort ``zbar`` with ``E^T zbar`` equal to the discrete gradient of ``H``.

    Priority: a front-end supplied ``discrete_effort_fn``; ``Q @ hybrid`` for
    quasilinear systems (exact for quadratic ``H``); otherwise ``z(hybrid)``
    corrected on the row space of ``E^T`` by a least-squares shift.
    """
    if sys.discrete_effort_fn is not None:
        return np.asarray(sys.discrete_effort_fn(x, x_new), dtype=float)
    xt = hybrid_point(sys, x, x_new)
    if sys.linear_effort is not None:
        return sys.linear_effort @ xt
    z0 = np.asarray(sys.effort_fn(xt), dtype=float)
    g = gonzalez_gradient(sys, x, x_new)
    et = sys.e_matrix.T
    corr, *_ = np.linalg.lstsq(et, g - et @ z0, rcond=None)
    return z0 + corr


def discrete_effort_jacobian(sys: PhDaeSystem, x: Vector, x_new: Vector) -> Optional[Matrix]:
    """Derivative of :func:`discrete_gradient_effort` with respect to ``x_new``,
    or ``None`` when only finite differences are available."""
    if sys.discrete_effort_fn is not None:
        return None if sys.discrete_effort_jac_fn is None else sys.discrete_effort_jac_fn(x, x_new)
    if sys.linear_effort is not None:
        return sys.linear_effort * np.where(sys.differential_mask, 0.5, 1.0)[None, :]
    return None


def scheme_effort(sys: PhDaeSystem, scheme: str, x: Vector, x_new: Vector) -> Vector:
    """Effort at the scheme's evaluation point for the step ``x -> x_new``."""
    if scheme == "implicit-euler":
        return np.asarray(sys.effort_fn(x_new), dtype=float)
    if scheme == "midpoint":
        return np.asarray(sys.effort_fn(0.5 * (x + x_new)), dtype=float)
    if scheme == "discrete-gradient":
        return discrete_gradient_effort(sys, x, x_new)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def input_time(scheme: str, t: float, h: float) -> float:
    return t + h if scheme == "implicit-euler" else t + 0.5 * h


# ----------------------------------------------------------------------------
# trajectories and the energy ledger
# ----------------------------------------------------------------------------


@dataclass
class Trajectory:
    """Samples of a time integration.

    ``states`` and ``outputs`` are column-per-time-point (``n x (N+1)`` and
    ``m x (N+1)``); ``efforts`` and ``inputs`` hold the per-step evaluation
    point values (``N`` columns) the scheme actually used.
    """

    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    efforts: np.ndarray
    inputs: np.ndarray
    scheme: str
    newton_iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        if self.states.shape[1] != self.times.size or self.outputs.shape[1] != self.times.size:
            raise StructureError("trajectory columns do not align with the time grid")

    @property
    def steps(self) -> int:
        return self.times.size - 1

    @property
    def final_state(self) -> Vector:
        return self.states[:, -1]

    def to_csv(self, path):
        n, m = self.states.shape[0], self.outputs.shape[0]
        header = ["t"] + [f"x_{i}" for i in range(n)] + [f"y_{i}" for i in range(m)]
        data = np.column_stack([self.times, self.states.T, self.outputs.T])
        _write_csv(path, header, data)


@dataclass
class EnergyLedger:
    times: np.ndarray
    hamiltonian_samples: np.ndarray
    dissipated: np.ndarray
    supplied: np.ndarray
    balance_residual: np.ndarray

    @property
    def step_residuals(self) -> np.ndarray:
        return np.diff(self.balance_residual)

    @property
    def max_step_residual(self) -> float:
        r = self.step_residuals
        return float(np.max(np.abs(r))) if r.size else 0.0

    def dissipation_inequality_holds(self, tol: float) -> bool:
        """``H_k <= H_0 + supplied_k + k*tol`` for every sample k."""
        k = np.arange(self.times.size)
        excess = self.hamiltonian_samples - self.hamiltonian_samples[0] - self.supplied
        return bool(np.all(excess <= k * tol + tol))

    def to_csv(self, path):
        header = ["t", "H", "dissipated", "supplied", "residual"]
        data = np.column_stack(
            [self.times, self.hamiltonian_samples, self.dissipated, self.supplied, self.balance_residual]
        )
        _write_csv(path, header, data)


def _write_csv(path, header: Sequence[str], data: np.ndarray):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in np.atleast_2d(data):
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def energy_audit(sys: PhDaeSystem, traj: Trajectory) -> EnergyLedger:
    """Recompute the discrete energy balance of ``traj``.

    Efforts are re-evaluated from the states at the generating scheme's
    evaluation points; the inputs recorded by the integrator are reused.
    """
    if traj.times.size == 0:
        raise ValueError("empty trajectory")
    if traj.states.shape[0] != sys.dim_state:
        raise StructureError(f"trajectory has {traj.states.shape[0]} states, system has {sys.dim_state}")
    N = traj.steps
    ham = np.array([sys.hamiltonian_fn(traj.states[:, k]) for k in range(N + 1)], dtype=float)
    diss = np.zeros(N + 1)
    supp = np.zeros(N + 1)
    for k in range(N):
        h = traj.times[k + 1] - traj.times[k]
        x, xn = traj.states[:, k], traj.states[:, k + 1]
        z = scheme_effort(sys, traj.scheme, x, xn)
        u = traj.inputs[:, k]
        diss[k + 1] = diss[k] + h * float(z @ np.asarray(sys.resistive_fn(z)))
        supp[k + 1] = supp[k] + h * float(sys.output(z) @ u)
    resid = ham - ham[0] + diss - supp
    return EnergyLedger(traj.times.copy(), ham, diss, supp, resid)
