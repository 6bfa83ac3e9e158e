"""Charge/flux-oriented modified nodal analysis as a PH-DAE.

State ``x = (q_C, Phi_L, e, j_V[, j_E])``, effort
``z = (e, j_L, u_C, j_V[, j_E])`` with ``u_C = q^{-1}(q_C)`` and
``j_L = phi^{-1}(Phi_L)``.  Equation blocks are ordered (KCL at the nodes,
inductor laws, capacitor constraints, voltage sources[, field ports]).

Element library
---------------
``LINEAR``
    ``q = c u``, ``phi = l j``, ``g = u / R``.
``POLY3:<a3>`` (storage)
    ``q = c u + a3 u^3`` with ``a3 >= 0``; the stored energy is the exact
    antiderivative ``c u^2 / 2 + 3 a3 u^4 / 4`` evaluated at ``u = q^{-1}(q)``.
``MODEL POLY3 <g1> <g3>`` (conductance)
    ``g(u) = g1 u + g3 u^3``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .core import PhDaeSystem
from .errors import ModelError, PreconditionError
from .netlist import CircuitGraph, check_soundness

SCALES = (1.0, 1e-3, 1e3)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(6)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


@dataclass(frozen=True)
class StorageModel:
    """Scalar constitutive law ``q = c u + a3 u^3`` (``a3 = 0`` is LINEAR)."""

    c: float
    a3: float = 0.0

    def __post_init__(self):
        if not self.c > 0 or self.a3 < 0:
            raise ModelError(f"storage model needs c > 0 and a3 >= 0, got c={self.c}, a3={self.a3}")

    @property
    def name(self) -> str:
        return "LINEAR" if self.a3 == 0 else f"POLY3:{self.a3!r}"


@dataclass(frozen=True)
class ConductanceModel:
    """Scalar conductance ``g(u) = g1 u + g3 u^3``.  No sign restriction here;
    passivity is reported by :func:`verify_passivity`."""

    g1: float
    g3: float = 0.0


class StorageBank:
    """Vectorized bank of diagonal storage laws (one entry per element)."""

    def __init__(self, models: Sequence[StorageModel]):
        self.models = tuple(models)
        self.c = np.array([m.c for m in models], dtype=float)
        self.a3 = np.array([m.a3 for m in models], dtype=float)
        self.linear = bool(np.all(self.a3 == 0))

    def __len__(self):
        return len(self.models)

    def forward(self, u):
        return self.c * u + self.a3 * u**3

    def slope(self, u):
        return self.c + 3.0 * self.a3 * u**2

    def inverse(self, q, tol=1e-15, max_iter=100):
        q = np.asarray(q, dtype=float)
        if self.linear:
            return q / self.c
        # q(u) is odd, increasing and convex on u > 0, so Newton from u = q / c
        # decreases monotonically towards the root; the magnitude is capped
        # by the cubic-only root as a guard.
        sgn = np.sign(q)
        aq = np.abs(q)
        u = aq / self.c
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            cub = np.where(self.a3 > 0, np.cbrt(aq / np.where(self.a3 > 0, self.a3, 1.0)), np.inf)
        u = np.minimum(u, cub)
        for _ in range(max_iter):
            f = self.forward(u) - aq
            du = f / self.slope(u)
            u = np.clip(u - du, 0.0, None)
            if np.all(np.abs(du) <= tol * (1.0 + u)):
                break
        return sgn * u

    def energy(self, q):
        u = self.inverse(q)
        return float(np.sum(0.5 * self.c * u**2 + 0.75 * self.a3 * u**4))

    def _potential(self, u):
        return 0.5 * self.c * u**2 + 0.75 * self.a3 * u**4

    def _big_steps(self, q0, q1):
        return np.abs(q1 - q0) > 1e-2 * (1.0 + np.abs(q0) + np.abs(q1))

    def mean_gradient(self, q0, q1):
        """Elementwise ``(V(q1) - V(q0)) / (q1 - q0)``, i.e. the mean of ``q^{-1}``."""
        q0, q1 = np.asarray(q0, dtype=float), np.asarray(q1, dtype=float)
        if self.linear:
            return 0.5 * (q0 + q1) / self.c
        dq = q1 - q0
        # Gauss-Legendre is accurate for short steps where the quotient cancels
        out = _GL_WEIGHTS @ self.inverse(q0 + _GL_NODES[:, None] * dq)
        big = self._big_steps(q0, q1)
        if np.any(big):
            v0, v1 = self._potential(self.inverse(q0)), self._potential(self.inverse(q1))
            out = np.where(big, (v1 - v0) / np.where(big, dq, 1.0), out)
        return out

    def mean_gradient_jac(self, q0, q1):
        """Elementwise derivative of :meth:`mean_gradient` with respect to ``q1``."""
        q0, q1 = np.asarray(q0, dtype=float), np.asarray(q1, dtype=float)
        if self.linear:
            return 0.5 / self.c * np.ones_like(q1)
        dq = q1 - q0
        u = self.inverse(q0 + _GL_NODES[:, None] * dq)
        out = (_GL_WEIGHTS * _GL_NODES) @ (1.0 / self.slope(u))
        big = self._big_steps(q0, q1)
        if np.any(big):
            mean = self.mean_gradient(q0, q1)
            safe = np.where(big, dq, 1.0)
            out = np.where(big, (self.inverse(q1) - mean) / safe, out)
        return out


class ConductanceBank:
    def __init__(self, models: Sequence[ConductanceModel]):
        self.models = tuple(models)
        self.g1 = np.array([m.g1 for m in models], dtype=float)
        self.g3 = np.array([m.g3 for m in models], dtype=float)
        self.linear = bool(np.all(self.g3 == 0))

    def __len__(self):
        return len(self.models)

    def __call__(self, u):
        return self.g1 * u + self.g3 * u**3

    def slope(self, u):
        return self.g1 + 3.0 * self.g3 * u**2


@dataclass
class ElementModels:
    """Constitutive laws of all capacitors, inductors and resistors (file order)."""

    capacitors: List[StorageModel] = field(default_factory=list)
    inductors: List[StorageModel] = field(default_factory=list)
    conductances: List[ConductanceModel] = field(default_factory=list)

    def __post_init__(self):
        self.cap = StorageBank(self.capacitors)
        self.ind = StorageBank(self.inductors)
        self.res = ConductanceBank(self.conductances)

    @property
    def linear(self) -> bool:
        return self.cap.linear and self.ind.linear and self.res.linear

    def charge_fn(self, u):
        return self.cap.forward(u)

    def charge_inv_fn(self, q):
        return self.cap.inverse(q)

    def capacitance(self, u):
        return np.diag(self.cap.slope(u))

    def flux_fn(self, j):
        return self.ind.forward(j)

    def flux_inv_fn(self, phi):
        return self.ind.inverse(phi)

    def inductance(self, j):
        return np.diag(self.ind.slope(j))

    def conductance_fn(self, u):
        return self.res(u)

    def conductance_jac(self, u):
        return np.diag(self.res.slope(u))

    def potential_c(self, q) -> float:
        return self.cap.energy(q)

    def potential_l(self, phi) -> float:
        return self.ind.energy(phi)


def _storage_model(branch) -> StorageModel:
    spec = branch.model
    if spec is None or spec.upper() == "LINEAR":
        return StorageModel(branch.value)
    kind, _, arg = spec.partition(":")
    if kind.upper() == "POLY3":
        try:
            return StorageModel(branch.value, float(arg))
        except ValueError:
            raise ModelError(f"{branch.name}: bad POLY3 coefficient {arg!r}") from None
    raise ModelError(f"{branch.name}: unresolved model {spec!r}")


def _conductance_model(branch) -> ConductanceModel:
    if branch.kind == "R":
        return ConductanceModel(1.0 / branch.value)
    name = branch.model.upper()
    if name == "LINEAR" and len(branch.params) == 1:
        return ConductanceModel(branch.params[0])
    if name == "POLY3" and len(branch.params) == 2:
        return ConductanceModel(*branch.params)
    raise ModelError(f"{branch.name}: unresolved model {branch.model!r} with {len(branch.params)} parameters")


def models_from_graph(g: CircuitGraph) -> ElementModels:
    """Resolve the model references stored on the netlist branches."""
    return ElementModels(
        capacitors=[_storage_model(b) for b in g.of_kind("C")],
        inductors=[_storage_model(b) for b in g.of_kind("L")],
        conductances=[_conductance_model(b) for b in g.branches if b.kind in "RG"],
    )


@dataclass
class MnaLayout:
    n_c: int
    n_l: int
    n_nodes: int
    n_v: int
    n_e: int = 0

    @property
    def size(self) -> int:
        return self.n_c + self.n_l + self.n_nodes + self.n_v + self.n_e

    def state_slices(self):
        """Slices of ``x`` for ``q_C, Phi_L, e, j_V, j_E``."""
        o = np.cumsum([0, self.n_c, self.n_l, self.n_nodes, self.n_v, self.n_e])
        return tuple(slice(o[i], o[i + 1]) for i in range(5))

    def effort_slices(self):
        """Slices of ``z`` (and of the equation rows) for ``e, j_L, u_C, j_V, j_E``."""
        o = np.cumsum([0, self.n_nodes, self.n_l, self.n_c, self.n_v, self.n_e])
        return tuple(slice(o[i], o[i + 1]) for i in range(5))


def source_function(g: CircuitGraph):
    """``u(t) = (i(t), v(t))`` stacked in netlist order of I then V sources."""
    srcs = g.of_kind("I") + g.of_kind("V")
    if not srcs:
        return None
    return lambda t: np.array([b.source(t) for b in srcs], dtype=float)


def assemble(g: CircuitGraph, models: Optional[ElementModels] = None, field_ports: bool = False) -> PhDaeSystem:
    """Assemble the MNA PH-DAE of a sound circuit.

    With ``field_ports=True`` the E-branches become currents ``j_E`` with one
    internal port each (labelled ``port:<name>``); otherwise E-branches are
    rejected.
    """
    rep = check_soundness(g)
    if not rep.sound:
        raise PreconditionError("MNA assembly requires a sound circuit: " + "; ".join(rep.lines()))
    if g.of_kind("E") and not field_ports:
        raise ModelError("netlist has field-port (E) branches; assemble it with coupler.extend_circuit")
    if models is None:
        models = models_from_graph(g)
    a_c, a_l, a_r, a_v, a_i = g.a_c, g.a_l, g.a_r, g.a_v, g.a_i
    a_e = g.a_e if field_ports else np.zeros((g.node_count, 0))
    if (len(models.cap), len(models.ind), len(models.res)) != (a_c.shape[1], a_l.shape[1], a_r.shape[1]):
        raise ModelError("element models do not match the netlist element counts")
    lay = MnaLayout(a_c.shape[1], a_l.shape[1], g.node_count, a_v.shape[1], a_e.shape[1])
    n = lay.size
    sq, sphi, se, sjv, sje = lay.state_slices()
    re_, rl, rc, rv, rE = lay.effort_slices()

    e_mat = np.zeros((n, n))
    e_mat[re_, sq] = a_c
    e_mat[rl, sphi] = np.eye(lay.n_l)

    j_mat = np.zeros((n, n))
    j_mat[re_, rl] = -a_l
    j_mat[re_, rv] = -a_v
    j_mat[re_, rE] = -a_e
    j_mat[rl, re_] = a_l.T
    j_mat[rv, re_] = a_v.T
    j_mat[rE, re_] = a_e.T

    n_i = a_i.shape[1]
    b_mat = np.zeros((n, n_i + lay.n_v + lay.n_e))
    b_mat[re_, :n_i] = -a_i
    b_mat[rv, n_i : n_i + lay.n_v] = -np.eye(lay.n_v)
    b_mat[rE, n_i + lay.n_v :] = np.eye(lay.n_e)

    def effort(x):
        z = np.empty(n)
        z[re_] = x[se]
        z[rl] = models.flux_inv_fn(x[sphi])
        z[rc] = models.charge_inv_fn(x[sq])
        z[rv] = x[sjv]
        z[rE] = x[sje]
        return z

    def effort_jac(x):
        d = np.zeros((n, n))
        d[re_, se] = np.eye(lay.n_nodes)
        d[rl, sphi] = np.diag(1.0 / models.ind.slope(models.flux_inv_fn(x[sphi])))
        d[rc, sq] = np.diag(1.0 / models.cap.slope(models.charge_inv_fn(x[sq])))
        d[rv, sjv] = np.eye(lay.n_v)
        d[rE, sje] = np.eye(lay.n_e)
        return d

    def resistive(z):
        r = np.zeros(n)
        r[re_] = a_r @ models.conductance_fn(a_r.T @ z[re_])
        r[rc] = a_c.T @ z[re_] - z[rc]
        return r

    def resistive_jac(z):
        d = np.zeros((n, n))
        d[re_, re_] = a_r @ models.conductance_jac(a_r.T @ z[re_]) @ a_r.T
        d[rc, re_] = a_c.T
        d[rc, rc] = -np.eye(lay.n_c)
        return d

    def hamiltonian(x):
        return models.potential_c(x[sq]) + models.potential_l(x[sphi])

    def grad(x):
        gr = np.zeros(n)
        gr[sq] = models.charge_inv_fn(x[sq])
        gr[sphi] = models.flux_inv_fn(x[sphi])
        return gr

    def discrete_effort(x, xn):
        z = np.empty(n)
        z[re_] = xn[se]
        z[rl] = models.ind.mean_gradient(x[sphi], xn[sphi])
        z[rc] = models.cap.mean_gradient(x[sq], xn[sq])
        z[rv] = xn[sjv]
        z[rE] = xn[sje]
        return z

    def discrete_effort_jac(x, xn):
        d = np.zeros((n, n))
        d[re_, se] = np.eye(lay.n_nodes)
        d[rl, sphi] = np.diag(models.ind.mean_gradient_jac(x[sphi], xn[sphi]))
        d[rc, sq] = np.diag(models.cap.mean_gradient_jac(x[sq], xn[sq]))
        d[rv, sjv] = np.eye(lay.n_v)
        d[rE, sje] = np.eye(lay.n_e)
        return d

    def sampler(rng, scale):
        # states whose effort satisfies A_C^T e = u_C
        v = rng.standard_normal(lay.n_nodes + lay.n_l + lay.n_v + lay.n_e)
        nrm = np.linalg.norm(v)
        v = scale * v / nrm if nrm > 0 else v
        x = np.zeros(n)
        x[se] = v[: lay.n_nodes]
        x[sphi] = models.flux_fn(v[lay.n_nodes : lay.n_nodes + lay.n_l])
        x[sjv] = v[lay.n_nodes + lay.n_l : lay.n_nodes + lay.n_l + lay.n_v]
        x[sje] = v[lay.n_nodes + lay.n_l + lay.n_v :]
        x[sq] = models.charge_fn(a_c.T @ x[se])
        return x

    # V = {A_C^T e = u_C} in effort coordinates
    basis = np.zeros((n, n - lay.n_c))
    basis[re_, : lay.n_nodes] = np.eye(lay.n_nodes)
    basis[rc, : lay.n_nodes] = a_c.T
    col = lay.n_nodes
    for rows in (rl, rv, rE):
        k = rows.stop - rows.start
        basis[rows, col : col + k] = np.eye(k)
        col += k

    q_mat = r_mat = None
    if models.linear:
        q_mat = effort_jac(np.zeros(n))
        r_mat = resistive_jac(np.zeros(n))

    labels = (
        tuple(f"q:{nm}" for nm in g.names("C"))
        + tuple(f"phi:{nm}" for nm in g.names("L"))
        + tuple(f"e:{lab}" for lab in g.node_labels)
        + tuple(f"j:{nm}" for nm in g.names("V"))
        + tuple(f"j:{nm}" for nm in (g.names("E") if field_ports else []))
    )
    ports = tuple(g.names("I")) + tuple(g.names("V")) + tuple(f"port:{nm}" for nm in (g.names("E") if field_ports else []))
    return PhDaeSystem(
        e_matrix=e_mat,
        j_matrix=j_mat,
        b_matrix=b_mat,
        effort_fn=effort,
        resistive_fn=resistive,
        hamiltonian_fn=hamiltonian,
        hamiltonian_grad_fn=grad,
        subspace_basis=basis,
        linear_effort=q_mat,
        linear_resistive=r_mat,
        effort_jac_fn=effort_jac,
        resistive_jac_fn=resistive_jac,
        discrete_effort_fn=None if models.linear else discrete_effort,
        discrete_effort_jac_fn=None if models.linear else discrete_effort_jac,
        state_sampler=sampler,
        state_labels=labels,
        port_labels=ports,
    )


def layout_of(g: CircuitGraph, field_ports: bool = False) -> MnaLayout:
    return MnaLayout(
        len(g.of_kind("C")),
        len(g.of_kind("L")),
        g.node_count,
        len(g.of_kind("V")),
        len(g.of_kind("E")) if field_ports else 0,
    )


# ----------------------------------------------------------------------------
# passivity
# ----------------------------------------------------------------------------


@dataclass
class PassivityReport:
    """Worst sampled values of the three passivity conditions.

    ``gradient_error`` is the largest relative mismatch between a central
    difference of the storage potentials and the inverse laws;
    ``min_storage_slope`` the smallest eigenvalue of ``C~``/``L~`` and
    ``min_conductance_sym`` that of ``dg/du + (dg/du)^T``.
    """

    gradient_error: float
    min_storage_slope: float
    min_conductance_sym: float
    storage_witness: Optional[tuple]
    conductance_witness: Optional[tuple]
    tol: float = 1e-6

    @property
    def gradient_ok(self):
        return self.gradient_error <= self.tol

    @property
    def storage_ok(self):
        return self.min_storage_slope > 0

    @property
    def conductance_ok(self):
        return self.min_conductance_sym > 0

    @property
    def ok(self):
        return self.gradient_ok and self.storage_ok and self.conductance_ok

    def lines(self):
        yn = lambda b: "pass" if b else "FAIL"
        fmt = lambda v: "no elements" if np.isinf(v) else f"{v:.3e}"
        out = [f"passivity gradient (dV = inverse law): {yn(self.gradient_ok)} (max rel. error {self.gradient_error:.3e})"]
        s = f"passivity storage slopes positive: {yn(self.storage_ok)} (min {fmt(self.min_storage_slope)})"
        if not self.storage_ok and self.storage_witness:
            s += f" witness {self.storage_witness[0]} at {self.storage_witness[1]:.6g}"
        out.append(s)
        s = f"passivity conductance dg/du + dg/du^T positive definite: {yn(self.conductance_ok)} (min {fmt(self.min_conductance_sym)})"
        if not self.conductance_ok and self.conductance_witness:
            s += f" witness {self.conductance_witness[0]} at u = {self.conductance_witness[1]:.6g}"
        out.append(s)
        return out


def _rel_fd_error(bank: StorageBank, q):
    err = 0.0
    for k in range(len(bank)):
        h = 1e-6 * (1.0 + abs(q[k]))
        qp, qm = q.copy(), q.copy()
        qp[k] += h
        qm[k] -= h
        fd = (bank.energy(qp) - bank.energy(qm)) / (2 * h)
        exact = bank.inverse(q)[k]
        err = max(err, abs(fd - exact) / (1.0 + abs(exact)))
    return err


def verify_passivity(models: ElementModels, samples: int = 100, seed: int = 0, tol: float = 1e-6) -> PassivityReport:
    """Sample the passivity conditions over the magnitudes ``{1, 1e-3, 1e3}``."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    grad_err = 0.0
    min_slope, s_wit = np.inf, None
    min_g, g_wit = np.inf, None
    names = [("C", i) for i in range(len(models.cap))] + [("L", i) for i in range(len(models.ind))]
    for scale in SCALES:
        for _ in range(samples):
            uc = scale * rng.uniform(-1, 1, len(models.cap))
            jl = scale * rng.uniform(-1, 1, len(models.ind))
            ur = scale * rng.uniform(-1, 1, len(models.res))
            qc, phi = models.charge_fn(uc), models.flux_fn(jl)
            if scale <= 1.0:
                grad_err = max(grad_err, _rel_fd_error(models.cap, qc), _rel_fd_error(models.ind, phi))
            slopes = np.concatenate([models.cap.slope(uc), models.ind.slope(jl)])
            if slopes.size and slopes.min() < min_slope:
                k = int(np.argmin(slopes))
                min_slope = float(slopes[k])
                s_wit = (f"{names[k][0]}[{names[k][1]}]", float(np.concatenate([uc, jl])[k]))
            if len(models.res):
                # diagonal Jacobian: symmetric part eigenvalues are 2 g'(u)
                sym = 2.0 * models.res.slope(ur)
                if sym.min() < min_g:
                    k = int(np.argmin(sym))
                    min_g = float(sym[k])
                    g_wit = (f"G[{k}]", float(ur[k]))
    return PassivityReport(grad_err, float(min_slope), float(min_g), s_wit, g_wit, tol)


# ----------------------------------------------------------------------------
# debugging dump
# ----------------------------------------------------------------------------


def dump_matrices(sys: PhDaeSystem, directory) -> List[str]:
    """Write E, J, B (and Q, R when linear) as Matrix Market files; returns the paths."""
    from scipy.io import mmwrite
    from scipy.sparse import coo_matrix

    os.makedirs(directory, exist_ok=True)
    mats = {"E": sys.e_matrix, "J": sys.j_matrix, "B": sys.b_matrix}
    if sys.linear_effort is not None:
        mats["Q"] = sys.linear_effort
    if sys.linear_resistive is not None:
        mats["R"] = sys.linear_resistive
    paths = []
    for name, m in mats.items():
        path = os.path.join(directory, f"{name}.mtx")
        mmwrite(path, coo_matrix(m), comment=f"phdae {name} matrix, state labels: {','.join(sys.state_labels or ())}")
        paths.append(path)
    return paths
