"""Interconnection of PH-DAE blocks.

Two routes are provided:

* :func:`aggregate` for a general linear relation ``M u + N y = 0`` between
  the aggregated block inputs and outputs, keeping the internal port
  variables as dummy algebraic states;
* :func:`condense` for a skew-symmetric relation ``u_int + C y_int = 0``,
  which folds the coupling into the structure matrix,
  ``J_hat = diag(J_i) - B_int C B_int^T``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import block_diag

from .core import PhDaeSystem
from .errors import StructureError


@dataclass(frozen=True)
class PortSplit:
    """Internal (coupled) and external (source) port matrices of one block."""

    internal_ports: np.ndarray
    external_ports: np.ndarray

    def __post_init__(self):
        bi = np.atleast_2d(np.asarray(self.internal_ports, dtype=float))
        be = np.atleast_2d(np.asarray(self.external_ports, dtype=float))
        if bi.shape[0] != be.shape[0]:
            raise StructureError("internal_ports and external_ports must have the same row count")
        object.__setattr__(self, "internal_ports", bi)
        object.__setattr__(self, "external_ports", be)

    @classmethod
    def from_system(cls, sys: PhDaeSystem, internal: Sequence[int]) -> "PortSplit":
        """Split ``sys.b_matrix`` by column index; unlisted columns are external."""
        internal = list(internal)
        external = [i for i in range(sys.dim_input) if i not in internal]
        b = sys.b_matrix
        return cls(b[:, internal].reshape(b.shape[0], -1), b[:, external].reshape(b.shape[0], -1))

    @classmethod
    def from_labels(cls, sys: PhDaeSystem, prefix: str = "port:") -> "PortSplit":
        labels = sys.port_labels or ()
        return cls.from_system(sys, [i for i, lab in enumerate(labels) if lab.startswith(prefix)])

    @property
    def n_internal(self) -> int:
        return self.internal_ports.shape[1]

    @property
    def n_external(self) -> int:
        return self.external_ports.shape[1]


@dataclass
class CoupledSystem:
    blocks: List[Tuple[PhDaeSystem, PortSplit]]
    coupling_matrix: Optional[np.ndarray] = None
    interconnection: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        if not self.blocks:
            raise StructureError("a coupled system needs at least one block")
        for k, (sys, split) in enumerate(self.blocks):
            if split.internal_ports.shape[0] != sys.dim_state:
                raise StructureError(f"block {k}: port split has wrong row count")
            if split.n_internal + split.n_external != sys.dim_input:
                raise StructureError(f"block {k}: internal + external ports != declared port count {sys.dim_input}")
        if self.coupling_matrix is not None:
            c = np.atleast_2d(np.asarray(self.coupling_matrix, dtype=float))
            m_hat = sum(split.n_internal for _, split in self.blocks)
            if c.shape != (m_hat, m_hat):
                raise StructureError(f"coupling_matrix: expected {(m_hat, m_hat)}, got {c.shape}")
            self.coupling_matrix = c

    @property
    def offsets(self) -> List[int]:
        out = [0]
        for sys, _ in self.blocks:
            out.append(out[-1] + sys.dim_state)
        return out

    def split_state(self, x) -> List[np.ndarray]:
        off = self.offsets
        return [np.asarray(x)[off[k] : off[k + 1]] for k in range(len(self.blocks))]


def _blockwise(systems: Sequence[PhDaeSystem], extra: int = 0):
    """Stacked effort/resistive/Hamiltonian callables over concatenated states."""
    sizes = [s.dim_state for s in systems]
    off = np.concatenate([[0], np.cumsum(sizes)])
    n = int(off[-1])
    sl = [slice(int(off[k]), int(off[k + 1])) for k in range(len(systems))]

    def effort(x):
        out = np.empty(n + extra)
        for s, part in zip(systems, sl):
            out[part] = s.effort_fn(x[part])
        out[n:] = x[n:]
        return out

    def resistive(z):
        out = np.zeros(n + extra)
        for s, part in zip(systems, sl):
            out[part] = s.resistive_fn(z[part])
        return out

    def ham(x):
        return float(sum(s.hamiltonian_fn(x[part]) for s, part in zip(systems, sl)))

    def grad(x):
        out = np.zeros(n + extra)
        for s, part in zip(systems, sl):
            out[part] = s.hamiltonian_grad_fn(x[part])
        return out

    def effort_jac(x):
        out = np.zeros((n + extra, n + extra))
        for s, part in zip(systems, sl):
            out[part, part] = s.effort_jacobian(x[part])
        out[n:, n:] = np.eye(extra)
        return out

    def resistive_jac(z):
        out = np.zeros((n + extra, n + extra))
        for s, part in zip(systems, sl):
            out[part, part] = s.resistive_jacobian(z[part])
        return out

    return effort, resistive, ham, grad, effort_jac, resistive_jac, sl


def _stack_optional(systems, attr, extra_block):
    mats = [getattr(s, attr) for s in systems]
    if any(m is None for m in mats):
        return None
    return block_diag(*mats, extra_block)


def _stack_discrete(systems, sl, extra):
    if all(s.discrete_effort_fn is None for s in systems):
        return None
    from .core import discrete_gradient_effort

    n = sl[-1].stop

    def dg(x, xn):
        out = np.empty(n + extra)
        for s, part in zip(systems, sl):
            out[part] = discrete_gradient_effort(s, x[part], xn[part])
        out[n:] = xn[n:]
        return out

    return dg


def _stack_discrete_jac(systems, sl, extra):
    if all(s.discrete_effort_fn is None for s in systems):
        return None
    if any(s.discrete_effort_fn is not None and s.discrete_effort_jac_fn is None for s in systems):
        return None
    if any(s.discrete_effort_fn is None and s.linear_effort is None for s in systems):
        return None
    from .core import discrete_effort_jacobian

    n = sl[-1].stop

    def dg_jac(x, xn):
        out = np.zeros((n + extra, n + extra))
        for s, part in zip(systems, sl):
            out[part, part] = discrete_effort_jacobian(s, x[part], xn[part])
        out[n:, n:] = np.eye(extra)
        return out

    return dg_jac


def _stack_sampler(systems, sl, extra):
    if all(s.state_sampler is None and s.linear_effort is not None for s in systems):
        return None
    from .core import sample_consistent_states

    def sampler(rng, scale):
        parts = [sample_consistent_states(s, rng, 1, scale)[0] for s in systems]
        return np.concatenate(parts + [scale * rng.standard_normal(extra)])

    return sampler


def aggregate(blocks: Sequence[PhDaeSystem], m_matrix, n_matrix) -> PhDaeSystem:
    """Joint PH-DAE for the relation ``M u_blocks + N y_blocks = u_ext``.

    The state is ``(x_1, ..., x_r, u_hat, y_hat)`` with ``E = diag(E_i, 0, 0)``
    and the effort ``(z(x), u_hat, y_hat)``; the rows are

        d/dt E x = (J - R) z + B u_hat
              0  = -B^T z + y_hat
              0  = -M u_hat - N y_hat + u_ext

    and the joint output is ``y_hat``.  The joint structure matrix is
    skew-symmetric whenever ``M = I`` and ``N`` is skew.
    """
    blocks = list(blocks)
    if not blocks:
        raise ValueError("aggregate needs at least one block")
    m = sum(s.dim_input for s in blocks)
    mm = np.atleast_2d(np.asarray(m_matrix, dtype=float))
    nn = np.atleast_2d(np.asarray(n_matrix, dtype=float))
    if mm.shape != (m, m) or nn.shape != (m, m):
        raise StructureError(f"M and N must both be {m}x{m} for {m} aggregated ports; got {mm.shape}, {nn.shape}")
    e = block_diag(*[s.e_matrix for s in blocks])
    j = block_diag(*[s.j_matrix for s in blocks])
    b = block_diag(*[s.b_matrix for s in blocks])
    n = e.shape[0]
    big = n + 2 * m
    e_big = np.zeros((big, big))
    e_big[:n, :n] = e
    j_big = np.zeros((big, big))
    j_big[:n, :n] = j
    j_big[:n, n : n + m] = b
    j_big[n : n + m, :n] = -b.T
    j_big[n : n + m, n + m :] = np.eye(m)
    j_big[n + m :, n : n + m] = -mm
    j_big[n + m :, n + m :] = -nn
    b_big = np.zeros((big, m))
    b_big[n + m :, :] = np.eye(m)
    effort, resistive, ham, grad, effort_jac, resistive_jac, sl = _blockwise(blocks, 2 * m)
    basis = block_diag(*[s.subspace_basis for s in blocks], np.eye(2 * m))
    q = _stack_optional(blocks, "linear_effort", np.eye(2 * m))
    r = _stack_optional(blocks, "linear_resistive", np.zeros((2 * m, 2 * m)))
    return PhDaeSystem(
        e_matrix=e_big,
        j_matrix=j_big,
        b_matrix=b_big,
        effort_fn=effort,
        resistive_fn=resistive,
        hamiltonian_fn=ham,
        hamiltonian_grad_fn=grad,
        subspace_basis=basis,
        linear_effort=q,
        linear_resistive=r,
        effort_jac_fn=effort_jac,
        resistive_jac_fn=resistive_jac,
        discrete_effort_fn=_stack_discrete(blocks, sl, 2 * m),
        discrete_effort_jac_fn=_stack_discrete_jac(blocks, sl, 2 * m),
        state_sampler=_stack_sampler(blocks, sl, 2 * m),
    )


def interconnection_matrices(coupled: CoupledSystem):
    """``(M, N)`` equivalent to the skew coupling of ``coupled``.

    Ports are ordered block by block, internal before external.  Internal rows
    read ``u_int + C y_int = 0``; external rows read ``u_ext = (joint input)``.
    The returned ``ext_index`` lists the aggregated port indices that carry
    external inputs and outputs.
    """
    if coupled.coupling_matrix is None:
        raise StructureError("coupled system has no coupling_matrix")
    c = coupled.coupling_matrix
    int_idx, ext_idx, pos = [], [], 0
    for _, split in coupled.blocks:
        int_idx.extend(range(pos, pos + split.n_internal))
        pos += split.n_internal
        ext_idx.extend(range(pos, pos + split.n_external))
        pos += split.n_external
    m = pos
    mm = np.eye(m)
    nn = np.zeros((m, m))
    nn[np.ix_(int_idx, int_idx)] = c
    return mm, nn, ext_idx


def aggregate_coupled(coupled: CoupledSystem) -> Tuple[PhDaeSystem, List[int]]:
    """Aggregate the blocks of ``coupled`` with ports reordered (internal, external)."""
    reordered = []
    for sys, split in coupled.blocks:
        b = np.hstack([split.internal_ports, split.external_ports])
        reordered.append(
            PhDaeSystem(
                e_matrix=sys.e_matrix,
                j_matrix=sys.j_matrix,
                b_matrix=b,
                effort_fn=sys.effort_fn,
                resistive_fn=sys.resistive_fn,
                hamiltonian_fn=sys.hamiltonian_fn,
                hamiltonian_grad_fn=sys.hamiltonian_grad_fn,
                subspace_basis=sys.subspace_basis,
                linear_effort=sys.linear_effort,
                linear_resistive=sys.linear_resistive,
                effort_jac_fn=sys.effort_jac_fn,
                resistive_jac_fn=sys.resistive_jac_fn,
                discrete_effort_fn=sys.discrete_effort_fn,
                discrete_effort_jac_fn=sys.discrete_effort_jac_fn,
                state_sampler=sys.state_sampler,
            )
        )
    mm, nn, ext_idx = interconnection_matrices(coupled)
    return aggregate(reordered, mm, nn), ext_idx


def condense(coupled: CoupledSystem, skew_tol: float = 1e-14) -> PhDaeSystem:
    """Condensed PH-DAE ``d/dt E x = J_hat z - r + B_ext u_ext``."""
    c = coupled.coupling_matrix
    if c is None:
        raise StructureError("condense requires a coupling_matrix")
    asym = float(np.max(np.abs(c + c.T))) if c.size else 0.0
    if asym > skew_tol:
        raise StructureError(f"coupling matrix is not skew-symmetric: |C + C^T|_inf = {asym:.3e}")
    systems = [s for s, _ in coupled.blocks]
    splits = [p for _, p in coupled.blocks]
    e = block_diag(*[s.e_matrix for s in systems])
    j = block_diag(*[s.j_matrix for s in systems])
    b_int = block_diag(*[p.internal_ports for p in splits])
    b_ext = block_diag(*[p.external_ports for p in splits])
    n = e.shape[0]
    b_int = b_int.reshape(n, -1)
    b_ext = b_ext.reshape(n, -1)
    j_hat = j - b_int @ c @ b_int.T
    effort, resistive, ham, grad, effort_jac, resistive_jac, sl = _blockwise(systems)
    labels = None
    if all(s.state_labels is not None for s in systems):
        labels = tuple(lab for s in systems for lab in s.state_labels)
    ports = None
    if all(s.port_labels is not None for s in systems):
        ports = tuple(
            lab for s in systems for lab in s.port_labels if not lab.startswith("port:")
        )
        if len(ports) != b_ext.shape[1]:
            ports = None
    return PhDaeSystem(
        e_matrix=e,
        j_matrix=j_hat,
        b_matrix=b_ext,
        effort_fn=effort,
        resistive_fn=resistive,
        hamiltonian_fn=ham,
        hamiltonian_grad_fn=grad,
        subspace_basis=block_diag(*[s.subspace_basis for s in systems]),
        linear_effort=_stack_optional(systems, "linear_effort", np.zeros((0, 0))),
        linear_resistive=_stack_optional(systems, "linear_resistive", np.zeros((0, 0))),
        effort_jac_fn=effort_jac,
        resistive_jac_fn=resistive_jac,
        discrete_effort_fn=_stack_discrete(systems, sl, 0),
        discrete_effort_jac_fn=_stack_discrete_jac(systems, sl, 0),
        state_sampler=_stack_sampler(systems, sl, 0),
        state_labels=labels,
        port_labels=ports,
    )
