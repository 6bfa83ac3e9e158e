"""Field/circuit coupling through E-branch ports.

The circuit sees the device as a current ``j_E`` injected at the E-branch
nodes; its internal input is the voltage drop and its internal output is
``j_E``.  The device is driven by ``j_E`` and returns the port voltage
``X_S^T e``.  The relation ``u_circ = -y_dev``, ``u_dev = y_circ`` is the
skew coupling ``[[0, I], [-I, 0]]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .core import PhDaeSystem
from .errors import StructureError
from .fit import FitDevice
from .interconnect import CoupledSystem, PortSplit, condense
from .mna import ElementModels, assemble
from .netlist import CircuitGraph


def extend_circuit(g: CircuitGraph, models: Optional[ElementModels] = None) -> PhDaeSystem:
    """MNA system with field-port currents ``j_E`` and one internal port per E-branch."""
    if not g.of_kind("E"):
        raise ValueError("extend_circuit needs at least one E-branch in the netlist")
    return assemble(g, models, field_ports=True)


def coupling_block(n_ports: int, scale: float = 1.0) -> np.ndarray:
    c = np.zeros((2 * n_ports, 2 * n_ports))
    c[:n_ports, n_ports:] = scale * np.eye(n_ports)
    c[n_ports:, :n_ports] = -scale * np.eye(n_ports)
    return c


@dataclass
class FieldCircuitCoupling:
    circuit: PhDaeSystem
    device: PhDaeSystem
    coupled: CoupledSystem
    condensed: PhDaeSystem
    circuit_split: PortSplit
    device_split: PortSplit

    @property
    def n_ports(self) -> int:
        return self.circuit_split.n_internal

    def split_state(self, x) -> Tuple[np.ndarray, np.ndarray]:
        xc, xd = self.coupled.split_state(x)
        return xc, xd

    def port_powers(self, x) -> Tuple[np.ndarray, np.ndarray]:
        """Circuit-side ``u1 * y1`` and device-side ``u2 * y2`` per port at state ``x``."""
        xc, xd = self.split_state(x)
        y1 = self.circuit_split.internal_ports.T @ self.circuit.effort_fn(xc)
        y2 = self.device_split.internal_ports.T @ self.device.effort_fn(xd)
        c = self.coupled.coupling_matrix
        u = -c @ np.concatenate([y1, y2])
        k = self.n_ports
        return u[:k] * y1, u[k:] * y2


def couple(
    circuit: PhDaeSystem,
    device: Union[PhDaeSystem, FitDevice],
    coupling_scale: float = 1.0,
) -> FieldCircuitCoupling:
    """Coupled system (circuit block first) and its condensed monolithic form.

    ``coupling_scale = 0`` decouples the two blocks.
    """
    if isinstance(device, FitDevice):
        device = device.system
    cs = PortSplit.from_labels(circuit)
    ds = PortSplit.from_labels(device)
    if cs.n_internal == 0:
        raise StructureError("circuit has no field ports (port:* labels); use extend_circuit")
    if cs.n_internal != ds.n_internal:
        raise StructureError(f"port mismatch: circuit has {cs.n_internal} field ports, device has {ds.n_internal}")
    coupled = CoupledSystem([(circuit, cs), (device, ds)], coupling_block(cs.n_internal, coupling_scale))
    return FieldCircuitCoupling(circuit, device, coupled, condense(coupled), cs, ds)
