import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from phdae import mna, netlist
from phdae.core import PhDaeSystem, energy_audit, validate_structure
from phdae.errors import StructureError
from phdae.integrators import SolverConfig, consistent_init, integrate
from phdae.interconnect import (
    CoupledSystem,
    PortSplit,
    aggregate,
    aggregate_coupled,
    condense,
    interconnection_matrices,
)

from conftest import two_block_benchmark


def lc_block(b_row=0):
    b = np.zeros((2, 1))
    b[b_row, 0] = 1.0
    return PhDaeSystem.linear(np.eye(2), [[0.0, -1.0], [1.0, 0.0]], np.zeros((2, 2)), np.eye(2), b)


def _embedded_input(agg_input_dim, ext, u):
    def full(t):
        v = np.zeros(agg_input_dim)
        v[ext] = u(t)
        return v

    return full


def _run_both(coupled, u, scheme, h=1e-3, t_end=1.0):
    agg, ext = aggregate_coupled(coupled)
    con = condense(coupled)
    ua = _embedded_input(agg.dim_input, ext, u)
    cfg = SolverConfig(h=h, t_end=t_end, scheme=scheme)
    xa = consistent_init(agg, np.zeros(agg.dim_state), ua(0.0))
    xc = consistent_init(con, np.zeros(con.dim_state), u(0.0))
    return integrate(agg, cfg, xa, ua).outputs[ext], integrate(con, cfg, xc, u).outputs


def test_zero_blocks_rejected():
    with pytest.raises(ValueError):
        aggregate([], np.zeros((0, 0)), np.zeros((0, 0)))
    with pytest.raises(StructureError):
        CoupledSystem([])


def test_aggregate_dimension_mismatch():
    with pytest.raises(StructureError, match="2x2"):
        aggregate([lc_block(), lc_block()], np.eye(3), np.zeros((3, 3)))


def test_port_split_row_mismatch():
    with pytest.raises(StructureError):
        PortSplit(np.zeros((3, 1)), np.zeros((2, 1)))
    with pytest.raises(StructureError, match="port count"):
        CoupledSystem([(lc_block(), PortSplit(np.zeros((2, 1)), np.zeros((2, 1))))])


def test_single_block_identity_reproduces_io_map():
    g = netlist.parse("V1 1 0 SIN 1 3\nR1 1 2 1\nC1 2 0 0.5\nR2 2 0 2")
    sys = mna.assemble(g)
    u = mna.source_function(g)
    joint = aggregate([sys], np.eye(1), np.zeros((1, 1)))
    cfg = SolverConfig(h=1e-3, t_end=1.0, scheme="implicit-euler")
    a = integrate(sys, cfg, consistent_init(sys, np.zeros(sys.dim_state), u(0.0)), u)
    b = integrate(joint, cfg, consistent_init(joint, np.zeros(joint.dim_state), u(0.0)), u)
    assert np.max(np.abs(a.outputs - b.outputs)) <= 1e-8


def test_gyrator_lc_pair_conserves_total_energy():
    # u1 = -y2, u2 = y1  <=>  u + N y = 0 with N = [[0, 1], [-1, 0]]
    n_mat = np.array([[0.0, 1.0], [-1.0, 0.0]])
    joint = aggregate([lc_block(), lc_block()], np.eye(2), n_mat)
    rep = validate_structure(joint, samples=100)
    assert rep.skew_violation == 0.0
    x0 = np.zeros(joint.dim_state)
    x0[:4] = [1.0, 0.0, 0.3, -0.5]
    x0 = consistent_init(joint, x0, np.zeros(2))
    traj = integrate(joint, SolverConfig(h=1e-2, t_end=10.0, scheme="midpoint"), x0, lambda t: np.zeros(2))
    ham = energy_audit(joint, traj).hamiltonian_samples
    assert np.max(np.abs(ham - ham[0])) <= 1e-9
    # the blocks do exchange energy
    h1 = 0.5 * np.sum(traj.states[:2] ** 2, axis=0)
    assert np.ptp(h1) > 1e-2


def test_zero_coupling_keeps_block_structure():
    blocks = [(lc_block(), PortSplit(np.eye(2)[:, :1], np.zeros((2, 0)))) for _ in range(2)]
    con = condense(CoupledSystem(blocks, coupling_matrix=np.zeros((2, 2))))
    np.testing.assert_array_equal(con.j_matrix[:2, 2:], 0.0)
    np.testing.assert_array_equal(con.j_matrix[2:, :2], 0.0)
    np.testing.assert_array_equal(con.j_matrix[:2, :2], lc_block().j_matrix)


def test_skew_coupling_block_pattern():
    coupled, _ = two_block_benchmark()
    (s1, p1), (s2, p2) = coupled.blocks
    con = condense(coupled)
    n1 = s1.dim_state
    b1, b2 = p1.internal_ports, p2.internal_ports
    np.testing.assert_array_equal(con.j_matrix[:n1, n1:], -b1 @ b2.T)
    np.testing.assert_array_equal(con.j_matrix[n1:, :n1], b2 @ b1.T)
    np.testing.assert_array_equal(con.j_matrix[:n1, :n1], s1.j_matrix)
    assert con.port_labels == ("V1", "I1")
    rep = validate_structure(con, samples=200)
    assert rep.skew_violation == 0.0
    assert rep.accretivity_min >= -1e-12
    assert rep.compatibility_violation <= 1e-10


def test_non_skew_coupling_reports_norm():
    coupled, _ = two_block_benchmark(skew=False)
    with pytest.raises(StructureError, match=r"2\.000e\+00"):
        condense(coupled)


def test_interconnection_matrices_layout():
    coupled, _ = two_block_benchmark()
    mm, nn, ext = interconnection_matrices(coupled)
    # ports per block are (source, field); reordered as (field, source)
    assert ext == [1, 3]
    np.testing.assert_array_equal(mm, np.eye(4))
    assert nn[0, 2] == 1.0 and nn[2, 0] == -1.0
    assert np.count_nonzero(nn) == 2


@pytest.mark.parametrize("scheme", ["implicit-euler", "midpoint", "discrete-gradient"])
def test_aggregate_matches_condense(scheme):
    coupled, (ua, ub) = two_block_benchmark()
    u = lambda t: np.concatenate([ua(t), ub(t)])
    ya, yc = _run_both(coupled, u, scheme)
    assert np.max(np.abs(yc)) > 0.1
    assert np.max(np.abs(ya - yc)) <= 1e-8


@settings(max_examples=15, deadline=None)
@given(
    arrays(np.float64, (2, 2), elements=st.floats(-2, 2)),
    st.floats(0.1, 3.0),
    st.floats(0.5, 4.0),
)
def test_equivalence_random_skew_coupling(a, damping, freq):
    # random skew coupling of two damped LC blocks, each with an external port
    c = a - a.T
    blocks = []
    for k in range(2):
        r = np.diag([damping, 0.0])
        b = np.array([[1.0, 0.0], [0.0, 1.0]]) if k == 0 else np.array([[0.0, 1.0], [1.0, 0.0]])
        sys = PhDaeSystem.linear(np.eye(2), [[0.0, -1.0], [1.0, 0.0]], r, np.eye(2), b)
        blocks.append((sys, PortSplit(b[:, :1], b[:, 1:])))
    coupled = CoupledSystem(blocks, coupling_matrix=c)
    u = lambda t: np.array([np.sin(freq * t), np.cos(freq * t)])
    ya, yc = _run_both(coupled, u, "implicit-euler", h=1e-2)
    assert np.max(np.abs(ya - yc)) <= 1e-8
