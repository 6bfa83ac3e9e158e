import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from phdae.core import PhDaeSystem, energy_audit
from phdae.errors import InitializationError, IntegrationError
from phdae.integrators import (
    SolverConfig,
    algebraic_equations,
    consistent_init,
    integrate,
    lie_trotter_demo,
    pencil_regularity,
)

from conftest import circuit

SPLIT_E = np.diag([1.0, 0.0, 1.0])
SPLIT_J = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
SPLIT_R = np.diag([0.0, 1.0, 1.0])
SPLIT_X0 = np.array([1.0, -1.0, 0.0])


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(h=0.0, t_end=1.0)
    with pytest.raises(ValueError):
        SolverConfig(h=2.0, t_end=1.0)
    with pytest.raises(ValueError):
        SolverConfig(h=0.1, t_end=1.0, scheme="rk4")
    with pytest.raises(ValueError):
        SolverConfig(h=0.1, t_end=1.0, newton_tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(h=0.3, t_end=1.0).n_steps
    assert SolverConfig(h=0.1, t_end=1.0).n_steps == 10


def test_consistent_init_rc_matches_direct_solve():
    # V1 = 2 at node 1, R1 between 1 and 2, C1 = 0.5 at node 2
    _, sys, u = circuit("V1 1 0 DC 2\nR1 1 2 1\nC1 2 0 0.5")
    q = 0.3
    x0 = consistent_init(sys, np.array([q, 0.0, 0.0, 0.0]), u(0.0))
    # direct: e2 = q / C, e1 = 2, resistor current flows out of the source
    e1, e2 = 2.0, q / 0.5
    j_v = -(e1 - e2) / 1.0
    np.testing.assert_allclose(x0, [q, e1, e2, j_v], atol=1e-12)
    w, _ = algebraic_equations(sys.e_matrix)
    z = sys.effort_fn(x0)
    res = w @ (sys.j_matrix @ z - sys.resistive_fn(z) + sys.b_matrix @ u(0.0))
    assert np.max(np.abs(res)) <= 1e-12


def test_consistent_init_cv_loop_reports_constraint():
    _, sys, u = circuit("V1 1 0 DC 1\nC1 1 0 1")
    with pytest.raises(InitializationError) as info:
        consistent_init(sys, np.array([2.0, 0.0, 0.0]), u(0.0))
    err = info.value
    assert err.violations
    assert "hidden constraint" in str(err)
    # the consistent charge passes
    x0 = consistent_init(sys, np.array([1.0, 0.0, 0.0]), u(0.0))
    assert x0[1] == pytest.approx(1.0)


def test_consistent_init_ode_identity():
    sys = PhDaeSystem.linear(np.eye(2), [[0, -1], [1, 0]], np.zeros((2, 2)), np.eye(2), np.zeros((2, 0)))
    guess = np.array([0.7, -0.2])
    np.testing.assert_array_equal(consistent_init(sys, guess), guess)


def test_consistent_init_index1_from_arbitrary_storage(rng):
    _, sys, u = circuit("V1 1 0 SIN 1 1\nR1 1 2 1\nL1 2 3 1\nC1 3 0 0.25\nR2 3 0 2")
    for _ in range(5):
        guess = np.zeros(sys.dim_state)
        guess[:2] = rng.standard_normal(2)
        x0 = consistent_init(sys, guess, u(0.0))
        np.testing.assert_array_equal(x0[:2], guess[:2])


def test_lc_midpoint_conserves_and_tracks_analytic():
    _, sys, _ = circuit("C1 1 0 1\nL1 1 0 1")
    x0 = consistent_init(sys, np.array([1.0, 0.0, 0.0]))
    traj = integrate(sys, SolverConfig(h=1e-3, t_end=10.0, scheme="midpoint"), x0)
    led = energy_audit(sys, traj)
    ham = led.hamiltonian_samples
    assert np.max(np.abs(ham - ham[0])) <= 1e-10 * ham[0]
    # q(t) = cos t for the unit LC tank (midpoint phase error ~ t h^2 / 12)
    assert np.max(np.abs(traj.states[0] - np.cos(traj.times))) < 1e-5


def test_lc_implicit_euler_damps():
    _, sys, _ = circuit("C1 1 0 1\nL1 1 0 1")
    x0 = consistent_init(sys, np.array([1.0, 0.0, 0.0]))
    traj = integrate(sys, SolverConfig(h=1e-2, t_end=2.0, scheme="implicit-euler"), x0)
    ham = energy_audit(sys, traj).hamiltonian_samples
    assert np.all(np.diff(ham) < 0)


def _rlc_exact(t, r, l, c):
    a = r / (2 * l)
    wd = np.sqrt(1 / (l * c) - a * a)
    i = np.exp(-a * t) * np.sin(wd * t) / (l * wd)
    vc = 1 - np.exp(-a * t) * (np.cos(wd * t) + a / wd * np.sin(wd * t))
    return i, vc


def _rlc_error(n_steps, scheme="midpoint", t_end=10.0):
    r, l, c = 1.0, 1.0, 0.25
    _, sys, u = circuit(f"V1 1 0 DC 1\nR1 1 2 {r}\nL1 2 3 {l}\nC1 3 0 {c}")
    x0 = consistent_init(sys, np.zeros(sys.dim_state), u(0.0))
    traj = integrate(sys, SolverConfig(h=t_end / n_steps, t_end=t_end, scheme=scheme), x0, u)
    i, vc = _rlc_exact(traj.times, r, l, c)
    return max(np.max(np.abs(traj.states[1] / l - i)), np.max(np.abs(traj.states[0] / c - vc)))


def test_rlc_midpoint_second_order():
    e1, e2 = _rlc_error(500), _rlc_error(1000)
    assert 3.5 <= e1 / e2 <= 4.5


def test_rlc_implicit_euler_first_order():
    e1, e2 = _rlc_error(500, "implicit-euler"), _rlc_error(1000, "implicit-euler")
    assert 1.7 <= e1 / e2 <= 2.3


def test_nonlinear_discrete_gradient_balance():
    text = (
        "V1 1 0 SIN 2 1\nG1 1 2 MODEL POLY3 1 0.5\nL1 2 3 0.5 PHI=POLY3:0.3\n"
        "C1 3 0 0.2 Q=POLY3:0.7\nC2 2 0 1 Q=POLY3:2"
    )
    _, sys, u = circuit(text)
    x0 = consistent_init(sys, np.zeros(sys.dim_state), u(0.0))
    cfg = SolverConfig(h=1e-2, t_end=2.0, scheme="discrete-gradient")
    traj = integrate(sys, cfg, x0, u)
    led = energy_audit(sys, traj)
    bound = 10 * cfg.newton_tol * (1 + np.max(np.abs(led.hamiltonian_samples)))
    assert led.max_step_residual <= bound
    # the midpoint rule does not balance exactly for non-quadratic energies
    mid = integrate(sys, SolverConfig(h=1e-2, t_end=2.0, scheme="midpoint"), x0, u)
    assert energy_audit(sys, mid).max_step_residual > 100 * bound


def test_fd_jacobian_agrees_with_analytic():
    _, sys, u = circuit("V1 1 0 SIN 1 1\nG1 1 2 MODEL POLY3 1 1\nL1 2 0 1 PHI=POLY3:0.5")
    x0 = consistent_init(sys, np.zeros(sys.dim_state), u(0.0))
    a = integrate(sys, SolverConfig(h=1e-2, t_end=0.5), x0, u)
    b = integrate(sys, SolverConfig(h=1e-2, t_end=0.5, jacobian="fd"), x0, u)
    np.testing.assert_allclose(a.states, b.states, atol=1e-10)


def test_newton_failure_reports_time():
    sys = PhDaeSystem(
        e_matrix=np.eye(1),
        j_matrix=np.zeros((1, 1)),
        b_matrix=np.zeros((1, 0)),
        effort_fn=lambda x: np.exp(40 * x),
        resistive_fn=lambda z: -z,
        hamiltonian_fn=lambda x: float(np.exp(40 * x[0]) / 40),
        hamiltonian_grad_fn=lambda x: np.exp(40 * x),
    )
    with pytest.raises(IntegrationError) as info, np.errstate(all="ignore"):
        integrate(sys, SolverConfig(h=1.0, t_end=3.0, scheme="implicit-euler", max_newton=5), np.array([1.0]))
    assert info.value.time is not None


def test_index2_cv_loop_integrates():
    _, sys, u = circuit("V1 1 0 SIN 1 1\nC1 1 0 1\nR1 1 0 1")
    x0 = consistent_init(sys, np.zeros(sys.dim_state), u(0.0))
    traj = integrate(sys, SolverConfig(h=1e-3, t_end=0.5, scheme="implicit-euler"), x0, u)
    # q_C follows the source voltage
    np.testing.assert_allclose(traj.states[0], np.sin(2 * np.pi * traj.times), atol=1e-12)


def test_pencil_trivial_cases():
    a = np.random.default_rng(0).standard_normal((4, 4))
    assert pencil_regularity(np.eye(4), a).regular
    assert not pencil_regularity(np.zeros((3, 3)), np.zeros((3, 3))).regular
    assert str(pencil_regularity(np.zeros((2, 2)), np.zeros((2, 2)))) == "singular"
    with pytest.raises(ValueError):
        pencil_regularity(np.eye(2), np.eye(3))


def test_pencil_splitting_example():
    for a in (SPLIT_J, -SPLIT_R, SPLIT_J - SPLIT_R):
        rep = pencil_regularity(SPLIT_E, a)
        assert rep.regular
        assert rep.lambdas.size == 7


def _symbolic_regular(e, a):
    lam = sympy.Symbol("lam")
    det = (lam * sympy.Matrix(e.astype(int)) - sympy.Matrix(a.astype(int))).det()
    return sympy.expand(det) != 0


pencil_entries = arrays(np.int64, (3, 3), elements=st.integers(-2, 2))


@settings(max_examples=60, deadline=None)
@given(pencil_entries, pencil_entries, st.sampled_from(["free", "common-kernel", "rank-one"]))
def test_pencil_matches_symbolic_determinant(e, a, kind):
    if kind == "common-kernel":
        # a shared null vector makes det(lambda E - A) identically zero
        e[:, 0] = 0
        a[:, 0] = 0
    elif kind == "rank-one":
        e = np.outer(e[:, 0], e[0])
        a = np.outer(e[:, 0], a[0])
    assert pencil_regularity(e.astype(float), a.astype(float)).regular == _symbolic_regular(e, a)


def test_lie_trotter_counterexample():
    rep = lie_trotter_demo(SPLIT_E, SPLIT_J, SPLIT_R, SPLIT_X0, h=0.1)
    assert all(p.regular for p in rep.pencils.values())
    assert set(rep.pencils) == {"{E, J}", "{E, R}", "{E, J-R}"}
    sub1, sub2 = rep.substeps
    assert not sub1.consistent
    assert "x₁ ≡ 0 ≠ 1" in sub1.message
    assert sub2.consistent
    assert rep.unsplit.consistent
    assert rep.composed is None
    text = "\n".join(rep.lines())
    assert "INCONSISTENT" in text


def test_lie_trotter_ode_case_first_order():
    j = np.array([[0.0, -1.0], [1.0, 0.0]])
    r = np.diag([0.3, 0.1])
    x0 = np.array([1.0, 0.0])
    t_end = 1.0
    from scipy.linalg import expm

    exact = expm((j - r) * t_end) @ x0
    errs = []
    for steps in (50, 100):
        rep = lie_trotter_demo(np.eye(2), j, r, x0, h=t_end / steps, steps=steps)
        assert rep.substeps[0].consistent and rep.substeps[1].consistent
        errs.append(np.max(np.abs(rep.composed - exact)))
    assert 1.7 <= errs[0] / errs[1] <= 2.3
