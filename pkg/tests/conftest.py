import os

import numpy as np
import pytest

from phdae import coupler, fit, mna, netlist

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
BENCH = os.path.join(ROOT, "benchmarks")


def bench(*parts):
    return os.path.join(BENCH, *parts)


def circuit(text, **kw):
    g = netlist.parse(text)
    return g, mna.assemble(g, **kw), mna.source_function(g)


def toy_device(sigma=0.1, name="dev"):
    grid = fit.build_grid((2, 2, 1))
    return fit.assemble_device(grid, sigma=sigma, port_edges=[fit.path_edges(grid, "z", (1, 1, 0), 1)], name=name)


TOY_NETLIST = "V1 1 0 SIN 1 1\nR1 1 2 1\nL1 2 3 1\nE1 3 0 dev\n"


def toy_coupling(source=True, sigma=0.1, scale=1.0):
    text = TOY_NETLIST if source else TOY_NETLIST.replace("SIN 1 1", "DC 0")
    g = netlist.parse(text)
    circ = coupler.extend_circuit(g)
    dev = toy_device(sigma)
    return g, coupler.couple(circ, dev, coupling_scale=scale), dev


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


BLOCK_A = "V1 1 0 SIN 1 1\nR1 1 2 1\nL1 2 3 1\nE1 3 0 p\n"
BLOCK_B = "I1 0 1 SIN 0.5 2\nR1 1 2 2\nC1 2 0 0.5\nE1 1 0 p\n"


def two_block_benchmark(skew=True):
    """Two linear circuit blocks joined through their field ports by a gyrator."""
    from phdae.interconnect import CoupledSystem, PortSplit

    blocks, sources = [], []
    for text in (BLOCK_A, BLOCK_B):
        g = netlist.parse(text)
        sys = mna.assemble(g, field_ports=True)
        blocks.append((sys, PortSplit.from_labels(sys)))
        sources.append(mna.source_function(g))
    c = np.array([[0.0, 1.0], [-1.0, 0.0]]) if skew else np.array([[0.0, 1.0], [1.0, 0.0]])
    return CoupledSystem(blocks, coupling_matrix=c), sources


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record(criterion, ok, detail):
    ACCEPTANCE[criterion] = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[criterion])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
