import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phdae import netlist
from phdae.errors import ParseError, PreconditionError

from conftest import bench

CORPUS = {
    "rc": 1,
    "series_rlc": 1,
    "cv_loop": 2,
    "c_loop": 1,
    "li_cutset": 2,
    "v_loop": None,
}


# brute-force oracles over edge subsets ------------------------------------


def _nodes(branches):
    return sorted({b.n_plus for b in branches} | {b.n_minus for b in branches} | {0})


def _connected(nodes, branches):
    adj = {v: set() for v in nodes}
    for b in branches:
        adj[b.n_plus].add(b.n_minus)
        adj[b.n_minus].add(b.n_plus)
    seen, stack = {nodes[0]}, [nodes[0]]
    while stack:
        for w in adj[stack.pop()]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == len(nodes)


def _subsets(items):
    for k in range(1, len(items) + 1):
        yield from itertools.combinations(items, k)


def _even_subgraph(edges):
    # a nonempty edge set with all even degrees contains a loop
    deg = {}
    for b in edges:
        deg[b.n_plus] = deg.get(b.n_plus, 0) + 1
        deg[b.n_minus] = deg.get(b.n_minus, 0) + 1
    return all(d % 2 == 0 for d in deg.values())


def brute_loop(branches, kinds, must_contain=None):
    pool = [b for b in branches if b.kind in kinds]
    for s in _subsets(pool):
        if _even_subgraph(s) and (must_contain is None or any(b.kind in must_contain for b in s)):
            return True
    return False


def brute_cutset(branches, kinds):
    nodes = _nodes(branches)
    pool = [b for b in branches if b.kind in kinds]
    for s in _subsets(pool):
        rest = [b for b in branches if b not in s]
        if not _connected(nodes, rest):
            return True
    return False


def brute_index(g):
    br = list(g.branches)
    if not _connected(_nodes(br), br) or brute_loop(br, "V") or brute_cutset(br, "I"):
        return None
    cv = brute_loop(br, "CV", must_contain="V")
    li = brute_cutset(br, "LI")
    return 2 if (cv or li) else 1


# corpus -----------------------------------------------------------------------


@pytest.mark.parametrize("name,expected", sorted(CORPUS.items()))
def test_corpus_index(name, expected):
    g = netlist.parse_file(bench("corpus", f"{name}.net"))
    rep = netlist.analyze(g)
    assert rep.index == expected
    assert rep.sound == (expected is not None)
    assert brute_index(g) == expected


def test_corpus_witnesses():
    cv = netlist.analyze(netlist.parse_file(bench("corpus", "cv_loop.net")))
    assert "index: 2 (CV-loop: V1, C1)" in cv.lines()
    li = netlist.analyze(netlist.parse_file(bench("corpus", "li_cutset.net")))
    assert "index: 2 (LI-cutset: I1, L1)" in li.lines()
    vl = netlist.analyze(netlist.parse_file(bench("corpus", "v_loop.net")))
    assert not vl.v_loop_free
    assert set(vl.v_loop) == {"V1", "V2"}
    assert "index: undefined (circuit is not sound)" in vl.lines()
    cl = netlist.analyze(netlist.parse_file(bench("corpus", "c_loop.net")))
    assert cl.c_loop_present and not cl.cv_loop_present


def test_classify_rejects_unsound():
    with pytest.raises(PreconditionError):
        netlist.classify_index(netlist.parse_file(bench("corpus", "v_loop.net")))


def test_rc_incidence():
    g = netlist.parse_file(bench("corpus", "rc.net"))
    np.testing.assert_array_equal(g.a_r, [[1.0], [-1.0]])
    np.testing.assert_array_equal(g.a_c, [[0.0], [1.0]])
    np.testing.assert_array_equal(g.a_v, [[1.0], [0.0]])
    assert g.branches[1].value == pytest.approx(1e3)
    assert g.branches[2].value == pytest.approx(1e-6)


def test_i_cutset_and_disconnected():
    rep = netlist.analyze(netlist.parse("I1 1 0 DC 1\nR1 1 2 1\nC1 2 1 1"))
    assert not rep.i_cutset_free
    assert rep.i_cutset == ("I1",)
    rep = netlist.analyze(netlist.parse("R1 1 0 1\nR2 2 3 1"))
    assert not rep.connected and rep.index is None


def test_values_and_suffixes():
    assert netlist.parse_value("1meg") == 1e6
    assert netlist.parse_value("2.2u") == pytest.approx(2.2e-6)
    assert netlist.parse_value("3K") == 3e3
    assert netlist.parse_value("-1e-3") == -1e-3
    with pytest.raises(ValueError):
        netlist.parse_value("1x")


def test_sources():
    g = netlist.parse("V1 1 0 SIN 2 5 0.5\nI1 0 1 DC 3\nR1 1 0 1")
    v, i = g.of_kind("V")[0].source, g.of_kind("I")[0].source
    assert v(0.1) == pytest.approx(2 * np.sin(2 * np.pi * 5 * 0.1 + 0.5))
    assert i(7.0) == 3.0


def test_comments_and_end():
    g = netlist.parse("* title\n# note\n\nR1 1 0 1\n.END\nR2 junk")
    assert g.names("R") == ["R1"]


@pytest.mark.parametrize(
    "text,line,fragment",
    [
        ("R1 1 0 1\nX1 1 0 1", 2, "unknown element class"),
        ("R1 1 0 1\nr1 1 0 2", 2, "duplicate"),
        ("R1 1 0", 1, "at least two nodes"),
        ("R1 a 0 1", 1, "non-negative integers"),
        ("R1 -1 0 1", 1, "non-negative integers"),
        ("R1 1 1 1", 1, "itself"),
        ("R1 1 0 1\nC1 1 0 -2", 2, "positive"),
        ("V1 1 0 AC 1", 1, "unknown source type"),
        ("V1 1 0 DC", 1, "exactly one value"),
        ("G1 1 0 1", 1, "MODEL"),
        ("C1 1 0 1 foo", 1, "unexpected token"),
    ],
)
def test_parse_errors(text, line, fragment):
    with pytest.raises(ParseError) as info:
        netlist.parse(text)
    assert info.value.line == line
    assert fragment in str(info.value)


def test_missing_ground():
    with pytest.raises(ParseError, match="no ground node"):
        netlist.parse("R1 1 2 1\nC1 2 1 1")
    with pytest.raises(ParseError, match="no branches"):
        netlist.parse("* empty\n")


# properties ---------------------------------------------------------------------

KIND_LINES = {
    "R": "{n} {a} {b} {v}",
    "C": "{n} {a} {b} {v}",
    "L": "{n} {a} {b} {v}",
    "V": "{n} {a} {b} SIN {v} 2",
    "I": "{n} {a} {b} DC {v}",
    "G": "{n} {a} {b} MODEL POLY3 {v} 0.5",
}


@st.composite
def netlists(draw, kinds="RCLVIG", max_nodes=4, max_branches=6):
    n_br = draw(st.integers(1, max_branches))
    lines = []
    for k in range(n_br):
        kind = draw(st.sampled_from(kinds))
        a = draw(st.integers(0, max_nodes))
        b = draw(st.integers(0, max_nodes).filter(lambda x: x != a))
        v = draw(st.floats(0.1, 10.0))
        lines.append(KIND_LINES[kind].format(n=f"{kind}{k}", a=a, b=b, v=v))
    if all(" 0 " not in f" {ln} " for ln in lines):
        lines.append(f"R{n_br} 1 0 1")
    return "\n".join(lines)


@settings(max_examples=200, deadline=None)
@given(netlists())
def test_index_matches_brute_force(text):
    g = netlist.parse(text)
    assert netlist.analyze(g).index == brute_index(g)


@settings(max_examples=100, deadline=None)
@given(netlists())
def test_round_trip(text):
    g = netlist.parse(text)
    assert netlist.parse(g.to_netlist()) == g


@settings(max_examples=100, deadline=None)
@given(netlists())
def test_incidence_columns(text):
    g = netlist.parse(text)
    full = g.incidence("".join(netlist.KINDS))
    for col, b in zip(full.T, g.branches):
        # +1 / -1 entries; the ground entry is the deleted row
        assert set(np.unique(col)) <= {-1.0, 0.0, 1.0}
        expected = (b.n_plus != 0) - (b.n_minus != 0)
        assert col.sum() == expected
        assert np.count_nonzero(col) == (b.n_plus != 0) + (b.n_minus != 0)
