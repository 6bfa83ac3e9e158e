"""SPICE-like netlist parser, incidence matrices and topological diagnostics.

Grammar (one element per line, element letter case-insensitive, ``*``/``#``
comment lines, ``.END`` terminates)::

    R<name> n+ n- <value>
    C<name> n+ n- <value> [Q=<model>]
    L<name> n+ n- <value> [PHI=<model>]
    V<name> n+ n- DC <v> | SIN <amp> <freq_hz> [<phase_rad>]
    I<name> n+ n- DC <v> | SIN <amp> <freq_hz> [<phase_rad>]
    G<name> n+ n- MODEL <model> <params...>
    E<name> n+ n- <device-id>

Nodes are non-negative integers and ``0`` is ground.  Storage models are
written ``LINEAR`` or ``POLY3:<a3>``; see :mod:`phdae.mna`.

All topology tests are exact graph computations (union-find and spanning
forests); no numerical rank is involved.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ParseError, PreconditionError

KINDS = ("C", "L", "R", "V", "I", "G", "E")

_SUFFIX = {"f": 1e-15, "p": 1e-12, "n": 1e-9, "u": 1e-6, "m": 1e-3, "k": 1e3, "meg": 1e6, "g": 1e9, "t": 1e12}
_NUM = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)(meg|[fpnumkgt])?$", re.IGNORECASE)


def parse_value(token: str) -> float:
    """Parse a number with an optional SPICE scale suffix (``1k``, ``2.2u``, ``1meg``)."""
    m = _NUM.match(token.strip())
    if not m:
        raise ValueError(f"not a number: {token!r}")
    val = float(m.group(1))
    if m.group(2):
        val *= _SUFFIX[m.group(2).lower()]
    return val


@dataclass(frozen=True)
class Source:
    """Independent source waveform: ``DC`` or ``amp * sin(2 pi f t + phase)``."""

    kind: str
    amplitude: float
    frequency: float = 0.0
    phase: float = 0.0

    def __call__(self, t: float) -> float:
        if self.kind == "DC":
            return self.amplitude
        return self.amplitude * math.sin(2 * math.pi * self.frequency * t + self.phase)

    def spec(self) -> str:
        if self.kind == "DC":
            return f"DC {self.amplitude!r}"
        return f"SIN {self.amplitude!r} {self.frequency!r} {self.phase!r}"


@dataclass(frozen=True)
class Branch:
    kind: str
    name: str
    n_plus: int
    n_minus: int
    value: Optional[float] = None
    model: Optional[str] = None
    params: Tuple[float, ...] = ()
    source: Optional[Source] = None
    device: Optional[str] = None

    def line(self) -> str:
        head = f"{self.name} {self.n_plus} {self.n_minus}"
        if self.kind in "RCL":
            tail = repr(self.value)
            if self.model is not None:
                tail += f" {'Q' if self.kind == 'C' else 'PHI'}={self.model}"
            return f"{head} {tail}"
        if self.kind in "VI":
            return f"{head} {self.source.spec()}"
        if self.kind == "G":
            return " ".join([head, "MODEL", self.model] + [repr(p) for p in self.params])
        return f"{head} {self.device}"


@dataclass(frozen=True)
class CircuitGraph:
    """Parsed netlist.  Node ``k`` of the incidence matrices is ``node_labels[k]``."""

    node_labels: Tuple[int, ...]
    branches: Tuple[Branch, ...]

    @property
    def node_count(self) -> int:
        return len(self.node_labels)

    def node_index(self, label: int) -> int:
        """Row index of a node label; ``-1`` for ground."""
        return -1 if label == 0 else self.node_labels.index(label)

    def of_kind(self, kind: str) -> List[Branch]:
        return [b for b in self.branches if b.kind == kind]

    def incidence(self, kinds: str) -> np.ndarray:
        """Reduced incidence matrix (ground row deleted) of the branches in ``kinds``."""
        cols = [b for b in self.branches if b.kind in kinds]
        a = np.zeros((self.node_count, len(cols)))
        for j, b in enumerate(cols):
            p, q = self.node_index(b.n_plus), self.node_index(b.n_minus)
            if p >= 0:
                a[p, j] = 1.0
            if q >= 0:
                a[q, j] = -1.0
        return a

    # "G" branches are nonlinear resistors and share A_R with "R"
    a_c = property(lambda self: self.incidence("C"))
    a_l = property(lambda self: self.incidence("L"))
    a_r = property(lambda self: self.incidence("RG"))
    a_v = property(lambda self: self.incidence("V"))
    a_i = property(lambda self: self.incidence("I"))
    a_e = property(lambda self: self.incidence("E"))

    def names(self, kinds: str) -> List[str]:
        return [b.name for b in self.branches if b.kind in kinds]

    def to_netlist(self) -> str:
        return "\n".join([b.line() for b in self.branches] + [".END"]) + "\n"


def _parse_source(tokens, lineno):
    if not tokens:
        raise ParseError("missing source type (DC or SIN)", lineno)
    kind = tokens[0].upper()
    try:
        nums = [parse_value(t) for t in tokens[1:]]
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None
    if kind == "DC":
        if len(nums) != 1:
            raise ParseError("DC source takes exactly one value", lineno)
        return Source("DC", nums[0])
    if kind == "SIN":
        if len(nums) not in (2, 3):
            raise ParseError("SIN source takes <amp> <freq_hz> [<phase_rad>]", lineno)
        return Source("SIN", nums[0], nums[1], nums[2] if len(nums) == 3 else 0.0)
    raise ParseError(f"unknown source type {tokens[0]!r}", lineno)


def parse(text: str) -> CircuitGraph:
    """Parse netlist source into a :class:`CircuitGraph` (branches in file order)."""
    branches: List[Branch] = []
    seen: Dict[str, int] = {}
    nodes = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "*#":
            continue
        if line.upper() == ".END":
            break
        tok = line.split()
        name = tok[0]
        kind = name[0].upper()
        if kind not in KINDS:
            raise ParseError(f"unknown element class {name[0]!r} in {name!r}", lineno)
        if name.upper() in seen:
            raise ParseError(f"duplicate element name {name!r} (first defined on line {seen[name.upper()]})", lineno)
        if len(tok) < 4:
            raise ParseError(f"{name}: expected at least two nodes and a value", lineno)
        try:
            n_plus, n_minus = int(tok[1]), int(tok[2])
        except ValueError:
            raise ParseError(f"{name}: nodes must be non-negative integers", lineno) from None
        if n_plus < 0 or n_minus < 0:
            raise ParseError(f"{name}: nodes must be non-negative integers", lineno)
        if n_plus == n_minus:
            raise ParseError(f"{name}: branch connects node {n_plus} to itself", lineno)
        rest = tok[3:]
        if kind in "RCL":
            try:
                value = parse_value(rest[0])
            except ValueError as exc:
                raise ParseError(f"{name}: {exc}", lineno) from None
            if not value > 0:
                raise ParseError(f"{name}: value must be positive, got {rest[0]}", lineno)
            model = None
            key = {"C": "Q", "L": "PHI"}.get(kind)
            for extra in rest[1:]:
                k, _, v = extra.partition("=")
                if key is None or k.upper() != key or not v:
                    raise ParseError(f"{name}: unexpected token {extra!r}", lineno)
                model = v
            branch = Branch(kind, name, n_plus, n_minus, value=value, model=model)
        elif kind in "VI":
            branch = Branch(kind, name, n_plus, n_minus, source=_parse_source(rest, lineno))
        elif kind == "G":
            if rest[0].upper() != "MODEL" or len(rest) < 2:
                raise ParseError(f"{name}: expected MODEL <model> <params...>", lineno)
            try:
                params = tuple(parse_value(t) for t in rest[2:])
            except ValueError as exc:
                raise ParseError(f"{name}: {exc}", lineno) from None
            branch = Branch(kind, name, n_plus, n_minus, model=rest[1], params=params)
        else:
            if len(rest) != 1:
                raise ParseError(f"{name}: expected a single device id", lineno)
            branch = Branch(kind, name, n_plus, n_minus, device=rest[0])
        seen[name.upper()] = lineno
        nodes.update((n_plus, n_minus))
        branches.append(branch)
    if not branches:
        raise ParseError("netlist contains no branches")
    if 0 not in nodes:
        raise ParseError("no ground node (node 0) in netlist")
    labels = tuple(sorted(nodes - {0}))
    return CircuitGraph(labels, tuple(branches))


def parse_file(path) -> CircuitGraph:
    with open(path) as fh:
        return parse(fh.read())


# ----------------------------------------------------------------------------
# topology
# ----------------------------------------------------------------------------


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.components = n

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[ra] = rb
        self.components -= 1
        return True


@dataclass
class TopologyReport:
    connected: bool
    v_loop_free: bool
    i_cutset_free: bool
    li_cutset_present: Optional[bool] = None
    cv_loop_present: Optional[bool] = None
    c_loop_present: Optional[bool] = None
    index: Optional[int] = None
    v_loop: Tuple[str, ...] = ()
    i_cutset: Tuple[str, ...] = ()
    li_cutset: Tuple[str, ...] = ()
    cv_loop: Tuple[str, ...] = ()

    @property
    def sound(self) -> bool:
        return self.connected and self.v_loop_free and self.i_cutset_free

    def lines(self) -> List[str]:
        yn = lambda b: "yes" if b else "no"
        out = [
            f"connected: {yn(self.connected)}",
            f"V-loop free: {yn(self.v_loop_free)}" + ("" if self.v_loop_free else f" (V-loop: {', '.join(self.v_loop)})"),
            f"I-cutset free: {yn(self.i_cutset_free)}"
            + ("" if self.i_cutset_free else f" (I-cutset: {', '.join(self.i_cutset)})"),
        ]
        if self.index is None:
            out.append("index: undefined (circuit is not sound)")
            return out
        out.append("LI-cutset: " + (", ".join(self.li_cutset) if self.li_cutset_present else "none"))
        out.append("CV-loop: " + (", ".join(self.cv_loop) if self.cv_loop_present else "none"))
        if self.c_loop_present:
            out.append("C-loop: present (does not raise the index)")
        reasons = []
        if self.cv_loop_present:
            reasons.append("CV-loop: " + ", ".join(self.cv_loop))
        if self.li_cutset_present:
            reasons.append("LI-cutset: " + ", ".join(self.li_cutset))
        out.append(f"index: {self.index}" + (f" ({'; '.join(reasons)})" if reasons else ""))
        return out


def _edges(g: CircuitGraph, kinds: str):
    ground = g.node_count
    idx = lambda lab: ground if lab == 0 else g.node_index(lab)
    return [(idx(b.n_plus), idx(b.n_minus), b.name) for b in g.branches if b.kind in kinds]


def _components(n, edges):
    uf = UnionFind(n)
    for a, b, _ in edges:
        uf.union(a, b)
    return uf


def _cut_witness(n, edges_kept, edges_removed):
    """Names of removed edges leaving the first split-off component of the kept graph."""
    uf = _components(n, edges_kept)
    groups: Dict[int, set] = {}
    for v in range(n):
        groups.setdefault(uf.find(v), set()).add(v)
    for root in sorted(groups, key=lambda r: min(groups[r])):
        s = groups[root]
        cut = tuple(name for a, b, name in edges_removed if (a in s) != (b in s))
        if cut:
            return cut
    return ()


def _forest_path(adj, src, dst):
    """Edge names on the unique forest path ``src -> dst`` (BFS)."""
    prev = {src: None}
    queue = [src]
    while queue:
        v = queue.pop(0)
        if v == dst:
            break
        for w, name in adj.get(v, []):
            if w not in prev:
                prev[w] = (v, name)
                queue.append(w)
    path = []
    v = dst
    while prev.get(v) is not None:
        v, name = prev[v]
        path.append(name)
    return path[::-1]


def _loop_closing(n, first: Sequence, second: Sequence):
    """Insert ``first`` then ``second`` edges into a forest.

    Returns ``(first_closed, witness)`` where ``first_closed`` tells whether
    a ``first`` edge alone closed a cycle and ``witness`` is the first cycle
    closed by a ``second`` edge (closing edge first, then the forest path).
    """
    uf = UnionFind(n)
    adj: Dict[int, list] = {}
    first_closed = False
    for a, b, name in first:
        if uf.union(a, b):
            adj.setdefault(a, []).append((b, name))
            adj.setdefault(b, []).append((a, name))
        else:
            first_closed = True
    for a, b, name in second:
        if uf.find(a) == uf.find(b):
            return first_closed, tuple([name] + _forest_path(adj, a, b))
        uf.union(a, b)
        adj.setdefault(a, []).append((b, name))
        adj.setdefault(b, []).append((a, name))
    return first_closed, ()


def check_soundness(g: CircuitGraph) -> TopologyReport:
    """Connectivity, V-loop and I-cutset tests."""
    n = g.node_count + 1
    all_edges = _edges(g, "".join(KINDS))
    full = _components(n, all_edges)
    connected = len(g.branches) > 0 and full.components == 1
    _, v_loop = _loop_closing(n, [], _edges(g, "V"))
    non_i = [e for e in all_edges if e[2] not in set(g.names("I"))]
    i_free = _components(n, non_i).components == full.components
    i_cut = () if i_free else _cut_witness(n, non_i, _edges(g, "I"))
    return TopologyReport(connected, not v_loop, i_free, v_loop=v_loop, i_cutset=i_cut)


def classify_index(g: CircuitGraph) -> TopologyReport:
    """LI-cutset / CV-loop tests and the resulting index (1 or 2).

    Raises :class:`PreconditionError` on an unsound circuit.
    """
    rep = check_soundness(g)
    if not rep.sound:
        raise PreconditionError("index classification requires a sound circuit (connected, no V-loop, no I-cutset)")
    return _with_index(g, rep)


def _with_index(g, rep):
    n = g.node_count + 1
    all_edges = _edges(g, "".join(KINDS))
    full = _components(n, all_edges)
    kept = _edges(g, "CRVGE")
    li = _components(n, kept).components > full.components
    li_cut = _cut_witness(n, kept, _edges(g, "LI")) if li else ()
    c_loop, cv = _loop_closing(n, _edges(g, "C"), _edges(g, "V"))
    rep.li_cutset_present = li
    rep.li_cutset = li_cut
    rep.cv_loop_present = bool(cv)
    rep.cv_loop = cv
    rep.c_loop_present = c_loop
    rep.index = 2 if (li or cv) else 1
    return rep


def analyze(g: CircuitGraph) -> TopologyReport:
    """Soundness report, plus index fields when the circuit is sound."""
    rep = check_soundness(g)
    return _with_index(g, rep) if rep.sound else rep
