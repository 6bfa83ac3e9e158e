"""Finite integration technique on a uniform staggered hexahedral grid.

Numbering is canonical: x-edges, then y-edges, then z-edges, each block
lexicographic in ``(i, j, k)`` (``k`` fastest).  Facets are numbered by
their normal direction in the same way, cells and nodes lexicographically.

The device state is ``(h, e)``: magnetic mesh voltages on the (dual edges
through the) retained primary facets and electric mesh voltages on the
retained primary edges.  With a PEC boundary the tangential boundary
edges are removed, together with facets that no retained edge bounds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .core import PhDaeSystem
from .errors import ParseError, StructureError

AXES = "xyz"


def _unit(axis):
    u = [0, 0, 0]
    u[axis] = 1
    return tuple(u)


@dataclass(frozen=True)
class FitGrid:
    dims: Tuple[int, int, int]
    spacings: Tuple[float, float, float]
    grad_matrix: sp.csr_matrix
    curl_matrix: sp.csr_matrix
    div_matrix: sp.csr_matrix

    @property
    def n_nodes(self):
        return int(np.prod([d + 1 for d in self.dims]))

    @property
    def n_edges(self):
        return sum(int(np.prod(self.edge_shape(a))) for a in range(3))

    @property
    def n_facets(self):
        return sum(int(np.prod(self.facet_shape(a))) for a in range(3))

    @property
    def n_cells(self):
        return int(np.prod(self.dims))

    def edge_shape(self, axis):
        n = list(self.dims)
        return tuple(n[a] if a == axis else n[a] + 1 for a in range(3))

    def facet_shape(self, axis):
        n = list(self.dims)
        return tuple(n[a] + 1 if a == axis else n[a] for a in range(3))

    def edge_offset(self, axis):
        return sum(int(np.prod(self.edge_shape(a))) for a in range(axis))

    def facet_offset(self, axis):
        return sum(int(np.prod(self.facet_shape(a))) for a in range(axis))

    def edge(self, axis, i, j, k) -> int:
        return self.edge_offset(axis) + int(np.ravel_multi_index((i, j, k), self.edge_shape(axis)))

    def facet(self, axis, i, j, k) -> int:
        return self.facet_offset(axis) + int(np.ravel_multi_index((i, j, k), self.facet_shape(axis)))

    def edge_position(self, idx) -> Tuple[int, Tuple[int, int, int]]:
        for axis in range(3):
            size = int(np.prod(self.edge_shape(axis)))
            if idx < size:
                return axis, tuple(int(v) for v in np.unravel_index(idx, self.edge_shape(axis)))
            idx -= size
        raise IndexError("edge index out of range")

    def boundary_edges(self) -> np.ndarray:
        """Mask of edges lying in the outer surface of the domain."""
        mask = np.zeros(self.n_edges, dtype=bool)
        for axis in range(3):
            shp = self.edge_shape(axis)
            idx = np.indices(shp).reshape(3, -1)
            on = np.zeros(idx.shape[1], dtype=bool)
            for a in range(3):
                if a != axis:
                    on |= (idx[a] == 0) | (idx[a] == self.dims[a])
            off = self.edge_offset(axis)
            mask[off : off + on.size] = on
        return mask

    def edge_lengths(self) -> np.ndarray:
        return np.concatenate([np.full(int(np.prod(self.edge_shape(a))), self.spacings[a]) for a in range(3)])

    def facet_areas(self) -> np.ndarray:
        d = self.spacings
        return np.concatenate(
            [np.full(int(np.prod(self.facet_shape(a))), d[(a + 1) % 3] * d[(a + 2) % 3]) for a in range(3)]
        )


def build_grid(dims, spacings=(1.0, 1.0, 1.0)) -> FitGrid:
    """Assemble the grid incidence operators ``G`` (edges x nodes),
    ``C`` (facets x edges) and ``S`` (cells x facets)."""
    dims = tuple(int(d) for d in dims)
    spacings = tuple(float(s) for s in spacings)
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"dims must be three integers >= 1, got {dims}")
    if len(spacings) != 3 or not min(spacings) > 0:
        raise ValueError(f"spacings must be three positive reals, got {spacings}")
    nx, ny, nz = dims
    node_shape = (nx + 1, ny + 1, nz + 1)
    node = lambda i, j, k: int(np.ravel_multi_index((i, j, k), node_shape))
    grid = FitGrid(dims, spacings, None, None, None)

    rows, cols, vals = [], [], []
    for axis in range(3):
        for ijk in np.ndindex(*grid.edge_shape(axis)):
            e = grid.edge(axis, *ijk)
            nxt = tuple(np.add(ijk, _unit(axis)))
            rows += [e, e]
            cols += [node(*ijk), node(*nxt)]
            vals += [-1, 1]
    grad = sp.csr_matrix((vals, (rows, cols)), shape=(grid.n_edges, grid.n_nodes), dtype=np.int64)

    rows, cols, vals = [], [], []
    for axis in range(3):
        a, b = (axis + 1) % 3, (axis + 2) % 3
        for ijk in np.ndindex(*grid.facet_shape(axis)):
            f = grid.facet(axis, *ijk)
            # boundary of the (a, b) facet, counter-clockwise about the normal
            for eax, shift, sgn in ((a, _unit(b), -1), (b, (0, 0, 0), -1), (a, (0, 0, 0), 1), (b, _unit(a), 1)):
                rows.append(f)
                cols.append(grid.edge(eax, *np.add(ijk, shift)))
                vals.append(sgn)
    curl = sp.csr_matrix((vals, (rows, cols)), shape=(grid.n_facets, grid.n_edges), dtype=np.int64)

    rows, cols, vals = [], [], []
    cell_shape = dims
    for ijk in np.ndindex(*cell_shape):
        c = int(np.ravel_multi_index(ijk, cell_shape))
        for axis in range(3):
            rows += [c, c]
            cols += [grid.facet(axis, *ijk), grid.facet(axis, *np.add(ijk, _unit(axis)))]
            vals += [-1, 1]
    div = sp.csr_matrix((vals, (rows, cols)), shape=(nx * ny * nz, grid.n_facets), dtype=np.int64)
    return FitGrid(dims, spacings, grad, curl, div)


# ----------------------------------------------------------------------------
# materials and device assembly
# ----------------------------------------------------------------------------


def _per_cell(value, grid: FitGrid, name) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float)).reshape(-1)
    ncell = int(np.prod(grid.dims))
    if arr.size == 1:
        arr = np.full(ncell, arr[0])
    if arr.size != ncell:
        raise StructureError(f"{name}: expected 1 or {ncell} per-cell values, got {arr.size}")
    return arr.reshape(grid.dims)


def _edge_material(grid: FitGrid, cell_vals: np.ndarray) -> np.ndarray:
    """``sum over adjacent cells of value * (dual facet quarter area) / edge length``."""
    out = np.zeros(grid.n_edges)
    d = grid.spacings
    for axis in range(3):
        a, b = (axis + 1) % 3, (axis + 2) % 3
        quarter = d[a] * d[b] / 4.0 / d[axis]
        for ijk in np.ndindex(*grid.edge_shape(axis)):
            acc = 0.0
            for sa in (-1, 0):
                for sb in (-1, 0):
                    c = list(ijk)
                    c[a] += sa
                    c[b] += sb
                    if all(0 <= c[t] < grid.dims[t] for t in range(3)):
                        acc += cell_vals[tuple(c)]
            out[grid.edge(axis, *ijk)] = acc * quarter
    return out


def _facet_material(grid: FitGrid, cell_vals: np.ndarray) -> np.ndarray:
    """``area / sum over adjacent cells of (half dual edge) / value`` (series reluctance)."""
    out = np.zeros(grid.n_facets)
    d = grid.spacings
    for axis in range(3):
        a, b = (axis + 1) % 3, (axis + 2) % 3
        area = d[a] * d[b]
        for ijk in np.ndindex(*grid.facet_shape(axis)):
            rel = 0.0
            for s in (-1, 0):
                c = list(ijk)
                c[axis] += s
                if 0 <= c[axis] < grid.dims[axis]:
                    rel += 0.5 * d[axis] / cell_vals[tuple(c)]
            out[grid.facet(axis, *ijk)] = area / rel
    return out


@dataclass(frozen=True)
class FitDevice:
    grid: FitGrid
    edges: np.ndarray  # retained global edge indices
    facets: np.ndarray  # retained global facet indices
    curl: np.ndarray  # restricted curl, retained facets x retained edges
    m_eps: np.ndarray
    m_mu: np.ndarray
    m_sigma: np.ndarray
    port_matrix: np.ndarray
    system: PhDaeSystem
    name: str = "device"

    @property
    def n_h(self):
        return self.facets.size

    @property
    def n_e(self):
        return self.edges.size

    @property
    def n_ports(self):
        return self.port_matrix.shape[1]


def path_edges(grid: FitGrid, axis, start, stop) -> List[Tuple[int, int]]:
    """Signed edges of the straight path from node ``start`` to ``stop`` along ``axis``."""
    ax = AXES.index(axis) if isinstance(axis, str) else int(axis)
    start, stop = list(start), int(stop)
    sgn = 1 if stop >= start[ax] else -1
    lo, hi = sorted((start[ax], stop))
    out = []
    for t in range(lo, hi):
        ijk = list(start)
        ijk[ax] = t
        out.append((grid.edge(ax, *ijk), sgn))
    return out


def assemble_device(
    grid: FitGrid,
    eps=1.0,
    mu=1.0,
    sigma=0.0,
    port_edges: Sequence[Sequence[Tuple[int, int]]] = (),
    pec: bool = True,
    name: str = "device",
) -> FitDevice:
    """Maxwell grid equations as a linear PH-DAE.

    ``port_edges`` holds one list of ``(edge_index, sign)`` pairs per port;
    the port column is the signed indicator of those edges.
    """
    eps_c = _per_cell(eps, grid, "eps")
    mu_c = _per_cell(mu, grid, "mu")
    sig_c = _per_cell(sigma, grid, "sigma")
    if eps_c.min() <= 0 or mu_c.min() <= 0:
        raise StructureError("eps and mu must be positive in every cell")
    if sig_c.min() < 0:
        raise StructureError("sigma must be non-negative in every cell")

    boundary = grid.boundary_edges()
    edges = np.flatnonzero(~boundary) if pec else np.arange(grid.n_edges)
    curl_full = grid.curl_matrix.tocsc()[:, edges].tocsr()
    if pec:
        facets = np.flatnonzero(np.diff(curl_full.indptr) > 0)
    else:
        facets = np.arange(grid.n_facets)
    curl = curl_full[facets].toarray().astype(float)

    m_eps = _edge_material(grid, eps_c)[edges]
    m_sig = _edge_material(grid, sig_c)[edges]
    m_mu = _facet_material(grid, mu_c)[facets]

    pos = {int(e): r for r, e in enumerate(edges)}
    x_s = np.zeros((edges.size, len(port_edges)))
    for p, plist in enumerate(port_edges):
        if not plist:
            raise StructureError(f"port {p}: empty edge list")
        for e, s in plist:
            if e < 0 or e >= grid.n_edges:
                raise StructureError(f"port {p}: edge {e} out of range")
            if e not in pos:
                raise StructureError(f"port {p}: edge {e} lies on the PEC boundary; ports must use interior edges")
            if s not in (1, -1):
                raise StructureError(f"port {p}: edge sign must be +1 or -1, got {s}")
            x_s[pos[e], p] = s

    nh, ne = facets.size, edges.size
    n = nh + ne
    e_mat = np.diag(np.concatenate([m_mu, m_eps]))
    j_mat = np.zeros((n, n))
    j_mat[:nh, nh:] = -curl
    j_mat[nh:, :nh] = curl.T
    r_mat = np.diag(np.concatenate([np.zeros(nh), m_sig]))
    b_mat = np.zeros((n, len(port_edges)))
    b_mat[nh:] = x_s
    labels = tuple(f"h:{f}" for f in facets) + tuple(f"e:{e}" for e in edges)
    ports = tuple(f"port:{name}{p}" if len(port_edges) > 1 else f"port:{name}" for p in range(len(port_edges)))
    system = PhDaeSystem.linear(e_mat, j_mat, r_mat, np.eye(n), b_mat, state_labels=labels, port_labels=ports)
    return FitDevice(grid, edges, facets, curl, m_eps, m_mu, m_sig, x_s, system, name)


# ----------------------------------------------------------------------------
# device files
# ----------------------------------------------------------------------------


@dataclass
class DeviceSpec:
    name: str = "device"
    dims: Tuple[int, int, int] = (1, 1, 1)
    spacings: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    eps: object = 1.0
    mu: object = 1.0
    sigma: object = 0.0
    pec: bool = True
    ports: List[list] = None

    def build(self) -> FitDevice:
        grid = build_grid(self.dims, self.spacings)
        ports = []
        for p in self.ports or []:
            if p[0] == "path":
                _, axis, start, stop = p
                if not all(0 <= start[a] <= grid.dims[a] for a in range(3)):
                    raise StructureError(f"port path start {start} outside the grid")
                ports.append(path_edges(grid, axis, start, stop))
            else:
                ports.append(p[1])
        return assemble_device(grid, self.eps, self.mu, self.sigma, ports, pec=self.pec, name=self.name)


def parse_device(text: str) -> DeviceSpec:
    """Parse a ``key = value`` device description.

    Keys: ``id``, ``dims``, ``spacings``, ``eps``, ``mu``, ``sigma``
    (one value or one per cell), ``pec`` (true/false) and repeatable
    ``port``, either ``port = path <axis> <i> <j> <k> <stop>`` or
    ``port = edges <+idx> <-idx> ...``.
    """
    spec = DeviceSpec(ports=[])
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, tok = key.strip().lower(), val.split()
        try:
            if key == "id":
                spec.name = tok[0]
            elif key == "dims":
                spec.dims = tuple(int(t) for t in tok)
                if len(spec.dims) != 3:
                    raise ValueError("dims takes three integers")
            elif key == "spacings":
                spec.spacings = tuple(float(t) for t in tok)
                if len(spec.spacings) != 3:
                    raise ValueError("spacings takes three reals")
            elif key in ("eps", "mu", "sigma"):
                vals = [float(t) for t in tok]
                setattr(spec, key, vals[0] if len(vals) == 1 else np.array(vals))
            elif key == "pec":
                if tok[0].lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(f"pec must be true or false, got {tok[0]!r}")
                spec.pec = tok[0].lower() in ("true", "1", "yes")
            elif key == "port":
                if tok[0].lower() == "path":
                    axis = tok[1].lower()
                    if axis not in AXES or len(tok) != 6:
                        raise ValueError("port path takes <axis> <i> <j> <k> <stop>")
                    spec.ports.append(["path", axis, tuple(int(t) for t in tok[2:5]), int(tok[5])])
                elif tok[0].lower() == "edges":
                    pairs = []
                    for t in tok[1:]:
                        if t[0] not in "+-":
                            raise ValueError(f"edge {t!r} needs an explicit sign")
                        pairs.append((int(t[1:]), 1 if t[0] == "+" else -1))
                    spec.ports.append(["edges", pairs])
                else:
                    raise ValueError(f"unknown port form {tok[0]!r}")
            else:
                raise ValueError(f"unknown key {key!r}")
        except (ValueError, IndexError) as exc:
            raise ParseError(str(exc) or f"bad value for {key!r}", lineno) from None
    return spec


def load_device(path) -> FitDevice:
    with open(path) as fh:
        return parse_device(fh.read()).build()
