"""Triangle meshes with assigned edge normals and signed edge incidences.

A mesh stores counterclockwise triangles, a deduplicated edge list, one fixed
unit normal per edge, and per-triangle signs relating the assigned normal to
the outward normal.  Interior edge (i, j) with i < j carries the normal
obtained by rotating the unit vector from vertex i to vertex j by 90 degrees
counterclockwise; boundary edges are re-oriented so the normal points out of
the domain and the single incident triangle sees sign +1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

# Interior marker for per-edge tags.
TAG_INTERIOR = -1

# Side tags used by the structured rectangle generator.
TAG_BOTTOM = 1
TAG_RIGHT = 2
TAG_TOP = 3
TAG_LEFT = 4

# Tags used by the flow-channel generators and imported flow meshes.
TAG_INLET = 1
TAG_OUTLET = 2
TAG_WALL = 3


class MeshError(Exception):
    """Raised for malformed mesh input or broken mesh topology."""


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _freeze(arr):
    arr.flags.writeable = False
    return arr


@dataclass(eq=False)
class Mesh2D:
    """Immutable triangle mesh with precomputed edge topology.

    Attributes
    ----------
    vertices : (NV, 2) float array
    triangles : (NT, 3) int array, counterclockwise vertex triples
    edges : (NE, 2) int array, endpoint pairs with smaller index first
    edge_normal : (NE, 2) float array, assigned unit normal per edge
    edge_lengths : (NE,) float array
    edge_to_triangles : (NE, 2) int array, -1 marks an absent neighbor
    triangle_edges : (NT, 3) int array, local edge k opposite local vertex k
    triangle_edge_sign : (NT, 3) int array, +1 where the assigned normal
        equals the outward normal of the triangle, -1 otherwise
    boundary_tags : (NE,) int array, TAG_INTERIOR for interior edges
    areas : (NT,) float array
    h_T : (NT,) float array, longest edge per triangle
    h : float, mesh size max(h_T)
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_normal: np.ndarray
    edge_lengths: np.ndarray
    edge_to_triangles: np.ndarray
    triangle_edges: np.ndarray
    triangle_edge_sign: np.ndarray
    boundary_tags: np.ndarray
    areas: np.ndarray
    h_T: np.ndarray
    h: float
    construction_notes: list = field(default_factory=list)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    @property
    def num_edges(self):
        return self.edges.shape[0]

    @property
    def boundary_edge_indices(self):
        return np.flatnonzero(self.edge_to_triangles[:, 1] < 0)

    @property
    def boundary_vertex_mask(self):
        mask = np.zeros(self.num_vertices, dtype=bool)
        be = self.boundary_edge_indices
        mask[self.edges[be].ravel()] = True
        return mask

    @classmethod
    def from_arrays(cls, vertices, triangles, tag_lookup=None, strict=True,
                    tri_lines=None):
        """Build full topology from raw vertex and triangle arrays.

        tag_lookup assigns boundary tags: either a callable mapping edge
        midpoints (B, 2) to an int array, or a dict keyed by sorted endpoint
        pairs.  With strict=False, topology defects are recorded in
        construction_notes instead of raising (validate_mesh reports them).
        """
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertex array must have shape (NV, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangle array must have shape (NT, 3)")
        nv = vertices.shape[0]
        nt = triangles.shape[0]
        if nt == 0:
            raise MeshError("mesh has no triangles")
        if triangles.min() < 0 or triangles.max() >= nv:
            raise MeshError("triangle vertex index out of range")

        notes = []

        def _loc(t):
            if tri_lines is not None:
                return f"line {tri_lines[t]}: "
            return ""

        dup = (
            (triangles[:, 0] == triangles[:, 1])
            | (triangles[:, 1] == triangles[:, 2])
            | (triangles[:, 0] == triangles[:, 2])
        )
        if dup.any():
            t = int(np.flatnonzero(dup)[0])
            msg = f"{_loc(t)}triangle {t} repeats a vertex index"
            if strict:
                raise MeshError(msg)
            notes.append(msg)

        p = vertices[triangles]
        signed = 0.5 * _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        bad = signed <= 0.0
        if bad.any():
            t = int(np.flatnonzero(bad)[0])
            msg = (
                f"{_loc(t)}triangle {t} is degenerate or not counterclockwise "
                f"(signed area {signed[t]:.3e})"
            )
            if strict:
                raise MeshError(msg)
            notes.append(msg)
        areas = np.abs(signed)

        # Deduplicate edges.  Local edge k of a triangle joins local vertices
        # (k+1)%3 and (k+2)%3, i.e. it is opposite local vertex k.
        ea = triangles[:, [1, 2, 0]].ravel()
        eb = triangles[:, [2, 0, 1]].ravel()
        lo = np.minimum(ea, eb)
        hi = np.maximum(ea, eb)
        keys = lo * np.int64(nv) + hi
        uniq, tri_edge_flat = np.unique(keys, return_inverse=True)
        ne = uniq.shape[0]
        edges = np.column_stack([uniq // nv, uniq % nv])
        triangle_edges = tri_edge_flat.reshape(nt, 3)

        counts = np.bincount(tri_edge_flat, minlength=ne)
        if counts.max() > 2:
            e = int(np.argmax(counts))
            owners = np.flatnonzero((triangle_edges == e).any(axis=1))
            t = int(owners[2])
            msg = (
                f"{_loc(t)}edge ({edges[e, 0]}, {edges[e, 1]}) is shared by "
                f"{counts[e]} triangles: mesh is not manifold"
            )
            if strict:
                raise MeshError(msg)
            notes.append(msg)

        edge_to_triangles = np.full((ne, 2), -1, dtype=np.int64)
        order = np.argsort(tri_edge_flat, kind="stable")
        tri_of_flat = np.repeat(np.arange(nt, dtype=np.int64), 3)[order]
        sorted_edges = tri_edge_flat[order]
        slot = np.zeros(ne, dtype=np.int64)
        for eidx, tidx in zip(sorted_edges, tri_of_flat):
            if slot[eidx] < 2:
                edge_to_triangles[eidx, slot[eidx]] = tidx
                slot[eidx] += 1

        dvec = vertices[edges[:, 1]] - vertices[edges[:, 0]]
        edge_lengths = np.hypot(dvec[:, 0], dvec[:, 1])
        if (edge_lengths == 0).any():
            e = int(np.flatnonzero(edge_lengths == 0)[0])
            raise MeshError(f"edge ({edges[e,0]}, {edges[e,1]}) has zero length")
        tvec = dvec / edge_lengths[:, None]
        edge_normal = np.column_stack([-tvec[:, 1], tvec[:, 0]])

        # Outward normals per triangle edge: local edge k runs from local
        # vertex (k+1)%3 to (k+2)%3 along the counterclockwise boundary, so
        # outward is the clockwise rotation of the edge direction.
        sign = np.zeros((nt, 3), dtype=np.int64)
        for k in range(3):
            a = triangles[:, (k + 1) % 3]
            b = triangles[:, (k + 2) % 3]
            d = vertices[b] - vertices[a]
            dn = np.hypot(d[:, 0], d[:, 1])
            dn[dn == 0] = 1.0
            out = np.column_stack([d[:, 1], -d[:, 0]]) / dn[:, None]
            dot = np.einsum("ij,ij->i", edge_normal[triangle_edges[:, k]], out)
            sign[:, k] = np.where(dot >= 0, 1, -1)

        # Re-orient boundary edges so the assigned normal points outward.
        is_boundary = edge_to_triangles[:, 1] < 0
        for e in np.flatnonzero(is_boundary):
            t = edge_to_triangles[e, 0]
            if t < 0:
                continue
            k = int(np.flatnonzero(triangle_edges[t] == e)[0])
            if sign[t, k] == -1:
                edge_normal[e] = -edge_normal[e]
                sign[t, k] = 1

        boundary_tags = np.full(ne, TAG_INTERIOR, dtype=np.int64)
        bidx = np.flatnonzero(is_boundary)
        if bidx.size:
            if callable(tag_lookup):
                mids = 0.5 * (vertices[edges[bidx, 0]] + vertices[edges[bidx, 1]])
                boundary_tags[bidx] = tag_lookup(mids)
            elif isinstance(tag_lookup, dict):
                for e in bidx:
                    key = (int(edges[e, 0]), int(edges[e, 1]))
                    boundary_tags[e] = tag_lookup.get(key, 0)
            else:
                boundary_tags[bidx] = 0

        pe = vertices[triangles]
        side = np.stack(
            [
                pe[:, 2] - pe[:, 1],
                pe[:, 0] - pe[:, 2],
                pe[:, 1] - pe[:, 0],
            ],
            axis=1,
        )
        h_T = np.sqrt((side**2).sum(axis=2)).max(axis=1)

        mesh = cls(
            vertices=_freeze(vertices),
            triangles=_freeze(triangles),
            edges=_freeze(edges),
            edge_normal=_freeze(edge_normal),
            edge_lengths=_freeze(edge_lengths),
            edge_to_triangles=_freeze(edge_to_triangles),
            triangle_edges=_freeze(triangle_edges),
            triangle_edge_sign=_freeze(sign),
            boundary_tags=_freeze(boundary_tags),
            areas=_freeze(areas),
            h_T=_freeze(h_T),
            h=float(h_T.max()),
            construction_notes=notes,
        )
        return mesh


def build_rect_uniform(nx, ny, bounds=(0.0, 0.0, 1.0, 1.0)):
    """Uniform triangulation of a rectangle, nx by ny cells.

    Every cell is split along its lower-left to upper-right diagonal.
    Boundary edges carry the side tags TAG_BOTTOM/RIGHT/TOP/LEFT.
    """
    if not (isinstance(nx, (int, np.integer)) and isinstance(ny, (int, np.integer))):
        raise MeshError("cell counts must be integers")
    if nx < 1 or ny < 1:
        raise MeshError(f"cell counts must be positive, got ({nx}, {ny})")
    x0, y0, x1, y1 = map(float, bounds)
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"empty rectangle {bounds}")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            ll = vid(i, j)
            lr = vid(i + 1, j)
            ur = vid(i + 1, j + 1)
            ul = vid(i, j + 1)
            tris.append((ll, lr, ur))
            tris.append((ll, ur, ul))
    triangles = np.array(tris, dtype=np.int64)

    tol = 1e-9 * max(x1 - x0, y1 - y0)

    def tags(mids):
        out = np.empty(mids.shape[0], dtype=np.int64)
        for i, (mx, my) in enumerate(mids):
            if abs(my - y0) < tol:
                out[i] = TAG_BOTTOM
            elif abs(mx - x1) < tol:
                out[i] = TAG_RIGHT
            elif abs(my - y1) < tol:
                out[i] = TAG_TOP
            elif abs(mx - x0) < tol:
                out[i] = TAG_LEFT
            else:
                raise MeshError("boundary edge midpoint off every side")
        return out

    return Mesh2D.from_arrays(vertices, triangles, tag_lookup=tags)


def build_step_domain(h_target):
    """Backward-facing step channel (-4, 20) x (0, 2) minus [-4, 0] x [0, 1].

    The spacing snaps to the nearest values that keep the step corner (0, 1)
    on the grid.  Boundary tags: TAG_INLET at x = -4, TAG_OUTLET at x = 20,
    TAG_WALL elsewhere.
    """
    if not h_target > 0:
        raise MeshError(f"target spacing must be positive, got {h_target}")
    kx = max(1, round(4.0 / h_target))
    ky = max(1, round(1.0 / h_target))
    dx = 4.0 / kx
    dy = 1.0 / ky
    nx = 6 * kx
    ny = 2 * ky
    xs = np.linspace(-4.0, 20.0, nx + 1)
    ys = np.linspace(0.0, 2.0, ny + 1)

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            cx = -4.0 + (i + 0.5) * dx
            cy = (j + 0.5) * dy
            if cx < 0.0 and cy < 1.0:
                continue
            ll = vid(i, j)
            lr = vid(i + 1, j)
            ur = vid(i + 1, j + 1)
            ul = vid(i, j + 1)
            tris.append((ll, lr, ur))
            tris.append((ll, ur, ul))
    triangles = np.array(tris, dtype=np.int64)

    X, Y = np.meshgrid(xs, ys)
    vertices_full = np.column_stack([X.ravel(), Y.ravel()])
    used = np.unique(triangles)
    remap = np.full(vertices_full.shape[0], -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    vertices = vertices_full[used]
    triangles = remap[triangles]

    tol = 1e-9 * 24.0

    def tags(mids):
        out = np.full(mids.shape[0], TAG_WALL, dtype=np.int64)
        out[np.abs(mids[:, 0] + 4.0) < tol] = TAG_INLET
        out[np.abs(mids[:, 0] - 20.0) < tol] = TAG_OUTLET
        return out

    mesh = Mesh2D.from_arrays(vertices, triangles, tag_lookup=tags)
    if abs(dx - h_target) > 1e-12 or abs(dy - h_target) > 1e-12:
        logger.info(
            "step mesh spacing snapped to dx=%g dy=%g (target %g)", dx, dy, h_target
        )
    return mesh


def _tokens(path):
    """Yield (line_number, token_list) for content lines of an .m2d file."""
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            yield lineno, line.split()


def import_mesh(path):
    """Read a mesh interchange file and rebuild the topology from scratch.

    Format: a header line "NV NT NB", then NV lines "x y", NT lines "i j k"
    (0-based counterclockwise triangles), then NB lines "a b tag" labeling
    boundary edges.  '#' starts a comment; blank lines are ignored.
    """
    rows = list(_tokens(path))
    if not rows:
        raise MeshError(f"{path}: empty mesh file")

    lineno, tok = rows[0]
    if len(tok) != 3:
        raise MeshError(f"{path}: line {lineno}: header must be 'NV NT NB'")
    try:
        nv, nt, nb = (int(s) for s in tok)
    except ValueError:
        raise MeshError(f"{path}: line {lineno}: header must be 'NV NT NB'") from None
    if nv < 3 or nt < 1 or nb < 0:
        raise MeshError(f"{path}: line {lineno}: implausible counts {nv} {nt} {nb}")
    if len(rows) - 1 != nv + nt + nb:
        raise MeshError(
            f"{path}: expected {nv + nt + nb} records after the header, "
            f"found {len(rows) - 1}"
        )

    vertices = np.empty((nv, 2), dtype=np.float64)
    for i in range(nv):
        lineno, tok = rows[1 + i]
        if len(tok) != 2:
            raise MeshError(f"{path}: line {lineno}: vertex needs exactly 'x y'")
        try:
            vertices[i] = (float(tok[0]), float(tok[1]))
        except ValueError:
            raise MeshError(f"{path}: line {lineno}: bad vertex coordinates") from None

    triangles = np.empty((nt, 3), dtype=np.int64)
    tri_lines = np.empty(nt, dtype=np.int64)
    for t in range(nt):
        lineno, tok = rows[1 + nv + t]
        tri_lines[t] = lineno
        if len(tok) != 3:
            raise MeshError(f"{path}: line {lineno}: triangle needs exactly 'i j k'")
        try:
            tri = [int(s) for s in tok]
        except ValueError:
            raise MeshError(f"{path}: line {lineno}: bad triangle indices") from None
        if len(set(tri)) != 3:
            raise MeshError(
                f"{path}: line {lineno}: triangle {t} repeats a vertex index"
            )
        if min(tri) < 0 or max(tri) >= nv:
            raise MeshError(
                f"{path}: line {lineno}: triangle {t} references vertex "
                f"{max(tri, key=abs)} outside 0..{nv - 1}"
            )
        triangles[t] = tri

    tag_map = {}
    tag_rows = []
    for r in range(nb):
        lineno, tok = rows[1 + nv + nt + r]
        if len(tok) != 3:
            raise MeshError(f"{path}: line {lineno}: boundary record needs 'a b tag'")
        try:
            a, b, tag = (int(s) for s in tok)
        except ValueError:
            raise MeshError(f"{path}: line {lineno}: bad boundary record") from None
        if not (0 <= a < nv and 0 <= b < nv) or a == b:
            raise MeshError(f"{path}: line {lineno}: bad boundary edge ({a}, {b})")
        tag_map[(min(a, b), max(a, b))] = tag
        tag_rows.append((lineno, (min(a, b), max(a, b))))

    try:
        mesh = Mesh2D.from_arrays(
            vertices, triangles, tag_lookup=tag_map, tri_lines=tri_lines
        )
    except MeshError as err:
        raise MeshError(f"{path}: {err}") from None

    boundary = set()
    for e in mesh.boundary_edge_indices:
        boundary.add((int(mesh.edges[e, 0]), int(mesh.edges[e, 1])))
    for lineno, pair in tag_rows:
        if pair not in boundary:
            raise MeshError(
                f"{path}: line {lineno}: edge {pair} is not a boundary edge"
            )
    return mesh


def export_mesh(mesh, path):
    """Write the interchange format; output is deterministic for a given mesh."""
    bidx = mesh.boundary_edge_indices
    lines = ["# m2d"]
    lines.append(f"{mesh.num_vertices} {mesh.num_triangles} {len(bidx)}")
    for x, y in mesh.vertices:
        lines.append(f"{float(x)!r} {float(y)!r}")
    for i, j, k in mesh.triangles:
        lines.append(f"{int(i)} {int(j)} {int(k)}")
    for e in bidx:
        a, b = mesh.edges[e]
        lines.append(f"{int(a)} {int(b)} {int(mesh.boundary_tags[e])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class MeshReport:
    """Quality and consistency summary produced by validate_mesh."""

    violations: list
    min_angle_deg: float
    min_area: float
    h: float
    max_shape_ratio: float

    @property
    def ok(self):
        return not self.violations


def validate_mesh(mesh):
    """Check topology invariants and report quality measures.

    Invariants checked: positive orientation, unit normals perpendicular to
    their edges, opposite incidence signs across interior edges, +1 signs and
    outward normals on boundary edges, the per-triangle closed-polygon
    identity (length-weighted signed normals sum to zero), tag placement,
    and any defects recorded during a non-strict build.
    """
    v = mesh.vertices
    violations = list(mesh.construction_notes)

    p = v[mesh.triangles]
    signed = 0.5 * _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    for t in np.flatnonzero(signed <= 0):
        violations.append(f"triangle {t} is degenerate or clockwise")

    dvec = v[mesh.edges[:, 1]] - v[mesh.edges[:, 0]]
    nrm = np.sqrt((mesh.edge_normal**2).sum(axis=1))
    for e in np.flatnonzero(np.abs(nrm - 1.0) > 1e-12):
        violations.append(f"edge {e} normal is not unit length")
    perp = np.abs(np.einsum("ij,ij->i", dvec, mesh.edge_normal))
    for e in np.flatnonzero(perp > 1e-12 * np.maximum(mesh.edge_lengths, 1e-300)):
        violations.append(f"edge {e} normal is not perpendicular to the edge")

    sign_sum = np.zeros(mesh.num_edges, dtype=np.int64)
    incid = np.zeros(mesh.num_edges, dtype=np.int64)
    np.add.at(sign_sum, mesh.triangle_edges.ravel(), mesh.triangle_edge_sign.ravel())
    np.add.at(incid, mesh.triangle_edges.ravel(), 1)
    is_boundary = mesh.edge_to_triangles[:, 1] < 0
    for e in np.flatnonzero((~is_boundary) & (sign_sum != 0)):
        violations.append(f"interior edge {e} does not carry opposite signs")
    for e in np.flatnonzero(is_boundary & (sign_sum != 1)):
        violations.append(f"boundary edge {e} does not carry sign +1")
    for e in np.flatnonzero(incid > 2):
        violations.append(f"edge {e} has {incid[e]} incidences")

    for e in np.flatnonzero(is_boundary & (mesh.boundary_tags < 0)):
        violations.append(f"boundary edge {e} is untagged")
    for e in np.flatnonzero((~is_boundary) & (mesh.boundary_tags != TAG_INTERIOR)):
        violations.append(f"interior edge {e} carries a boundary tag")

    # closed-polygon identity per triangle
    L = mesh.edge_lengths[mesh.triangle_edges]
    N = mesh.edge_normal[mesh.triangle_edges]
    S = mesh.triangle_edge_sign[..., None]
    resid = np.abs((L[..., None] * S * N).sum(axis=1)).max(axis=1)
    for t in np.flatnonzero(resid > 1e-12 * np.maximum(mesh.h_T, 1e-300)):
        violations.append(f"triangle {t} violates the closed-polygon identity")

    # quality measures
    sides = np.stack(
        [p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1
    )
    slen = np.sqrt((sides**2).sum(axis=2))
    angles = np.empty((mesh.num_triangles, 3))
    for k in range(3):
        u = -sides[:, (k + 2) % 3]
        w = sides[:, (k + 1) % 3]
        angles[:, k] = np.arctan2(np.abs(_cross2(u, w)), np.einsum("ij,ij->i", u, w))
    perimeter = slen.sum(axis=1)
    inradius = 2.0 * np.abs(signed) / perimeter
    ratio = mesh.h_T / inradius

    return MeshReport(
        violations=violations,
        min_angle_deg=float(np.degrees(angles.min())),
        min_area=float(np.abs(signed).min()),
        h=mesh.h,
        max_shape_ratio=float(ratio.max()),
    )
