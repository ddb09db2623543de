"""Global sparse assembly for the linearized incompressible flow systems.

The velocity block combines the viscous broken-gradient form, the flux
penalty, the Newton linearization of the rotational convection term, and
(for mixed boundary conditions) the linearized quadratic boundary form.
The divergence block couples element pressures to the edge scalars only.
Loads are tested against the flux-preserving reconstruction, so body
forces enter exclusively through edge degrees of freedom.

Dirichlet data is removed by symmetric elimination: constrained entries
keep their rows in the stored matrices, and the solver works on the free
index set with the known values folded into both right-hand sides.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp

from .eg_space import DofMap, EGField, element_ops, local_dof_vectors
from .quadrature import gauss_1d, quadrature_rule

logger = logging.getLogger(__name__)

__all__ = [
    "SaddleSystem",
    "SteadyProblem",
    "assemble_viscous",
    "assemble_divergence",
    "assemble_convection_newton",
    "assemble_load",
    "assemble_neumann",
    "dirichlet_dof_map",
    "apply_dirichlet",
    "export_matrix_market",
]


@dataclass
class SaddleSystem:
    """One linearized saddle-point system.

    A acts on velocity dofs, B maps velocities to element pressures.
    mean_constraint holds element areas when the pressure is only
    determined up to a constant (pure Dirichlet); None otherwise.
    Treated as immutable once built.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    rhs_u: np.ndarray
    rhs_p: np.ndarray
    mean_constraint: np.ndarray | None
    dof_map: DofMap


def _total_dofs(mesh):
    return 2 * mesh.num_vertices + mesh.num_edges


def assemble_viscous(mesh, nu):
    """Viscosity times (broken-gradient stiffness + flux penalty), CSR.

    The unit-viscosity matrix is cached on the mesh; both constituent
    forms scale linearly with nu.
    """
    if nu <= 0:
        raise ValueError(f"viscosity must be positive, got {nu}")
    cache = mesh._cache
    if "viscous_unit" not in cache:
        ops = element_ops(mesh)
        K = np.einsum("t,tai,taj->tij", mesh.areas, ops["D"], ops["D"])
        K += np.einsum("tk,tki,tkj->tij", ops["stab_w"], ops["QB"], ops["QB"])
        l2g = ops["l2g"]
        rows = np.repeat(l2g, 9, axis=1).ravel()
        cols = np.tile(l2g, (1, 9)).ravel()
        n = _total_dofs(mesh)
        cache["viscous_unit"] = sp.coo_matrix(
            (K.ravel(), (rows, cols)), shape=(n, n)
        ).tocsr()
    return nu * cache["viscous_unit"]


def assemble_divergence(mesh):
    """Divergence block: row T has sigma_e |e| on the three edge dofs of T."""
    cache = mesh._cache
    if "divergence" not in cache:
        ops = element_ops(mesh)
        nt = mesh.num_triangles
        rows = np.repeat(np.arange(nt), 3)
        cols = (2 * mesh.num_vertices + mesh.triangle_edges).ravel()
        data = (ops["L"] * ops["sig"]).ravel()
        cache["divergence"] = sp.coo_matrix(
            (data, (rows, cols)), shape=(nt, _total_dofs(mesh))
        ).tocsr()
    return cache["divergence"]


def _reconstruction_quadrature(mesh, degree):
    """Reconstructed basis values at quadrature points, (NT, nq, 3, 2)."""
    ops = element_ops(mesh)
    rule = quadrature_rule(degree)
    X = rule.physical_points(mesh)
    P = mesh.vertices[mesh.triangles]
    fac = ops["L"] * ops["sig"] / (2.0 * mesh.areas[:, None])
    phi = fac[:, None, :, None] * (X[:, :, None, :] - P[:, None, :, :])
    return rule, X, phi


def _convection_geometry(mesh):
    # element tensors M[t,k,l] = |T| sum_q w_q cross2(phi_k, phi_l),
    # degree-2 quadrature is exact for the quadratic integrand
    cache = mesh._cache
    if "convection_m" not in cache:
        rule, _, phi = _reconstruction_quadrature(mesh, 2)
        cross = (
            phi[..., :, None, 0] * phi[..., None, :, 1]
            - phi[..., :, None, 1] * phi[..., None, :, 0]
        )
        cache["convection_m"] = mesh.areas[:, None, None] * np.einsum(
            "q,tqkl->tkl", rule.weights, cross
        )
    return cache["convection_m"]


def assemble_convection_newton(mesh, u_n):
    """Newton data for the rotational convection term at state u_n.

    Returns (C, r): C carries the two first-order terms (rows only on edge
    dofs; columns on edge dofs through the reconstruction and on vertex
    dofs through the elementwise curl), r carries the value terms so that
    C applied to the state itself equals 2 r.
    """
    ops = element_ops(mesh)
    M = _convection_geometry(mesh)
    dofs = local_dof_vectors(mesh, u_n)
    omega = np.einsum("tj,tj->t", ops["curl"], dofs[:, :6])
    ub = dofs[:, 6:]
    mtu = np.einsum("tkl,tk->tl", M, ub)

    l2g = ops["l2g"]
    edge_g = l2g[:, 6:]
    vert_g = l2g[:, :6]
    n = _total_dofs(mesh)

    data1 = (omega[:, None, None] * np.swapaxes(M, 1, 2)).ravel()
    rows1 = np.repeat(edge_g, 3, axis=1).ravel()
    cols1 = np.tile(edge_g, (1, 3)).ravel()

    data2 = (mtu[:, :, None] * ops["curl"][:, None, :]).ravel()
    rows2 = np.repeat(edge_g, 6, axis=1).ravel()
    cols2 = np.tile(vert_g, (1, 3)).ravel()

    C = sp.coo_matrix(
        (
            np.concatenate([data1, data2]),
            (np.concatenate([rows1, rows2]), np.concatenate([cols1, cols2])),
        ),
        shape=(n, n),
    ).tocsr()

    r = np.zeros(n)
    np.add.at(r, edge_g.ravel(), (omega[:, None] * mtu).ravel())
    return C, r


def assemble_load(mesh, f, degree=5):
    """Body force tested against the reconstructed basis.

    Vertex entries are identically zero: the reconstruction sees only the
    edge scalars, which is what makes gradient forces drop out on the
    discretely divergence-free subspace.
    """
    rule, X, phi = _reconstruction_quadrature(mesh, degree)
    fv = np.asarray(f(X.reshape(-1, 2)), dtype=float).reshape(X.shape)
    vals = mesh.areas[:, None] * np.einsum("q,tqkd,tqd->tk", rule.weights, phi, fv)
    vec = np.zeros(_total_dofs(mesh))
    np.add.at(vec, (2 * mesh.num_vertices + mesh.triangle_edges).ravel(), vals.ravel())
    return vec


def assemble_neumann(mesh, tags, u_n, u_N=None, edge_gauss=4):
    """Outflow-boundary contributions on the edges tagged in `tags`.

    Returns (matrix, vector).  The matrix linearizes the quadratic
    boundary form (half the squared continuous trace against the test
    edge scalar) at state u_n.  The vector carries that form's value at
    u_n plus, when boundary data u_N is given, its normal component
    against edge scalars and its tangential twist against the continuous
    part.
    """
    nv = mesh.num_vertices
    n = _total_dofs(mesh)
    vec = np.zeros(n)
    be = mesh.boundary_edge_indices
    tags = np.atleast_1d(np.asarray(tags, dtype=int)).ravel()
    sel = be[np.isin(mesh.boundary_tags[be], tags)] if tags.size else be[:0]
    if sel.size == 0:
        return sp.csr_matrix((n, n)), vec

    a = mesh.edges[sel, 0]
    b = mesh.edges[sel, 1]
    L = mesh.edge_lengths[sel]
    ne = mesh.edge_normal[sel]  # outward on the boundary
    rows_e = 2 * nv + sel
    Ua = u_n.vertex_values[a]
    Ub = u_n.vertex_values[b]

    # exact edge integrals of (linear trace) x (hat function)
    data = np.concatenate(
        [
            L * (Ua[:, 0] / 3 + Ub[:, 0] / 6),
            L * (Ua[:, 0] / 6 + Ub[:, 0] / 3),
            L * (Ua[:, 1] / 3 + Ub[:, 1] / 6),
            L * (Ua[:, 1] / 6 + Ub[:, 1] / 3),
        ]
    )
    rows = np.tile(rows_e, 4)
    cols = np.concatenate([a, b, nv + a, nv + b])
    D = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()

    # value of the quadratic form: half the edge integral of |trace|^2
    quad = ((Ua * Ua).sum(1) + (Ua * Ub).sum(1) + (Ub * Ub).sum(1)) / 3.0
    np.add.at(vec, rows_e, 0.5 * L * quad)

    if u_N is not None:
        tq, wq = gauss_1d(edge_gauss)
        pts = (
            mesh.vertices[a][:, None, :] * (1.0 - tq)[None, :, None]
            + mesh.vertices[b][:, None, :] * tq[None, :, None]
        )
        g = np.asarray(u_N(pts.reshape(-1, 2)), dtype=float).reshape(
            sel.size, edge_gauss, 2
        )
        np.add.at(vec, rows_e, L * np.einsum("q,eqd,ed->e", wq, g, ne))
        # tangential part: cross(n, u_N) against cross(n, hat)
        cr = ne[:, None, 0] * g[..., 1] - ne[:, None, 1] * g[..., 0]
        int_a = L * np.einsum("q,eq->e", wq * (1.0 - tq), cr)
        int_b = L * np.einsum("q,eq->e", wq * tq, cr)
        np.add.at(vec, a, -ne[:, 1] * int_a)
        np.add.at(vec, nv + a, ne[:, 0] * int_a)
        np.add.at(vec, b, -ne[:, 1] * int_b)
        np.add.at(vec, nv + b, ne[:, 0] * int_b)
    return D, vec


def _normalize_tags(tags):
    if np.isscalar(tags):
        return (int(tags),)
    return tuple(int(t) for t in tags)


def dirichlet_dof_map(mesh, bcs, edge_gauss=4):
    """Constrained dof map for ordered Dirichlet segments.

    bcs is a sequence of (tags, u_D) pairs.  Later segments win at shared
    vertices (corner overrides are logged), which is how a driven lid
    takes precedence over side walls.
    """
    dm = DofMap.unconstrained(mesh)
    nv = mesh.num_vertices
    be = mesh.boundary_edge_indices
    tq, wq = gauss_1d(edge_gauss)
    for tags, u_d in bcs:
        tags = _normalize_tags(tags)
        sel = be[np.isin(mesh.boundary_tags[be], tags)]
        if sel.size == 0:
            continue
        verts = np.unique(mesh.edges[sel])
        vals = np.asarray(u_d(mesh.vertices[verts]), dtype=float)

        revisit = dm.constrained[verts]
        if revisit.any():
            old = np.column_stack([dm.values[verts], dm.values[nv + verts]])
            changed = revisit & np.any(old != vals, axis=1)
            if changed.any():
                logger.info(
                    "%d shared boundary vertices overridden by a later "
                    "Dirichlet segment (tags %s)",
                    int(changed.sum()),
                    tags,
                )
        dm.constrained[verts] = True
        dm.constrained[nv + verts] = True
        dm.values[verts] = vals[:, 0]
        dm.values[nv + verts] = vals[:, 1]

        av = mesh.vertices[mesh.edges[sel, 0]]
        bv = mesh.vertices[mesh.edges[sel, 1]]
        pts = av[:, None, :] * (1.0 - tq)[None, :, None] + bv[:, None, :] * tq[
            None, :, None
        ]
        gv = np.asarray(u_d(pts.reshape(-1, 2)), dtype=float).reshape(
            sel.size, edge_gauss, 2
        )
        dm.constrained[2 * nv + sel] = True
        dm.values[2 * nv + sel] = np.einsum(
            "q,eqd,ed->e", wq, gv, mesh.edge_normal[sel]
        )
    return dm


def apply_dirichlet(mesh, system, bcs, edge_gauss=4):
    """Fold Dirichlet data into the right-hand sides, returning a new system.

    Constrained rows stay in A and B; the solver restricts to the free
    index set.  For pure-Dirichlet problems the net prescribed boundary
    flux must vanish up to roundoff or the pressure problem is
    inconsistent; a violation is logged as a warning.
    """
    dm = dirichlet_dof_map(mesh, bcs, edge_gauss)
    vvec = np.where(dm.constrained, dm.values, 0.0)
    rhs_u = system.rhs_u - system.A @ vvec
    rhs_p = system.rhs_p - system.B @ vvec
    if system.mean_constraint is not None:
        be = mesh.boundary_edge_indices
        flux = float(mesh.edge_lengths[be] @ vvec[2 * mesh.num_vertices + be])
        perimeter = float(mesh.edge_lengths[be].sum())
        if abs(flux) > 1e-10 * perimeter:
            logger.warning(
                "Dirichlet data compatibility violated: net boundary flux "
                "%.3e exceeds 1e-10 x perimeter %.3e",
                flux,
                perimeter,
            )
    return SaddleSystem(
        A=system.A,
        B=system.B,
        rhs_u=rhs_u,
        rhs_p=rhs_p,
        mean_constraint=system.mean_constraint,
        dof_map=dm,
    )


@dataclass
class SteadyProblem:
    """A steady flow problem: geometry, viscosity, forcing, boundary data.

    dirichlet is an ordered list of (tags, u_D) segments; neumann_tags
    name the do-nothing/outflow sides (with optional data).  The load
    vector is computed once per problem instance and reused across Newton
    iterations.
    """

    mesh: object
    nu: float
    body_force: object = None
    dirichlet: list = field(default_factory=list)
    neumann_tags: tuple = ()
    neumann_data: object = None
    convect: bool = True
    load_degree: int = 5
    edge_gauss: int = 4
    _load: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def with_nu(self, nu):
        return dataclasses.replace(self, nu=nu)

    def load_vector(self):
        if self._load is None:
            if self.body_force is None:
                self._load = np.zeros(_total_dofs(self.mesh))
            else:
                self._load = assemble_load(self.mesh, self.body_force, self.load_degree)
        return self._load

    def newton_system(self, u_n):
        """Assemble the linearized saddle system at state u_n (None = rest)."""
        mesh = self.mesh
        A = assemble_viscous(mesh, self.nu)
        B = assemble_divergence(mesh)
        rhs_u = self.load_vector().copy()

        if u_n is not None and self.convect:
            C, r = assemble_convection_newton(mesh, u_n)
            A = A + C
            rhs_u += r
        if self.neumann_tags:
            state = u_n if u_n is not None else EGField.zeros(mesh)
            D, vec = assemble_neumann(
                mesh, self.neumann_tags, state, self.neumann_data, self.edge_gauss
            )
            A = A + D
            rhs_u += vec

        system = SaddleSystem(
            A=A.tocsr(),
            B=B,
            rhs_u=rhs_u,
            rhs_p=np.zeros(mesh.num_triangles),
            mean_constraint=None if self.neumann_tags else mesh.areas.copy(),
            dof_map=DofMap.unconstrained(mesh),
        )
        return apply_dirichlet(mesh, system, self.dirichlet, self.edge_gauss)


def export_matrix_market(system, prefix):
    """Write A and B in coordinate text format next to the given prefix."""
    prefix = str(prefix)
    scipy.io.mmwrite(prefix + "_A.mtx", system.A.tocoo())
    scipy.io.mmwrite(prefix + "_B.mtx", system.B.tocoo())
    logger.info("wrote %s_A.mtx and %s_B.mtx", prefix, prefix)
