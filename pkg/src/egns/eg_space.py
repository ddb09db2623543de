"""Enriched piecewise-linear velocity space and its broken operators.

A velocity field has a continuous piecewise-linear vector part (one 2-vector
per mesh vertex) plus one scalar per edge that corrects the average normal
flux across that edge.  Pressures are piecewise constant per triangle.

The broken gradient is the constant tensor per element defined by testing
against all constant tensors: its boundary functional replaces the normal
component of the continuous trace with the edge scalar while keeping the
tangential component of the continuous part.  The broken divergence is its
trace, which reduces to a length-weighted signed sum of the edge scalars.

Local degrees of freedom on a triangle are ordered as
[v0x at 3 vertices, v0y at 3 vertices, edge scalar at 3 edges], edges listed
so that local edge k sits opposite local vertex k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quadrature import gauss_1d

__all__ = [
    "EGField",
    "DofMap",
    "SingularElementError",
    "edge_normal_average",
    "interpolate",
    "normal_trace_average",
    "local_dof_vectors",
    "modified_gradient_local",
    "modified_divergence_local",
    "stabilization_local",
    "element_divergence",
    "energy_norm",
]


class SingularElementError(Exception):
    """Raised when an element is too degenerate for the broken operators."""


@dataclass
class EGField:
    """Velocity field: nodal 2-vectors plus one normal-flux scalar per edge."""

    vertex_values: np.ndarray  # (NV, 2)
    edge_values: np.ndarray  # (NE,)

    @classmethod
    def zeros(cls, mesh):
        return cls(
            vertex_values=np.zeros((mesh.num_vertices, 2)),
            edge_values=np.zeros(mesh.num_edges),
        )

    def copy(self):
        return EGField(self.vertex_values.copy(), self.edge_values.copy())


@dataclass
class DofMap:
    """Global layout [v0x block | v0y block | edge block] with constraints.

    constrained marks eliminated entries; values holds their data (zero on
    free entries).
    """

    num_vertices: int
    num_edges: int
    constrained: np.ndarray
    values: np.ndarray

    @classmethod
    def unconstrained(cls, mesh):
        total = 2 * mesh.num_vertices + mesh.num_edges
        return cls(
            num_vertices=mesh.num_vertices,
            num_edges=mesh.num_edges,
            constrained=np.zeros(total, dtype=bool),
            values=np.zeros(total),
        )

    @property
    def total(self):
        return 2 * self.num_vertices + self.num_edges

    def vx(self, i):
        return i

    def vy(self, i):
        return self.num_vertices + i

    def edge(self, e):
        return 2 * self.num_vertices + e

    def free_indices(self):
        return np.flatnonzero(~self.constrained)

    def pack(self, field):
        return np.concatenate(
            [field.vertex_values[:, 0], field.vertex_values[:, 1], field.edge_values]
        )

    def unpack(self, vec):
        nv = self.num_vertices
        return EGField(
            vertex_values=np.column_stack([vec[:nv], vec[nv : 2 * nv]]),
            edge_values=vec[2 * nv :].copy(),
        )

    def copy(self):
        return DofMap(
            self.num_vertices, self.num_edges, self.constrained.copy(), self.values.copy()
        )


def edge_normal_average(endpoint_values, n_e):
    """Average normal component of a linear trace given its endpoint values."""
    return float(0.5 * (endpoint_values[0] + endpoint_values[1]) @ n_e)


def normal_trace_average(mesh, field):
    """Per-edge average of the continuous part's normal component, (NE,)."""
    va = field.vertex_values[mesh.edges[:, 0]]
    vb = field.vertex_values[mesh.edges[:, 1]]
    return np.einsum("ed,ed->e", 0.5 * (va + vb), mesh.edge_normal)


def interpolate(mesh, u, edge_gauss=4):
    """Interpolate an analytic vector field: nodal values plus edge averages
    of the normal component.  u maps (..., 2) points to (..., 2) values;
    the edge rule must be exact for the trace degree (default handles
    degree 7).
    """
    vertex_values = np.asarray(u(mesh.vertices), dtype=float)
    tq, wq = gauss_1d(edge_gauss)
    a = mesh.vertices[mesh.edges[:, 0]]
    b = mesh.vertices[mesh.edges[:, 1]]
    pts = a[:, None, :] * (1.0 - tq)[None, :, None] + b[:, None, :] * tq[None, :, None]
    vals = np.asarray(u(pts.reshape(-1, 2)), dtype=float).reshape(
        mesh.num_edges, edge_gauss, 2
    )
    edge_values = np.einsum("q,eqd,ed->e", wq, vals, mesh.edge_normal)
    return EGField(vertex_values=vertex_values, edge_values=edge_values)


def element_ops(mesh):
    """Per-element geometry and operator tensors, cached on the mesh.

    Returns a dict with, per element: the 4x9 broken-gradient matrix D
    (rows are the row-major entries of the gradient tensor), the 3x9
    penalty rows QB (average normal trace minus edge scalar, one row per
    local edge), penalty weights, curl coefficients of the continuous part,
    signed edge data, and the local-to-global index map.
    """
    cache = mesh._cache
    if "eg_ops" in cache:
        return cache["eg_ops"]

    tri = mesh.triangles
    nt = mesh.num_triangles
    nv = mesh.num_vertices
    A = mesh.areas
    scale = 1e-14 * mesh.h * mesh.h
    if (A < scale).any():
        t = int(np.argmin(A))
        raise SingularElementError(
            f"triangle {t} has area {A[t]:.3e}, below {scale:.3e}"
        )

    TE = mesh.triangle_edges
    sig = mesh.triangle_edge_sign.astype(np.float64)
    L = mesh.edge_lengths[TE]
    n_e = mesh.edge_normal[TE]  # assigned normals, (NT, 3, 2)
    nout = sig[..., None] * n_e  # outward normals
    that = np.stack([-nout[..., 1], nout[..., 0]], axis=-1)  # ccw tangents

    # gradients of the barycentric basis: grad l_k = -L_k n_out_k / (2A)
    gradl = -L[..., None] * nout / (2.0 * A[:, None, None])

    # broken gradient: G = (1/A) sum_k L_k [ sigma_k vb_k (n x n)
    #                                        + (t . v0(mid_k)) (t x n) ]
    nn = np.einsum("tki,tkj->tkij", nout, nout).reshape(nt, 3, 4)
    tn = np.einsum("tki,tkj->tkij", that, nout).reshape(nt, 3, 4)
    D = np.zeros((nt, 4, 9))
    coeff = L * sig / A[:, None]
    for k in range(3):
        D[:, :, 6 + k] = coeff[:, k, None] * nn[:, k, :]
        w = 0.5 * L[:, k] / A
        for j in ((k + 1) % 3, (k + 2) % 3):
            D[:, :, j] += (w * that[:, k, 0])[:, None] * tn[:, k, :]
            D[:, :, 3 + j] += (w * that[:, k, 1])[:, None] * tn[:, k, :]

    # penalty rows: average of the continuous normal trace minus edge scalar
    QB = np.zeros((nt, 3, 9))
    for k in range(3):
        for j in ((k + 1) % 3, (k + 2) % 3):
            QB[:, k, j] = 0.5 * n_e[:, k, 0]
            QB[:, k, 3 + j] = 0.5 * n_e[:, k, 1]
        QB[:, k, 6 + k] = -1.0
    stab_w = L / mesh.h_T[:, None]

    # scalar curl of the continuous part: sum_j (dx l_j) v0y_j - (dy l_j) v0x_j
    curl = np.zeros((nt, 6))
    curl[:, 0:3] = -gradl[:, :, 1]
    curl[:, 3:6] = gradl[:, :, 0]

    l2g = np.concatenate([tri, nv + tri, 2 * nv + TE], axis=1)

    ops = {
        "D": D,
        "QB": QB,
        "stab_w": stab_w,
        "curl": curl,
        "l2g": l2g,
        "L": L,
        "sig": sig,
        "nout": nout,
        "n_e": n_e,
        "gradl": gradl,
    }
    cache["eg_ops"] = ops
    return ops


def local_dof_vectors(mesh, field):
    """Gather per-element local dof vectors, (NT, 9)."""
    tri = mesh.triangles
    return np.concatenate(
        [
            field.vertex_values[tri, 0],
            field.vertex_values[tri, 1],
            field.edge_values[mesh.triangle_edges],
        ],
        axis=1,
    )


def modified_gradient_local(mesh, t, local_dofs):
    """Broken gradient on element t for a local dof vector, as a 2x2 tensor."""
    ops = element_ops(mesh)
    return (ops["D"][t] @ np.asarray(local_dofs)).reshape(2, 2)


def modified_divergence_local(mesh, t, edge_values):
    """Broken divergence on element t from its three local edge scalars."""
    ops = element_ops(mesh)
    return float(
        (ops["L"][t] * ops["sig"][t] * np.asarray(edge_values)).sum() / mesh.areas[t]
    )


def stabilization_local(mesh, t):
    """Symmetric positive semidefinite 9x9 penalty kernel on element t.

    Quadratic form: (1/h_T) sum over the element's edges of edge length
    times the squared gap between the average continuous normal trace and
    the edge scalar.  Viscosity is applied at assembly.
    """
    ops = element_ops(mesh)
    qb = ops["QB"][t]
    w = ops["stab_w"][t]
    return np.einsum("k,ki,kj->ij", w, qb, qb)


def element_divergence(mesh, field):
    """Broken divergence per element, (NT,)."""
    ops = element_ops(mesh)
    vb = field.edge_values[mesh.triangle_edges]
    return (ops["L"] * ops["sig"] * vb).sum(axis=1) / mesh.areas


def energy_norm(mesh, field):
    """Mesh-dependent energy norm: broken-gradient part plus penalty part.

    Its square times viscosity equals the assembled diffusion form's value
    on the diagonal.
    """
    ops = element_ops(mesh)
    dofs = local_dof_vectors(mesh, field)
    G = np.einsum("tij,tj->ti", ops["D"], dofs)
    grad_part = (mesh.areas * (G**2).sum(axis=1)).sum()
    gaps = np.einsum("tkj,tj->tk", ops["QB"], dofs)
    stab_part = (ops["stab_w"] * gaps**2).sum()
    return float(np.sqrt(grad_part + stab_part))
