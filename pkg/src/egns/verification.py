"""Benchmark case definitions, error norms, and flow diagnostics.

Cases come in two flavours. A :class:`ManufacturedCase` carries closed-form
velocity, pressure, and body force, and is validated at construction time:
the stored force is compared against a finite-difference evaluation of the
rotational-form momentum equation, and the velocity is checked to be
divergence free. Typos in hand-derived forcing terms surface immediately
instead of as mysterious convergence-rate losses. A :class:`BenchmarkCase`
only carries boundary data and forcing; there is no exact solution to
validate against.

Error norms integrate the continuous velocity part against the exact
fields with a refined high-order quadrature so that the quadrature error
sits far below the discretization error being measured.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .assembly import SteadyProblem
from .eg_space import EGField, element_ops
from .mesh import (
    TAG_BOTTOM,
    TAG_INLET,
    TAG_LEFT,
    TAG_OUTLET,
    TAG_RIGHT,
    TAG_TOP,
    TAG_WALL,
    Mesh2D,
)
from .quadrature import quadrature_rule, refined_rule

__all__ = [
    "VerificationError",
    "ManufacturedCase",
    "BenchmarkCase",
    "case_vortex_2d",
    "case_noflow",
    "case_cavity",
    "case_step",
    "STEP_RECIRCULATION_BOX",
    "error_norms",
    "convergence_table",
    "ConvergenceTable",
    "velocity_l2_norm",
    "velocity_l2_difference",
    "kinematic_pressure",
    "recirculation_detect",
]

VectorFn = Callable[[np.ndarray], np.ndarray]
ScalarFn = Callable[[np.ndarray], np.ndarray]

# region of the backward-facing-step channel scanned for reversed flow
STEP_RECIRCULATION_BOX = (0.0, 4.0, 0.0, 1.0)


class VerificationError(ValueError):
    """A benchmark definition or diagnostic input is inconsistent."""


def _fd_jacobian(u: VectorFn, pts, h):
    ex = np.array([h, 0.0])
    ey = np.array([0.0, h])
    dx = (u(pts + ex) - u(pts - ex)) / (2.0 * h)
    dy = (u(pts + ey) - u(pts - ey)) / (2.0 * h)
    return np.stack([dx, dy], axis=-1)  # [..., i, j] = du_i/dx_j


def _fd_gradient_fn(u: VectorFn, h=1e-6) -> VectorFn:
    def grad(pts):
        return _fd_jacobian(u, pts, h)

    return grad


def _check_manufactured(case: "ManufacturedCase") -> None:
    rng = np.random.default_rng(7)
    (x0, x1), (y0, y1) = case.bounds
    lo = np.array([x0, y0])
    span = np.array([x1 - x0, y1 - y0])
    pts = lo + span * (0.05 + 0.9 * rng.random((24, 2)))

    u = case.velocity(pts)
    uscale = max(1.0, float(np.abs(u).max()))

    # divergence via fourth-order differences, exact for quintics
    hd = 1e-3 * min(span)

    def d1(axis, comp):
        e = np.zeros(2)
        e[axis] = hd
        return (
            -case.velocity(pts + 2 * e)[:, comp]
            + 8.0 * case.velocity(pts + e)[:, comp]
            - 8.0 * case.velocity(pts - e)[:, comp]
            + case.velocity(pts - 2 * e)[:, comp]
        ) / (12.0 * hd)

    div = d1(0, 0) + d1(1, 1)
    worst = float(np.abs(div).max())
    if worst > 1e-10 * uscale:
        raise VerificationError(
            f"case {case.name!r}: velocity divergence reaches {worst:.3e}, "
            "the field is not divergence free"
        )

    h1 = 1e-5 * min(span)
    J = _fd_jacobian(case.velocity, pts, h1)
    if case.velocity_gradient is not None:
        dev = float(np.abs(case.velocity_gradient(pts) - J).max())
        if dev > 1e-5 * max(1.0, float(np.abs(J).max())):
            raise VerificationError(
                f"case {case.name!r}: velocity gradient deviates from finite "
                f"differences by {dev:.3e}"
            )

    # momentum residual in rotational form:
    #   -nu*lap(u) + curl(u) x u + grad(p) = f
    h2 = 1e-4 * min(span)
    ex = np.array([h2, 0.0])
    ey = np.array([0.0, h2])
    lap = (
        case.velocity(pts + ex)
        + case.velocity(pts - ex)
        + case.velocity(pts + ey)
        + case.velocity(pts - ey)
        - 4.0 * u
    ) / h2**2
    exp = np.array([h1, 0.0])
    eyp = np.array([0.0, h1])
    gradp = np.stack(
        [
            (case.pressure(pts + exp) - case.pressure(pts - exp)) / (2.0 * h1),
            (case.pressure(pts + eyp) - case.pressure(pts - eyp)) / (2.0 * h1),
        ],
        axis=-1,
    )
    omega = J[:, 1, 0] - J[:, 0, 1]
    f_fd = (
        -case.nu * lap
        + omega[:, None] * np.stack([-u[:, 1], u[:, 0]], axis=-1)
        + gradp
    )
    f = case.body_force(pts)
    fscale = max(
        float(np.abs(f).max()), case.nu * float(np.abs(lap).max()), 1.0
    )
    dev = float(np.abs(f - f_fd).max())
    if dev > 1e-6 * fscale:
        raise VerificationError(
            f"case {case.name!r}: body force deviates from the momentum "
            f"equation by {dev:.3e} (scale {fscale:.3e})"
        )


@dataclass
class ManufacturedCase:
    """Closed-form exact solution plus matching body force.

    All field callables take points with shape (..., 2); velocity and
    body_force return (..., 2), pressure returns (...,), and the optional
    velocity_gradient returns (..., 2, 2) with [i, j] = du_i/dx_j.
    Construction cross-checks the fields against each other and raises
    VerificationError on any mismatch.
    """

    name: str
    nu: float
    velocity: VectorFn
    velocity_gradient: Optional[VectorFn]
    pressure: ScalarFn
    body_force: VectorFn
    dirichlet: list
    bounds: tuple = ((0.0, 1.0), (0.0, 1.0))

    def __post_init__(self):
        if self.nu <= 0:
            raise VerificationError("viscosity must be positive")
        _check_manufactured(self)

    def problem(self, mesh: Mesh2D, **overrides) -> SteadyProblem:
        kw = dict(
            nu=self.nu,
            body_force=self.body_force,
            dirichlet=list(self.dirichlet),
        )
        kw.update(overrides)
        return SteadyProblem(mesh, **kw)


@dataclass
class BenchmarkCase:
    """Boundary data and forcing for a flow without a closed-form solution."""

    name: str
    nu: float
    dirichlet: list
    body_force: Optional[VectorFn] = None
    neumann_tags: tuple = ()
    neumann_data: Optional[VectorFn] = None

    def __post_init__(self):
        if self.nu <= 0:
            raise VerificationError("viscosity must be positive")

    def problem(self, mesh: Mesh2D, **overrides) -> SteadyProblem:
        kw = dict(
            nu=self.nu,
            body_force=self.body_force,
            dirichlet=list(self.dirichlet),
            neumann_tags=self.neumann_tags,
            neumann_data=self.neumann_data,
        )
        kw.update(overrides)
        return SteadyProblem(mesh, **kw)


def case_vortex_2d(nu: float = 1.0) -> ManufacturedCase:
    """Polynomial vortex on the unit square with a bilinear pressure.

    The stream function is 5*a(x)*a(y) with a(s) = s^2 (s-1)^2, so the
    velocity vanishes on the whole boundary and at the center. The body
    force is assembled for the rotational form, where the pressure plays
    the role of total (Bernoulli) pressure.
    """

    def a(s):
        return s * s * (s - 1.0) ** 2

    def da(s):
        return 2.0 * s * (s - 1.0) * (2.0 * s - 1.0)

    def d2a(s):
        return 12.0 * s * s - 12.0 * s + 2.0

    def d3a(s):
        return 24.0 * s - 12.0

    def velocity(xy):
        x, y = xy[..., 0], xy[..., 1]
        return np.stack([5.0 * a(x) * da(y), -5.0 * da(x) * a(y)], axis=-1)

    def velocity_gradient(xy):
        x, y = xy[..., 0], xy[..., 1]
        row1 = np.stack([5.0 * da(x) * da(y), 5.0 * a(x) * d2a(y)], axis=-1)
        row2 = np.stack([-5.0 * d2a(x) * a(y), -5.0 * da(x) * da(y)], axis=-1)
        return np.stack([row1, row2], axis=-2)

    def pressure(xy):
        return 10.0 * (2.0 * xy[..., 0] - 1.0) * (2.0 * xy[..., 1] - 1.0)

    def body_force(xy):
        x, y = xy[..., 0], xy[..., 1]
        u1 = 5.0 * a(x) * da(y)
        u2 = -5.0 * da(x) * a(y)
        omega = -5.0 * (d2a(x) * a(y) + a(x) * d2a(y))
        f1 = (
            -5.0 * nu * (d2a(x) * da(y) + a(x) * d3a(y))
            - omega * u2
            + 20.0 * (2.0 * y - 1.0)
        )
        f2 = (
            5.0 * nu * (d3a(x) * a(y) + da(x) * d2a(y))
            + omega * u1
            + 20.0 * (2.0 * x - 1.0)
        )
        return np.stack([f1, f2], axis=-1)

    sides = (TAG_BOTTOM, TAG_RIGHT, TAG_TOP, TAG_LEFT)
    return ManufacturedCase(
        name=f"vortex_nu{nu:g}",
        nu=nu,
        velocity=velocity,
        velocity_gradient=velocity_gradient,
        pressure=pressure,
        body_force=body_force,
        dirichlet=[(sides, velocity)],
    )


def case_noflow(ra: float = 1000.0) -> ManufacturedCase:
    """Hydrostatic balance: zero velocity, gravity-like forcing.

    The force is the exact gradient of a quadratic pressure, so any
    velocity the discrete solver produces is a pressure-robustness defect.
    """

    def velocity(xy):
        return np.zeros(xy.shape)

    def velocity_gradient(xy):
        return np.zeros(xy.shape[:-1] + (2, 2))

    def pressure(xy):
        y = xy[..., 1]
        return -0.5 * ra * y * y + ra * y - ra / 3.0

    def body_force(xy):
        y = xy[..., 1]
        return np.stack([np.zeros_like(y), ra * (1.0 - y)], axis=-1)

    sides = (TAG_BOTTOM, TAG_RIGHT, TAG_TOP, TAG_LEFT)
    return ManufacturedCase(
        name="noflow",
        nu=1.0,
        velocity=velocity,
        velocity_gradient=velocity_gradient,
        pressure=pressure,
        body_force=body_force,
        dirichlet=[(sides, velocity)],
    )


def case_cavity(forcing: str = "f1", nu: float = 1.0) -> BenchmarkCase:
    """Lid-driven cavity, optionally with a large gradient body force.

    forcing "f1" is unforced; "f2" adds the gradient field
    (1e6/3) * grad(x^3 + y^3), which a pressure-robust scheme must absorb
    into the pressure without disturbing the velocity.
    """
    if forcing not in ("f1", "f2"):
        raise ValueError(f"unknown cavity forcing {forcing!r}")

    body = None
    if forcing == "f2":

        def body(xy):
            x, y = xy[..., 0], xy[..., 1]
            return np.stack([1e6 * x * x, 1e6 * y * y], axis=-1)

    def walls(xy):
        return np.zeros(xy.shape)

    def lid(xy):
        shape = xy.shape[:-1]
        return np.stack([np.ones(shape), np.zeros(shape)], axis=-1)

    return BenchmarkCase(
        name=f"cavity_{forcing}",
        nu=nu,
        dirichlet=[
            ((TAG_BOTTOM, TAG_LEFT, TAG_RIGHT), walls),
            ((TAG_TOP,), lid),
        ],
        body_force=body,
    )


def case_step(re: float = 100.0, inlet: str = "parabolic") -> BenchmarkCase:
    """Backward-facing step channel at Reynolds number ``re``.

    The inlet occupies x = -4, 1 <= y <= 2. The parabolic profile
    (6 (y-1) (2-y), 0) has unit mean speed, so Re = 1/nu directly; the
    "constant" variant imposes a plug profile (1, 0). The outlet at x = 20
    is traction free.
    """
    if re <= 0:
        raise VerificationError("Reynolds number must be positive")

    if inlet == "parabolic":

        def inflow(xy):
            y = xy[..., 1]
            return np.stack([6.0 * (y - 1.0) * (2.0 - y), np.zeros_like(y)], axis=-1)

    elif inlet == "constant":

        def inflow(xy):
            shape = xy.shape[:-1]
            return np.stack([np.ones(shape), np.zeros(shape)], axis=-1)

    else:
        raise ValueError(f"unknown inlet profile {inlet!r}")

    def walls(xy):
        return np.zeros(xy.shape)

    return BenchmarkCase(
        name=f"step_re{re:g}_{inlet}",
        nu=1.0 / re,
        dirichlet=[((TAG_WALL,), walls), ((TAG_INLET,), inflow)],
        neumann_tags=(TAG_OUTLET,),
        neumann_data=None,
    )


def error_norms(
    mesh: Mesh2D,
    solution,
    velocity: VectorFn,
    pressure: ScalarFn,
    velocity_gradient: Optional[VectorFn] = None,
    degree: int = 8,
):
    """L2 and broken H1 errors of the continuous velocity part and the
    L2 pressure error, as a (e_l2, e_h1, e_p) tuple.

    ``solution`` is an (EGField, element pressures) pair. The exact fields
    are sampled on a refined high-degree rule; the gradient falls back to
    central differences of ``velocity`` when no closed form is supplied.
    """
    fld, p_h = solution
    rule = refined_rule(quadrature_rule(degree))
    X = rule.physical_points(mesh)  # (NT, nq, 2)
    w = rule.weights
    areas = mesh.areas

    V = fld.vertex_values[mesh.triangles]  # (NT, 3, 2)
    u0 = np.einsum("qk,tkd->tqd", rule.points, V)
    du = velocity(X) - u0
    e_l2 = float(np.sqrt(areas @ np.einsum("q,tqd,tqd->t", w, du, du)))

    ops = element_ops(mesh)
    g0 = np.einsum("tkd,tke->tde", V, ops["gradl"])  # constant per element
    if velocity_gradient is None:
        velocity_gradient = _fd_gradient_fn(velocity)
    dg = velocity_gradient(X) - g0[:, None, :, :]
    e_h1 = float(np.sqrt(areas @ np.einsum("q,tqde,tqde->t", w, dg, dg)))

    dp = pressure(X) - np.asarray(p_h)[:, None]
    e_p = float(np.sqrt(areas @ np.einsum("q,tq,tq->t", w, dp, dp)))
    return e_l2, e_h1, e_p


def velocity_l2_norm(mesh: Mesh2D, fld: EGField) -> float:
    """L2 norm of the continuous velocity part (exact for piecewise P1)."""
    rule = quadrature_rule(2)
    V = fld.vertex_values[mesh.triangles]
    u0 = np.einsum("qk,tkd->tqd", rule.points, V)
    val = mesh.areas @ np.einsum("q,tqd,tqd->t", rule.weights, u0, u0)
    return float(np.sqrt(val))


def velocity_l2_difference(mesh: Mesh2D, a: EGField, b: EGField) -> float:
    diff = EGField(
        a.vertex_values - b.vertex_values, a.edge_values - b.edge_values
    )
    return velocity_l2_norm(mesh, diff)


def kinematic_pressure(mesh: Mesh2D, fld: EGField, pressure) -> np.ndarray:
    """Convert total pressure to kinematic pressure per element.

    Subtracts half the element mean of |u0|^2, integrated exactly for the
    piecewise linear velocity part.
    """
    rule = quadrature_rule(2)
    V = fld.vertex_values[mesh.triangles]
    u0 = np.einsum("qk,tkd->tqd", rule.points, V)
    mean_sq = np.einsum("q,tqd,tqd->t", rule.weights, u0, u0)
    return np.asarray(pressure, float) - 0.5 * mean_sq


def recirculation_detect(mesh: Mesh2D, fld: EGField, region, threshold=-1e-3):
    """Scan vertex velocities in an axis-aligned box for reversed flow.

    region is (xmin, xmax, ymin, ymax). Returns (detected, min u_x); the
    flow counts as recirculating when some vertex has u_x below the
    threshold, which filters solver-level noise around zero.
    """
    xmin, xmax, ymin, ymax = region
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    inside = (x >= xmin) & (x <= xmax) & (y >= ymin) & (y <= ymax)
    if not inside.any():
        raise VerificationError("recirculation region contains no mesh vertices")
    mn = float(fld.vertex_values[inside, 0].min())
    return mn < threshold, mn


@dataclass
class ConvergenceTable:
    """Mesh sizes, error triples, and the observed convergence orders."""

    h: np.ndarray
    errors: np.ndarray  # (levels, 3): velocity L2, velocity H1, pressure L2
    orders: np.ndarray  # (levels, 3), first row is nan

    def to_csv(self) -> str:
        lines = ["h,e_l2,order,e_h1,order,e_p,order"]
        for i in range(self.h.size):
            cells = [f"{self.h[i]:.10g}"]
            for j in range(3):
                cells.append(f"{self.errors[i, j]:.6e}")
                o = self.orders[i, j]
                cells.append("" if np.isnan(o) else f"{o:.2f}")
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def to_log(self) -> str:
        header = f"{'h':>10} {'|u-u0|_0':>12} {'ord':>6} {'|u-u0|_1':>12} {'ord':>6} {'|p-p_h|_0':>12} {'ord':>6}"
        lines = [header]
        for i in range(self.h.size):
            cells = [f"{self.h[i]:>10.6f}"]
            for j in range(3):
                cells.append(f"{self.errors[i, j]:>12.3e}")
                o = self.orders[i, j]
                cells.append("     -" if np.isnan(o) else f"{o:>6.2f}")
            lines.append(" ".join(cells))
        return "\n".join(lines)


def convergence_table(h_values, errors) -> ConvergenceTable:
    """Observed orders log(e_i/e_{i+1}) / log(h_i/h_{i+1}) for error triples.

    Zero or otherwise degenerate error entries leave a blank order.
    """
    h = np.asarray(h_values, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.ndim != 1 or h.size < 2:
        raise ValueError("need at least two mesh levels")
    if e.shape != (h.size, 3):
        raise ValueError(f"errors must have shape ({h.size}, 3), got {e.shape}")
    if np.any(np.diff(h) >= 0):
        raise ValueError("mesh sizes must strictly decrease")
    if np.any(e < 0):
        raise ValueError("error norms cannot be negative")

    orders = np.full_like(e, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = e[:-1] / e[1:]
        orders[1:] = np.log(ratio) / np.log(h[:-1] / h[1:])[:, None]
    orders[~np.isfinite(orders)] = np.nan
    return ConvergenceTable(h=h, errors=e, orders=orders)
