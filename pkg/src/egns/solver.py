"""Direct saddle-point solves, Newton iteration, viscosity continuation.

One linear solve factors the full saddle matrix with sparse LU; problem
sizes stay in direct-solver territory.  For pure-Dirichlet problems the
pressure is only determined up to a constant: the factorization pins one
pressure unknown and drops the matching redundant mass row, then shifts
the result back to zero area-weighted mean.  Pinning instead of a
Lagrange multiplier matters for cost: the multiplier column is dense in
the pressure block and inflates LU fill by roughly an order of magnitude.

Convergence is declared when the relative update of the stacked free
velocity/pressure vector drops below the tolerance, or when the assembled
nonlinear residual at the new iterate is already at solver precision.  The
second test is what lets linear problems finish in one iteration.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import SteadyProblem

logger = logging.getLogger(__name__)

__all__ = [
    "SolverError",
    "SingularSystemError",
    "NonConvergenceError",
    "NewtonConfig",
    "SolveReport",
    "solve_saddle",
    "newton_solve",
    "default_schedule",
    "nu_continuation",
]

_TINY = 1e-300


class SolverError(Exception):
    pass


class SingularSystemError(SolverError):
    """Factorization hit an exactly singular pivot."""


class NonConvergenceError(SolverError):
    """Newton ran out of iterations; carries the best iterate seen."""

    def __init__(self, message, best=None, report=None, stage=None):
        super().__init__(message)
        self.best = best
        self.report = report
        self.stage = stage


@dataclass
class NewtonConfig:
    rel_tol: float = 1e-7
    max_iter: int = 1000
    continuation: list | None = None

    def __post_init__(self):
        if self.rel_tol <= 0:
            raise ValueError(f"rel_tol must be positive, got {self.rel_tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}")
        if self.continuation is not None:
            seq = list(self.continuation)
            if any(not a > b for a, b in zip(seq, seq[1:])):
                raise ValueError("continuation schedule must be strictly decreasing")


@dataclass
class SolveReport:
    iterations: int
    final_update: float
    history: list
    wall_time: float
    converged: bool = True

    def to_log(self):
        lines = [
            f"iter {i + 1}: rel_update {u:.6e}" for i, u in enumerate(self.history)
        ]
        lines.append(
            f"converged={self.converged} iterations={self.iterations} "
            f"final_update={self.final_update:.6e} wall_time={self.wall_time:.3f}s"
        )
        return "\n".join(lines)


def solve_saddle(system):
    """Solve one linearized system, returning (velocity field, pressures).

    Constrained velocity entries are reinserted from the dof map.  One
    iterative refinement pass follows the factorization; the block
    residuals are then required to sit at solver precision relative to
    the data.
    """
    dm = system.dof_map
    free = dm.free_indices()
    nf = free.size

    A_ff = system.A[free][:, free]
    B_f = system.B[:, free]
    pinned = system.mean_constraint is not None
    if pinned:
        # mass row 0 is an exact linear combination of the others over the
        # free columns, so dropping it together with pressure unknown 0
        # leaves an equivalent nonsingular system
        B_red = B_f[1:]
        K = sp.bmat([[A_ff, -B_red.T], [B_red, None]], format="csc")
        rhs = np.concatenate([system.rhs_u[free], system.rhs_p[1:]])
    else:
        K = sp.bmat([[A_ff, -B_f.T], [B_f, None]], format="csc")
        rhs = np.concatenate([system.rhs_u[free], system.rhs_p])

    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise SingularSystemError(f"sparse factorization failed: {exc}") from exc

    x = lu.solve(rhs)
    x += lu.solve(rhs - K @ x)

    uf = x[:nf]
    if pinned:
        a = system.mean_constraint
        pressure = np.concatenate([[0.0], x[nf:]])
        pressure -= (a @ pressure) / a.sum()
    else:
        pressure = x[nf:].copy()

    # residuals of the full block equations at the returned state
    ru = float(
        np.linalg.norm(A_ff @ uf - B_f.T @ pressure - system.rhs_u[free])
    )
    rp_vec = B_f @ uf - system.rhs_p
    if pinned:
        rp_vec = rp_vec - ((a @ rp_vec) / (a @ a)) * a
    rp = float(np.linalg.norm(rp_vec))
    scale = max(
        float(np.linalg.norm(system.rhs_u[free])),
        float(np.linalg.norm(system.rhs_p)),
        _TINY,
    )
    if max(ru, rp) > 1e-10 * scale:
        raise SolverError(
            f"saddle solve residuals too large: momentum {ru:.3e}, "
            f"mass {rp:.3e}, data scale {scale:.3e}"
        )

    full = np.where(dm.constrained, dm.values, 0.0)
    full[free] = uf
    return dm.unpack(full), pressure


def _stacked(system, fld, pressure):
    free = system.dof_map.free_indices()
    return np.concatenate([system.dof_map.pack(fld)[free], pressure])


def _nonlinear_residual(system, fld, pressure):
    """Relative residual of the discrete equations at the given state.

    Valid when the system was assembled at that same state: the Newton
    value terms on the right cancel the linearization overshoot exactly.
    """
    dm = system.dof_map
    free = dm.free_indices()
    xf = np.where(dm.constrained, 0.0, dm.pack(fld))
    ru = (system.A @ xf - system.B.T @ pressure - system.rhs_u)[free]
    rp = system.B @ xf - system.rhs_p
    if system.mean_constraint is not None:
        a = system.mean_constraint
        rp = rp - ((a @ rp) / (a @ a)) * a
    scale = max(
        float(np.linalg.norm(system.rhs_u[free])),
        float(np.linalg.norm(system.rhs_p)),
        _TINY,
    )
    return max(float(np.linalg.norm(ru)), float(np.linalg.norm(rp))) / scale


def newton_solve(problem, config=None, initial=None):
    """Run the Newton loop on a steady problem from rest or a warm start.

    Returns ((velocity, pressure), report).  Raises NonConvergenceError
    with the last iterate attached if the iteration budget runs out.
    """
    config = config or NewtonConfig()
    t0 = time.perf_counter()

    if initial is None:
        state_field = None
        prev = None
    else:
        state_field, state_pressure = initial
        prev = None  # set after the first system is available

    system = problem.newton_system(state_field)
    if initial is not None:
        prev = _stacked(system, state_field, state_pressure)

    history = []
    residual_tol = 1e-2 * config.rel_tol
    solution = None

    for it in range(1, config.max_iter + 1):
        fld, pressure = solve_saddle(system)
        new = _stacked(system, fld, pressure)
        if prev is None:
            prev = np.zeros_like(new)
        denom = max(float(np.linalg.norm(new)), _TINY)
        rel = float(np.linalg.norm(new - prev)) / denom
        history.append(rel)
        solution = (fld, pressure)
        logger.debug("newton iter %d: rel update %.3e", it, rel)

        if rel < config.rel_tol:
            report = SolveReport(it, rel, history, time.perf_counter() - t0)
            return solution, report

        system = problem.newton_system(fld)
        res = _nonlinear_residual(system, fld, pressure)
        if res < residual_tol:
            # the fresh iterate already satisfies the nonlinear equations;
            # the next update would be zero, so record the residual measure
            report = SolveReport(it, res, history, time.perf_counter() - t0)
            return solution, report
        prev = new

    report = SolveReport(
        config.max_iter, history[-1], history, time.perf_counter() - t0,
        converged=False,
    )
    raise NonConvergenceError(
        f"no convergence after {config.max_iter} iterations "
        f"(last relative update {history[-1]:.3e})",
        best=solution,
        report=report,
    )


def default_schedule(nu_target, start=1e-3):
    """Viscosity ladder: halve from `start` and finish exactly on target."""
    if nu_target <= 0:
        raise ValueError(f"target viscosity must be positive, got {nu_target}")
    if nu_target >= start:
        return [nu_target]
    schedule = [start]
    while schedule[-1] / 2.0 > nu_target:
        schedule.append(schedule[-1] / 2.0)
    if schedule[-1] != nu_target:
        schedule.append(nu_target)
    return schedule


def nu_continuation(problem_or_factory, schedule, config=None):
    """Solve a decreasing viscosity sequence, warm-starting each stage.

    Accepts either a SteadyProblem (rebuilt per stage via with_nu) or a
    callable nu -> SteadyProblem for viscosity-dependent forcing.
    Returns ((velocity, pressure), [stage reports]).
    """
    schedule = list(schedule)
    if not schedule:
        raise ValueError("continuation schedule is empty")
    if any(not a > b for a, b in zip(schedule, schedule[1:])):
        raise ValueError("continuation schedule must be strictly decreasing")
    if isinstance(problem_or_factory, SteadyProblem):
        factory = problem_or_factory.with_nu
    else:
        factory = problem_or_factory

    state = None
    reports = []
    for stage, nu in enumerate(schedule):
        problem = factory(nu)
        try:
            state, report = newton_solve(problem, config, initial=state)
        except NonConvergenceError as exc:
            raise NonConvergenceError(
                f"continuation stage {stage} (nu={nu:g}) failed: {exc}",
                best=exc.best,
                report=exc.report,
                stage=stage,
            ) from exc
        reports.append(report)
        logger.info(
            "continuation stage %d: nu=%.6g converged in %d iterations",
            stage,
            nu,
            report.iterations,
        )
    return state, reports
