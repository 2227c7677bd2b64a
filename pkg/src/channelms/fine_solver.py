"""Fine-grid time stepping for flow and transport.

Both solvers use implicit Euler.  The flow factorization is computed once per
run; the transport factorization is recomputed only when the advecting
velocity changes, which in practice means once after the flow settles to its
steady state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import Discretization, FlowOperators, assemble_convection

STEADY_TOL = 1e-8


@dataclass(frozen=True)
class TimeGrid:
    t_max: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1 or self.t_max <= 0:
            raise ValueError("time grid needs t_max > 0 and at least one step")

    @property
    def tau(self) -> float:
        return self.t_max / self.n_steps

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.n_steps + 1)


@dataclass
class FlowSolution:
    """Velocity/pressure per step; after `steady_step` the fields are frozen
    and `velocity_at` keeps returning the same array object, which lets the
    transport solver skip refactorizations."""

    velocities: list = field(default_factory=list)
    pressures: list = field(default_factory=list)
    steady_step: int | None = None

    def velocity_at(self, step: int) -> np.ndarray:
        return self.velocities[min(step, len(self.velocities) - 1)]

    def pressure_at(self, step: int) -> np.ndarray:
        return self.pressures[min(step, len(self.pressures) - 1)]

    @property
    def final_velocity(self) -> np.ndarray:
        return self.velocities[-1]


def solve_flow(dz: Discretization, ops: FlowOperators, grid: TimeGrid,
               u0: np.ndarray | None = None,
               steady_tol: float = STEADY_TOL) -> FlowSolution:
    """March the saddle-point flow system, stopping early at steady state."""
    nU = dz.dofs.n_velocity
    tau = grid.tau
    K = sp.bmat([[ops.M / tau + ops.A, ops.B.T], [ops.B, None]], format="csc")
    lu = splu(K)
    u = np.zeros(nU) if u0 is None else np.asarray(u0, dtype=float).copy()
    sol = FlowSolution(velocities=[u], pressures=[np.zeros(dz.dofs.n_pressure)])
    for step in range(1, grid.n_steps + 1):
        rhs = np.concatenate([ops.Fu + ops.M @ u / tau, ops.Fp])
        x = lu.solve(rhs)
        unew, p = x[:nU], x[nU:]
        sol.velocities.append(unew)
        sol.pressures.append(p)
        du = np.linalg.norm(unew - u)
        if du <= steady_tol * max(np.linalg.norm(unew), 1e-300):
            sol.steady_step = step
            break
        u = unew
    return sol


def solve_steady_flow(dz: Discretization, ops: FlowOperators):
    """Direct steady solve (no mass term); returns (u, p)."""
    nU = dz.dofs.n_velocity
    K = sp.bmat([[ops.A, ops.B.T], [ops.B, None]], format="csc")
    x = splu(K).solve(np.concatenate([ops.Fu, ops.Fp]))
    return x[:nU], x[nU:]


@dataclass
class TransportSolution:
    times: np.ndarray
    final: np.ndarray
    reported: dict  # step index -> concentration vector


def solve_transport(dz: Discretization, M: sp.spmatrix, A: sp.spmatrix,
                    F_static: np.ndarray, velocity_at, c_in, grid: TimeGrid,
                    c0: np.ndarray, report_steps=()) -> TransportSolution:
    """Implicit Euler for (M/tau + A + C(u)) c = F + M c_prev / tau.

    `velocity_at(step)` supplies the advecting velocity (may be None for pure
    diffusion); factorization is reused while it returns the same array.
    """
    tau = grid.tau
    c = np.asarray(c0, dtype=float).copy()
    reported = {}
    report = set(int(s) for s in report_steps)
    lu = None
    cached_u = object()  # sentinel distinct from any array / None
    C = sp.csr_matrix(M.shape)
    F_conv = np.zeros(len(F_static))
    for step in range(1, grid.n_steps + 1):
        u = velocity_at(step)
        if u is not cached_u:
            if u is None:
                C = sp.csr_matrix(M.shape)
                F_conv = np.zeros(len(F_static))
            else:
                C, F_conv = assemble_convection(dz, u, c_in)
            lu = splu((M / tau + A + C).tocsc())
            cached_u = u
        c = lu.solve(F_static + F_conv + M @ c / tau)
        if step in report:
            reported[step] = c.copy()
    return TransportSolution(times=grid.times(), final=c, reported=reported)


def constant_concentration(dz: Discretization, value: float) -> np.ndarray:
    return np.full(dz.dofs.n_concentration, float(value))
