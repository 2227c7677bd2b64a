"""Coarse (reduced-order) flow and transport solves.

Projection matrices stack the per-domain basis rows; pressure is reduced to
one piecewise-constant value per domain.  Coarse systems are dense and tiny,
so every step is a direct dense solve; reconstruction is the transpose map
back to fine dofs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import Discretization, FlowOperators, assemble_convection
from .fine_solver import STEADY_TOL, TimeGrid
from .mesh import CoarsePartition
from .transport_basis import ConcentrationSpace
from .velocity_basis import VelocitySpace


@dataclass
class MultiscaleSpace:
    """Projection matrices for the reduced spaces."""

    R_u: sp.csr_matrix
    R_p: sp.csr_matrix  # 0/1 domain indicators over pressure dofs
    R_c: sp.csr_matrix | None
    velocity_space: VelocitySpace | None = None
    concentration_space: ConcentrationSpace | None = None


def pressure_indicators(dz: Discretization, partition: CoarsePartition) -> sp.csr_matrix:
    rows = partition.cell_to_domain
    cols = np.arange(dz.mesh.n_cells)
    vals = np.ones(dz.mesh.n_cells)
    return sp.coo_matrix((vals, (rows, cols)),
                         shape=(partition.n_domains, dz.mesh.n_cells)).tocsr()


def build_multiscale_space(dz: Discretization, partition: CoarsePartition,
                           velocity_space: VelocitySpace,
                           concentration_space: ConcentrationSpace | None = None
                           ) -> MultiscaleSpace:
    return MultiscaleSpace(
        R_u=velocity_space.R_u,
        R_p=pressure_indicators(dz, partition),
        R_c=None if concentration_space is None else concentration_space.R_c,
        velocity_space=velocity_space,
        concentration_space=concentration_space,
    )


@dataclass
class CoarseFlowOperators:
    M: np.ndarray
    A: np.ndarray
    B: np.ndarray
    Fu: np.ndarray
    Fp: np.ndarray


def project_flow(space: MultiscaleSpace, ops: FlowOperators) -> CoarseFlowOperators:
    Ru, Rp = space.R_u, space.R_p
    return CoarseFlowOperators(
        M=np.asarray((Ru @ ops.M @ Ru.T).todense()),
        A=np.asarray((Ru @ ops.A @ Ru.T).todense()),
        B=np.asarray((Rp @ ops.B @ Ru.T).todense()),
        Fu=np.asarray(Ru @ ops.Fu),
        Fp=np.asarray(Rp @ ops.Fp),
    )


def _dense_solve(K, rhs):
    try:
        return np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(K, rhs, rcond=None)[0]


@dataclass
class CoarseFlowSolution:
    coefficients: list  # u_H per step
    pressures: list  # p_H per step
    steady_step: int | None
    space: MultiscaleSpace

    def velocity_at(self, step: int) -> np.ndarray:
        """Fine-grid reconstruction; returns a cached array once steady."""
        k = min(step, len(self._fine) - 1)
        return self._fine[k]

    def reconstruct(self):
        self._fine = [np.asarray(self.space.R_u.T @ uH) for uH in self.coefficients]

    @property
    def final_velocity(self) -> np.ndarray:
        return self._fine[-1]


def solve_coarse_flow(space: MultiscaleSpace, cops: CoarseFlowOperators,
                      grid: TimeGrid, u0_fine: np.ndarray | None = None,
                      ops: FlowOperators | None = None,
                      steady_tol: float = STEADY_TOL) -> CoarseFlowSolution:
    """Implicit Euler on the reduced saddle system; freezes at steady state."""
    nU = cops.A.shape[0]
    nP = cops.B.shape[0]
    tau = grid.tau
    K = np.zeros((nU + nP, nU + nP))
    K[:nU, :nU] = cops.M / tau + cops.A
    K[:nU, nU:] = cops.B.T
    K[nU:, :nU] = cops.B

    if u0_fine is None or ops is None:
        uH = np.zeros(nU)
    else:
        # mass-orthogonal projection of the fine initial state
        uH = _dense_solve(np.asarray((space.R_u @ ops.M @ space.R_u.T).todense()),
                          np.asarray(space.R_u @ (ops.M @ u0_fine)))
    sol = CoarseFlowSolution(coefficients=[uH], pressures=[np.zeros(nP)],
                             steady_step=None, space=space)
    for step in range(1, grid.n_steps + 1):
        rhs = np.concatenate([cops.Fu + cops.M @ uH / tau, cops.Fp])
        x = _dense_solve(K, rhs)
        unew, p = x[:nU], x[nU:]
        sol.coefficients.append(unew)
        sol.pressures.append(p)
        if np.linalg.norm(unew - uH) <= steady_tol * max(np.linalg.norm(unew), 1e-300):
            sol.steady_step = step
            break
        uH = unew
    sol.reconstruct()
    return sol


@dataclass
class CoarseTransportSolution:
    times: np.ndarray
    final: np.ndarray  # fine-grid reconstruction at t_max
    reported: dict  # step -> fine-grid reconstruction
    coefficients: np.ndarray  # c_H at t_max


def solve_coarse_transport(dz: Discretization, space: MultiscaleSpace,
                           M: sp.spmatrix, A: sp.spmatrix, F_static: np.ndarray,
                           velocity_at, c_in, grid: TimeGrid, c0: np.ndarray,
                           report_steps=()) -> CoarseTransportSolution:
    """Reduced implicit Euler transport.

    M, A, F_static are the fine operators; convection is reassembled and
    reprojected whenever `velocity_at(step)` returns a new array.
    """
    Rc = space.R_c
    tau = grid.tau
    M_H = np.asarray((Rc @ M @ Rc.T).todense())
    A_H = np.asarray((Rc @ A @ Rc.T).todense())
    F_H = np.asarray(Rc @ F_static)
    cH = _dense_solve(M_H, np.asarray(Rc @ (M @ np.asarray(c0, dtype=float))))

    reported = {}
    report = set(int(s) for s in report_steps)
    cached_u = object()
    C_H = np.zeros_like(A_H)
    Fc_H = np.zeros_like(F_H)
    K = None
    for step in range(1, grid.n_steps + 1):
        u = velocity_at(step)
        if u is not cached_u:
            if u is None:
                C_H = np.zeros_like(A_H)
                Fc_H = np.zeros_like(F_H)
            else:
                C, Fc = assemble_convection(dz, u, c_in)
                C_H = np.asarray((Rc @ C @ Rc.T).todense())
                Fc_H = np.asarray(Rc @ Fc)
            K = M_H / tau + A_H + C_H
            cached_u = u
        cH = _dense_solve(K, F_H + Fc_H + M_H @ cH / tau)
        if step in report:
            reported[step] = np.asarray(Rc.T @ cH)
    return CoarseTransportSolution(times=grid.times(), final=np.asarray(Rc.T @ cH),
                                   reported=reported, coefficients=cH)
