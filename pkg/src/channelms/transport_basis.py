"""Concentration multiscale basis construction.

Snapshots come in two families per domain: interface snapshots carry hat data
on the non-wall boundary with the physical wall condition, and wall snapshots
carry hat data in the wall condition itself with zero diffusive flux on the
interface.  A pooled variant imposes Dirichlet hats on the whole local
boundary.  All local boundary data is imposed weakly at the physical penalty,
matching the global scheme.  The reduction eigenproblem is diffusion-only;
one interior bubble per domain completes the space.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import (Discretization, LocalDomain,
                       assemble_local_concentration_forms, facet_rhs_values,
                       local_diffusion_with_bc, local_upwind_convection,
                       nitsche_rhs_values, scalar_mass, upwind_boundary_rhs)
from .mesh import CoarsePartition
from .spectral import spectral_reduce
from .velocity_basis import _boundary_node_data

log = logging.getLogger(__name__)

FAMILIES = ("interface", "wall", "pooled")
VARIANTS = ("elliptic", "timevelocity")


@dataclass
class ConcentrationSnapshotSet:
    domain: int
    family: str  # "interface" | "wall" | "pooled"
    bc_kind: str  # "dbc" | "nbc" | "rbc"
    variant: str  # "elliptic" | "timevelocity"
    nodes: np.ndarray
    snapshots: np.ndarray  # (n_snap, local scalar dofs)
    local: LocalDomain


@dataclass
class ConcentrationMsBasis:
    domain: int
    family: str
    eigenvalues: np.ndarray
    vectors: np.ndarray
    local: LocalDomain


def _check_args(family, bc_kind, variant, u_ms, tau):
    if family not in FAMILIES:
        raise ValueError(f"unknown snapshot family {family!r}")
    if bc_kind not in ("dbc", "nbc", "rbc"):
        raise ValueError(f"unknown wall boundary condition {bc_kind!r}")
    if variant not in VARIANTS:
        raise ValueError(f"unknown snapshot variant {variant!r}")
    if variant == "timevelocity" and (u_ms is None or tau is None):
        raise ValueError("timevelocity snapshots need a velocity and a time step")


def _local_operator(dz, dom, D, gamma_c, dirichlet_fids, robin_fids, alpha,
                    variant, u_ms, tau):
    A = local_diffusion_with_bc(dz, dom, D, gamma_c, dirichlet_fids,
                                robin_fids, alpha)
    sd = dom.scalar_dofs()
    if variant == "timevelocity":
        M = scalar_mass(dz)[sd, :][:, sd]
        C = local_upwind_convection(dz, dom, u_ms)[sd, :][:, sd]
        A = (A + M / tau + C).tocsr()
    return A


def _solve_local(A, rhs, M_loc=None):
    """Factor-and-solve; with M_loc given, the pure-Neumann nullspace is fixed
    by a zero-mean constraint through a Lagrange multiplier."""
    if M_loc is None:
        return splu(A.tocsc()).solve(rhs)
    m = np.asarray(M_loc @ np.ones(A.shape[0]))
    K = sp.bmat([[A, m[:, None]], [m[None, :], None]], format="csc")
    aug = np.zeros((A.shape[0] + 1, rhs.shape[1]))
    aug[:-1] = rhs
    return splu(K).solve(aug)[:-1]


def concentration_snapshots(dz: Discretization, partition: CoarsePartition,
                            i: int, family: str, bc_kind: str, variant: str,
                            D: float, alpha: float, gamma_c: float,
                            u_ms=None, tau=None) -> ConcentrationSnapshotSet:
    """Solve the local transport problems for every boundary trace node of the
    family's data boundary."""
    _check_args(family, bc_kind, variant, u_ms, tau)
    mesh = dz.mesh
    dom = LocalDomain.build(mesh, partition, i)
    sd = dom.scalar_dofs()
    n_loc = len(sd)
    ge, gw = dom.gamma_e, dom.gamma_w

    if family == "interface":
        data_fids, nitsche_data = ge, True
        dirichlet = np.concatenate([ge, gw]) if bc_kind == "dbc" else ge
        robin = gw if bc_kind == "rbc" else np.array([], dtype=int)
    elif family == "wall":
        if len(gw) == 0:
            return ConcentrationSnapshotSet(domain=i, family=family, bc_kind=bc_kind,
                                            variant=variant, nodes=np.array([], dtype=int),
                                            snapshots=np.zeros((0, n_loc)), local=dom)
        data_fids, nitsche_data = gw, bc_kind == "dbc"
        dirichlet = gw if bc_kind == "dbc" else np.array([], dtype=int)
        robin = gw if bc_kind == "rbc" else np.array([], dtype=int)
    else:  # pooled: Dirichlet hats on the whole local boundary
        data_fids, nitsche_data = dom.boundary(), True
        dirichlet = dom.boundary()
        robin = np.array([], dtype=int)

    if len(data_fids) == 0:
        raise ValueError(f"domain {i} has no data boundary for family {family!r}")

    A = _local_operator(dz, dom, D, gamma_c, dirichlet, robin, alpha,
                        variant, u_ms, tau)
    singular = (variant == "elliptic" and len(dirichlet) == 0
                and (len(robin) == 0 or alpha == 0.0))
    M_loc = scalar_mass(dz)[sd, :][:, sd] if singular else None

    nodes, gvals = _boundary_node_data(dz, data_fids)
    sides, signs = dom.inside_side(mesh, data_fids)
    rhs = np.zeros((n_loc, len(nodes)))
    for l in range(len(nodes)):
        if nitsche_data:
            F = nitsche_rhs_values(dz, data_fids, sides, signs, D,
                                   gamma_c, gvals[l])
            if variant == "timevelocity":
                F += upwind_boundary_rhs(dz, data_fids, sides, signs,
                                         u_ms.reshape(-1, 3, 2), gvals[l])
        elif bc_kind == "nbc":
            # prescribed outward diffusive flux datum
            F = facet_rhs_values(dz, data_fids, sides, gvals[l], coeff=-1.0)
        else:  # rbc wall data
            F = facet_rhs_values(dz, data_fids, sides, gvals[l], coeff=alpha)
        rhs[:, l] = F[sd]

    snaps = _solve_local(A, rhs, M_loc).T
    return ConcentrationSnapshotSet(domain=i, family=family, bc_kind=bc_kind,
                                    variant=variant, nodes=nodes,
                                    snapshots=snaps, local=dom)


def spectral_reduce_concentration(dz: Discretization, partition: CoarsePartition,
                                  snapshots: ConcentrationSnapshotSet,
                                  M: int | None, D: float,
                                  gamma_c: float) -> ConcentrationMsBasis:
    """Diffusion-only eigenproblem selecting the M dominant snapshot modes."""
    A, S = assemble_local_concentration_forms(dz, partition, snapshots.domain,
                                              D, gamma_c)
    if len(snapshots.snapshots) == 0:
        return ConcentrationMsBasis(domain=snapshots.domain, family=snapshots.family,
                                    eigenvalues=np.zeros(0),
                                    vectors=np.zeros((0, A.shape[0])),
                                    local=snapshots.local)
    basis = spectral_reduce(snapshots.snapshots, A, S,
                            _cap(snapshots, A, S, M))
    return ConcentrationMsBasis(domain=snapshots.domain, family=snapshots.family,
                                eigenvalues=basis.eigenvalues, vectors=basis.vectors,
                                local=snapshots.local)


def _cap(snapshots, A, S, M):
    if M is not None:
        return M
    probe = spectral_reduce(snapshots.snapshots, A, S, 0)
    return len(probe.eigenvalues)


def interior_basis(dz: Discretization, partition: CoarsePartition, i: int,
                   variant: str, D: float, gamma_c: float,
                   u_ms=None, tau=None) -> np.ndarray:
    """Per-domain bubble: zero Dirichlet trace, unit source, unit L2 norm."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown snapshot variant {variant!r}")
    if variant == "timevelocity" and (u_ms is None or tau is None):
        raise ValueError("timevelocity bubble needs a velocity and a time step")
    dom = LocalDomain.build(dz.mesh, partition, i)
    sd = dom.scalar_dofs()
    bd = dom.boundary()
    A = _local_operator(dz, dom, D, gamma_c, bd, np.array([], dtype=int), 0.0,
                        variant, u_ms, tau)
    M_loc = scalar_mass(dz)[sd, :][:, sd]
    scale = 1.0 / tau if variant == "timevelocity" else 1.0
    F = scale * np.asarray(M_loc @ np.ones(len(sd)))
    c = splu(A.tocsc()).solve(F)
    nrm = np.sqrt(c @ (M_loc @ c))
    if nrm > 0:
        c = c / nrm
    return c


@dataclass
class ConcentrationSpace:
    """Global reduced concentration space: family modes plus one bubble per
    domain."""

    kind: str  # "type1" | "type2"
    M: int | None
    bc_kind: str
    variant: str
    bases: list
    R_c: sp.csr_matrix
    n_domains: int
    eigen_rows: list = field(default_factory=list)  # (domain, family, k, lam)

    @property
    def n_rows(self) -> int:
        return self.R_c.shape[0]

    def reported_dof(self) -> int:
        """N_H(M+1) pooled, N_H(2M+1) per-family."""
        M = self.M if self.M is not None else 0
        if self.kind == "type1":
            return self.n_domains * (M + 1)
        return self.n_domains * (2 * M + 1)


def build_concentration_space(dz: Discretization, partition: CoarsePartition,
                              kind: str, M: int | None, bc_kind: str,
                              variant: str, D: float, alpha: float,
                              gamma_c: float, u_ms=None, tau=None,
                              threads: int = 1) -> ConcentrationSpace:
    """Assemble per-domain concentration bases into projection rows."""
    kind = kind.lower()
    if kind not in ("type1", "type2"):
        raise ValueError(f"unknown concentration space kind {kind!r}")
    families = ["pooled"] if kind == "type1" else ["interface", "wall"]

    def run(i):
        out = []
        for fam in families:
            snaps = concentration_snapshots(dz, partition, i, fam, bc_kind,
                                            variant, D, alpha, gamma_c, u_ms, tau)
            want = M
            if fam == "wall" and len(snaps.snapshots) == 0:
                log.warning("domain %d has no wall facets; wall family empty", i)
                want = 0
            out.append(spectral_reduce_concentration(dz, partition, snaps,
                                                     want, D, gamma_c))
        bubble = interior_basis(dz, partition, i, variant, D, gamma_c, u_ms, tau)
        return out, bubble

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, range(partition.n_domains)))
    else:
        results = [run(i) for i in range(partition.n_domains)]

    rows, cols, vals = [], [], []
    bases, eigen_rows = [], []
    offset = 0
    for i, (fam_bases, bubble) in enumerate(results):
        sd_all = None
        for b in fam_bases:
            bases.append(b)
            sd = b.local.scalar_dofs()
            sd_all = sd
            for k in range(len(b.vectors)):
                rows.append(np.full(len(sd), offset + k))
                cols.append(sd)
                vals.append(b.vectors[k])
            offset += len(b.vectors)
            for k, lam in enumerate(b.eigenvalues):
                eigen_rows.append((b.domain, b.family, k, float(lam)))
        rows.append(np.full(len(sd_all), offset))
        cols.append(sd_all)
        vals.append(bubble)
        offset += 1
    R_c = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(offset, dz.dofs.n_concentration)).tocsr()
    return ConcentrationSpace(kind=kind, M=M, bc_kind=bc_kind, variant=variant,
                              bases=bases, R_c=R_c, n_domains=partition.n_domains,
                              eigen_rows=eigen_rows)


def expected_transport_dof(kind: str, n_domains: int, M: int) -> int:
    """Reported coarse transport dofs: N_H(M+1) pooled, N_H(2M+1) per-family."""
    if kind.lower() == "type1":
        return n_domains * (M + 1)
    return n_domains * (2 * M + 1)
