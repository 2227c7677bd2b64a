"""Velocity multiscale basis construction.

Per coarse domain, snapshots are local Stokes solves driven by hat-function
boundary data on the non-wall boundary (one snapshot per boundary trace node
and direction), with a constant divergence source enforcing compatibility.
A generalized eigenproblem built from the local viscous form and the boundary
Gram matrix then selects the dominant modes.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import (DATA_PENALTY, Discretization, LocalDomain,
                       assemble_local_stokes, assemble_local_velocity_forms,
                       nitsche_rhs_values)
from .mesh import CoarsePartition
from .spectral import SpectralBasis, spectral_reduce


@dataclass
class VelocitySnapshotSet:
    """Local Stokes snapshots on one domain.

    direction is 0/1 for a per-direction family, or None when both directions
    are pooled into one set.  snapshots has shape (n_snap, local velocity dofs)
    ordered by boundary node (then direction for pooled sets).
    """

    domain: int
    direction: int | None
    nodes: np.ndarray  # global mesh node ids on the non-wall boundary
    snapshots: np.ndarray
    local: LocalDomain


@dataclass
class VelocityMsBasis:
    domain: int
    direction: int | None
    eigenvalues: np.ndarray
    vectors: np.ndarray  # (M, local velocity dofs)
    local: LocalDomain


def _boundary_node_data(dz: Discretization, fids: np.ndarray):
    """Hat-function data per boundary trace node on the given facets.

    Returns (nodes, gvals) with gvals of shape (n_nodes, n_facets, nq): the
    trace of the hat centered at each node along each facet.
    """
    mesh, quad = dz.mesh, dz.quad
    t = quad.facet_points
    pairs = mesh.facets[fids]  # (nF, 2)
    nodes = np.unique(pairs)
    gvals = np.zeros((len(nodes), len(fids), len(t)))
    pos = {n: k for k, n in enumerate(nodes)}
    for j, (a, b) in enumerate(pairs):
        gvals[pos[a], j] = 1.0 - t
        gvals[pos[b], j] = t
    return nodes, gvals


def velocity_snapshots(dz: Discretization, partition: CoarsePartition, i: int,
                       direction: int | None, mu: float,
                       gamma_u: float) -> VelocitySnapshotSet:
    """Solve the local Stokes problems for every boundary trace node.

    Each snapshot imposes a unit hat in the given component on the non-wall
    boundary (zero on walls), with the constant divergence source required for
    compatibility; the local pressure constant is pinned at one dof.
    """
    mesh = dz.mesh
    dom = LocalDomain.build(mesh, partition, i)
    if len(dom.gamma_e) == 0:
        raise ValueError(f"domain {i} has no non-wall boundary facets")
    ge = dom.gamma_e
    sides, signs = dom.inside_side(mesh, ge)
    nodes, gvals = _boundary_node_data(dz, ge)

    A, B = assemble_local_stokes(dz, dom, mu, gamma_u)
    nv = A.shape[0]
    npr = B.shape[0]
    K = sp.bmat([[A, B.T], [B, None]], format="lil")
    # pin the pressure constant: replace the first continuity row by p_0 = 0
    K.rows[nv] = [nv]
    K.data[nv] = [1.0]
    try:
        lu = splu(K.tocsc())
    except RuntimeError as exc:
        raise RuntimeError(f"singular local flow system on domain {i}: {exc}")

    # geometric facet data for the loads
    lens = dz.facet_geom.lengths[ge]
    normals = dz.facet_geom.normals[ge] * signs[:, None]
    in_cells = mesh.facet_cells[ge, sides]
    cell_pos = {c: k for k, c in enumerate(dom.cells)}
    local_in = np.array([cell_pos[c] for c in in_cells])
    areas = dz.cell_geom.areas[dom.cells]
    volume = areas.sum()
    w = dz.quad.facet_weights
    vdofs = dom.velocity_dofs()

    directions = [direction] if direction is not None else [0, 1]
    gint = np.einsum("q,lfq->lf", w, gvals)  # ∫ hat ds / len
    rhs_cols = []
    for r in directions:
        for l in range(len(nodes)):
            fs = nitsche_rhs_values(dz, ge, sides, signs, mu,
                                    gamma_u * DATA_PENALTY, gvals[l])
            # scalar dof 3c+k maps to velocity dof 2*(3c+k)+r
            full = np.zeros(dz.dofs.n_velocity)
            full[2 * np.arange(dz.dofs.n_concentration) + r] = fs
            Fu = full[vdofs]
            flux = float(np.sum(lens * normals[:, r] * gint[l]))
            Fp = np.zeros(npr)
            np.add.at(Fp, local_in, lens * normals[:, r] * gint[l])
            Fp -= flux / volume * areas
            Fp[0] = 0.0  # pinned row
            rhs_cols.append(np.concatenate([Fu, Fp]))

    sols = lu.solve(np.stack(rhs_cols, axis=1))
    snaps = sols[:nv].T  # (n_snap, nv)
    return VelocitySnapshotSet(domain=i, direction=direction, nodes=nodes,
                               snapshots=snaps, local=dom)


def spectral_reduce_velocity(dz: Discretization, partition: CoarsePartition,
                             snapshots: VelocitySnapshotSet, M: int | None,
                             mu: float, gamma_u: float) -> VelocityMsBasis:
    """Reduce a snapshot set to its M smallest-eigenvalue modes."""
    A, S = assemble_local_velocity_forms(dz, partition, snapshots.domain, mu, gamma_u)
    basis = _reduce(snapshots.snapshots, A, S, M)
    return VelocityMsBasis(domain=snapshots.domain, direction=snapshots.direction,
                           eigenvalues=basis.eigenvalues, vectors=basis.vectors,
                           local=snapshots.local)


def _reduce(snaps, A, S, M) -> SpectralBasis:
    if M is None:
        # full space: keep every mode the boundary Gram matrix supports
        probe = spectral_reduce(snaps, A, S, 0)
        M = len(probe.eigenvalues)
    return spectral_reduce(snaps, A, S, M)


@dataclass
class VelocitySpace:
    """Global reduced velocity space: stacked per-domain (per-direction) modes."""

    kind: str  # "type1" | "type2"
    M: int | None
    bases: list
    R_u: sp.csr_matrix  # (rows, fine velocity dofs)
    n_domains: int
    eigen_rows: list = field(default_factory=list)  # (domain, direction, k, lam)

    @property
    def n_rows(self) -> int:
        return self.R_u.shape[0]

    def reported_dof(self) -> int:
        """Coarse flow dof count including one pressure value per domain."""
        return self.n_rows + self.n_domains


def build_velocity_space(dz: Discretization, partition: CoarsePartition,
                         kind: str, M: int | None, mu: float, gamma_u: float,
                         threads: int = 1) -> VelocitySpace:
    """Build all per-domain bases and stack them into projection rows.

    kind "type1" pools both directions into one spectral problem per domain
    (M modes each); "type2" keeps a per-direction family (d*M modes each).
    """
    kind = kind.lower()
    if kind not in ("type1", "type2"):
        raise ValueError(f"unknown velocity space kind {kind!r}")
    directions = [None] if kind == "type1" else [0, 1]

    jobs = [(i, r) for i in range(partition.n_domains) for r in directions]

    def run(job):
        i, r = job
        snaps = velocity_snapshots(dz, partition, i, r, mu, gamma_u)
        return spectral_reduce_velocity(dz, partition, snaps, M, mu, gamma_u)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            bases = list(ex.map(run, jobs))
    else:
        bases = [run(j) for j in jobs]

    rows, cols, vals = [], [], []
    eigen_rows = []
    offset = 0
    for b in bases:
        vdofs = b.local.velocity_dofs()
        nb = len(b.vectors)
        for k in range(nb):
            rows.append(np.full(len(vdofs), offset + k))
            cols.append(vdofs)
            vals.append(b.vectors[k])
        for k, lam in enumerate(b.eigenvalues):
            eigen_rows.append((b.domain, -1 if b.direction is None else b.direction,
                               k, float(lam)))
        offset += nb
    R_u = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(offset, dz.dofs.n_velocity)).tocsr()
    return VelocitySpace(kind=kind, M=M, bases=bases, R_u=R_u,
                         n_domains=partition.n_domains, eigen_rows=eigen_rows)


def expected_flow_dof(kind: str, n_domains: int, M: int, d: int = 2) -> int:
    """Reported coarse flow dofs: N_H(M+1) pooled, N_H(d*M+1) per-direction."""
    if kind.lower() == "type1":
        return n_domains * (M + 1)
    return n_domains * (d * M + 1)
