"""Shared helpers for solver verification studies."""

import numpy as np
from scipy.sparse.linalg import spsolve

from channelms.assembly import Discretization, assemble_transport
from channelms.dgspace import p1_values, quadrature
from channelms.mesh import ChannelParams, generate_channel

WIDTH = 0.2  # manufactured-solution channel width (length 1.0)

# acceptance verdict lines, echoed in the terminal summary by conftest
CRITERION_LINES = []


def _c_exact(x):
    return np.sin(np.pi * x[:, 1] / WIDTH)


def manufactured_transport_error(target_h, D=0.1, gamma_c=8.0):
    """Steady diffusion with weak Dirichlet walls against c = sin(pi y / W).

    Walls carry c = 0, the inlet carries the exact trace, the outlet is
    natural (the exact solution has zero normal derivative there); the source
    is D (pi/W)^2 sin(pi y / W).  Returns the quadrature L2 error.
    """
    params = ChannelParams(length=1.0, half_width=WIDTH / 2, target_h=target_h)
    mesh = generate_channel(params)
    dz = Discretization.from_mesh(mesh)
    k2 = D * (np.pi / WIDTH) ** 2
    ops = assemble_transport(dz, D=D, alpha=0.0, gamma_c=gamma_c,
                             wall_bc="dbc", wall_data=0.0, c_in=_c_exact,
                             u_h=None, source=lambda x: k2 * _c_exact(x))
    c_h = spsolve(ops.A.tocsr(), ops.F)
    return l2_error_vs_exact(dz, c_h, _c_exact), mesh.n_cells


def l2_error_vs_exact(dz, c_h, exact):
    """Quadrature L2 norm of c_h - exact over the mesh (order-5 cell rule)."""
    q = quadrature(5)
    vals = p1_values(q.cell_points)  # (nq, 3)
    p = dz.mesh.nodes[dz.mesh.cells]
    xq = np.einsum("qk,ckd->cqd", vals, p)
    ch = np.einsum("qk,ck->cq", vals, c_h.reshape(-1, 3))
    ex = np.stack([exact(xq[c]) for c in range(dz.mesh.n_cells)])
    err2 = 2.0 * dz.cell_geom.areas @ ((ch - ex) ** 2 @ q.cell_weights)
    return float(np.sqrt(err2))


def trend_ok(errors, slack=1.10):
    """Non-increasing within multiplicative slack between consecutive entries."""
    e = [x for x in errors if np.isfinite(x)]
    if len(e) != len(list(errors)):
        return False
    return all(b <= slack * a for a, b in zip(e, e[1:]))


def final_errors(report, Mu=None):
    """Final-time concentration errors per Mc from an ErrorReport, ordered."""
    out = {}
    for row in report.rows:
        if "error" in row:
            return None
        if Mu is not None and row["Mu"] != Mu:
            continue
        out[row["Mc"]] = row["e_c"].get("m40", float("nan"))
    return [out[m] for m in sorted(out)]


def velocity_errors(report):
    out = {}
    for row in report.rows:
        out[row["Mu"]] = row.get("e_u", float("nan"))
    return [out[m] for m in sorted(out)]
