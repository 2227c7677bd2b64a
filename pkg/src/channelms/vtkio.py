"""Legacy ASCII VTK output for DG fields.

Each triangle gets its own three points so discontinuous P1 fields can be
written as point data without averaging across cells; cell-wise constants
(pressure, domain markers) go out as cell data.
"""

from __future__ import annotations

import numpy as np

from .mesh import CoarsePartition, Mesh


def write_vtk(path, mesh: Mesh, concentration=None, velocity=None,
              pressure=None, partition: CoarsePartition | None = None):
    """Write an unstructured-grid VTK file with duplicated per-cell points.

    concentration: (3*nc,) scalar dofs; velocity: (6*nc,) interleaved x/y
    dofs; pressure: (nc,) cellwise constants.
    """
    nc = mesh.n_cells
    pts = mesh.nodes[mesh.cells].reshape(-1, 2)  # (3*nc, 2) duplicated
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("channelms fields\n")
        fh.write("ASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(pts)} double\n")
        for x, y in pts:
            fh.write(f"{float(x)!r} {float(y)!r} 0.0\n")
        fh.write(f"CELLS {nc} {4 * nc}\n")
        for c in range(nc):
            fh.write(f"3 {3 * c} {3 * c + 1} {3 * c + 2}\n")
        fh.write(f"CELL_TYPES {nc}\n")
        fh.write("5\n" * nc)  # VTK_TRIANGLE

        wrote_point_header = False
        if concentration is not None:
            fh.write(f"POINT_DATA {len(pts)}\n")
            wrote_point_header = True
            fh.write("SCALARS concentration double 1\nLOOKUP_TABLE default\n")
            for v in np.asarray(concentration, dtype=float):
                fh.write(f"{float(v)!r}\n")
        if velocity is not None:
            if not wrote_point_header:
                fh.write(f"POINT_DATA {len(pts)}\n")
                wrote_point_header = True
            u = np.asarray(velocity, dtype=float).reshape(-1, 2)
            fh.write("VECTORS velocity double\n")
            for ux, uy in u:
                fh.write(f"{float(ux)!r} {float(uy)!r} 0.0\n")

        wrote_cell_header = False
        if pressure is not None:
            fh.write(f"CELL_DATA {nc}\n")
            wrote_cell_header = True
            fh.write("SCALARS pressure double 1\nLOOKUP_TABLE default\n")
            for v in np.asarray(pressure, dtype=float):
                fh.write(f"{float(v)!r}\n")
        if partition is not None:
            if not wrote_cell_header:
                fh.write(f"CELL_DATA {nc}\n")
                wrote_cell_header = True
            fh.write("SCALARS domain int 1\nLOOKUP_TABLE default\n")
            for v in partition.cell_to_domain:
                fh.write(f"{int(v)}\n")
