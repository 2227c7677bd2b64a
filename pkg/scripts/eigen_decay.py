#!/usr/bin/env python3
"""Print per-domain eigenvalue decay of the local spectral problems, the
quantity that drives basis-count selection.

Usage: eigen_decay.py [--cells N] [--domains K] [--modes M]
"""

import argparse

import numpy as np

from channelms.assembly import Discretization
from channelms.mesh import ChannelParams, generate_channel, partition_coarse
from channelms.transport_basis import (concentration_snapshots,
                                       spectral_reduce_concentration)
from channelms.velocity_basis import spectral_reduce_velocity, velocity_snapshots


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cells", type=int, default=3000)
    ap.add_argument("--domains", type=int, default=10)
    ap.add_argument("--modes", type=int, default=10)
    args = ap.parse_args()

    params = ChannelParams(length=1.0, half_width=0.05, target_cells=args.cells)
    mesh = generate_channel(params)
    dz = Discretization.from_mesh(mesh)
    part = partition_coarse(mesh, args.domains, mode="structured")

    print("domain,family,eigenvalues")
    for i in range(part.n_domains):
        for r in (0, 1):
            snaps = velocity_snapshots(dz, part, i, r, 1.0, 8.0)
            basis = spectral_reduce_velocity(dz, part, snaps, args.modes, 1.0, 8.0)
            vals = ",".join("%.4g" % v for v in basis.eigenvalues)
            print(f"{i},u[{r}],{vals}")
        for fam in ("interface", "wall"):
            snaps = concentration_snapshots(dz, part, i, fam, "rbc",
                                            "elliptic", 0.01, 0.01, 8.0)
            basis = spectral_reduce_concentration(
                dz, part, snaps, min(args.modes, max(len(snaps.snapshots), 0)) or None,
                0.01, 8.0)
            vals = ",".join("%.4g" % v for v in basis.eigenvalues)
            print(f"{i},c[{fam}],{vals}")


if __name__ == "__main__":
    main()
