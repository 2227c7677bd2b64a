#!/usr/bin/env python3
"""Error-vs-basis-count study on the straight-channel setup with reactive
(Robin) walls: velocity sweep M_u = 5..40 and concentration sweep
M_c = 1..20, errors reported at the four standard time indices.

Usage: run_test1.py [out_dir] [--variant elliptic|timevelocity] [--cells N]
"""

import argparse
import sys
from dataclasses import replace

from channelms.cli import load_preset
from channelms.harness import run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir", nargs="?", default="results/test1")
    ap.add_argument("--variant", default="elliptic",
                    choices=("elliptic", "timevelocity"))
    ap.add_argument("--cells", type=int, default=None)
    ap.add_argument("--threads", type=int, default=4)
    args = ap.parse_args()

    cfg = load_preset("test1_rbc")
    updates = dict(out_dir=args.out_dir, threads=args.threads,
                   variant=args.variant, write_fields=True)
    if args.variant == "timevelocity":
        # the transient snapshot study fixes one velocity basis size
        updates["mu_list"] = (20,)
    if args.cells is not None:
        updates["target_cells"] = args.cells
        # coarser meshes carry fewer snapshots per domain; drop basis sizes
        # the local boundary Gram matrices cannot support
        mu_cap = max(1, args.cells // 150)
        mc_cap = max(1, args.cells // 300)
        updates["mu_list"] = tuple(m for m in updates.get("mu_list", cfg.mu_list)
                                   if m <= mu_cap) or (mu_cap,)
        updates["mc_list"] = tuple(m for m in cfg.mc_list if m <= mc_cap) \
            or (mc_cap,)
    cfg = replace(cfg, **updates)

    report = run_experiment(cfg)
    sys.stdout.write(report.to_csv())
    for phase, sec in report.timings.items():
        print(f"# {phase}: {sec:.1f}s", file=sys.stderr)


if __name__ == "__main__":
    main()
