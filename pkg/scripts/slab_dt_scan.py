"""Largest stable timestep on the slab for a set of models and mesh sizes.

Brackets start around a power-law guess so the expensive small-step runs are
few; the search still expands or shrinks as needed.
"""
from __future__ import annotations

import argparse
import logging
import time

from weaksia.harness import ExperimentConfig, run_dt_scan, write_scan_outputs

# rough dt* at dx = 250 m and the expected exponent, used only to seed brackets
GUESS = {"SIA": (0.0028, 2), "W-SIA": (0.0058, 2), "W-SIAStokes": (0.82, 1),
         "W-SIAStokes-FSSA": (1.13, 1), "W-SIA-FSSA": (0.015, 2)}


def seeded_brackets(labels, n_xs, length=80e3):
    out = {}
    for label in labels:
        base, p = GUESS.get(label, (0.1, 1))
        for n in n_xs:
            g = base * (length / n / 250.0) ** p
            out[(label, n)] = (g / 3, g * 1.5)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--formulation", action="append", default=None)
    ap.add_argument("--nx", type=int, nargs="+", default=[20, 40, 80, 160, 320])
    ap.add_argument("--tfinal", type=float, default=None)
    ap.add_argument("--out", default="results/slab_scan")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO)
    labels = tuple(args.formulation or GUESS)
    cfg = ExperimentConfig("slab", formulations=labels, n_x=tuple(args.nx), t_final=args.tfinal,
                           output_dir=args.out)
    t0 = time.perf_counter()
    scan = run_dt_scan(cfg, brackets=seeded_brackets(labels, args.nx), lower_retries=3)
    write_scan_outputs(scan, args.out)
    for label, rs in scan.results.items():
        for r in rs:
            print(f"{label:18s} dx={r.dx:8.1f} dt*={r.dt_star:.4g} {r.flag}", flush=True)
        if label in scan.fits:
            print(f"{label:18s} p={scan.fits[label].p:.3f}", flush=True)
    for key, msg in scan.failures.items():
        print("failed", key, msg)
    print(f"total {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
