"""Write the synthetic Greenland-like cross section shipped in ``weaksia/data``.

The profile is a seeded stand-in for an east-west transect: a Vialov-type dome
about 3 km high over a rough bed that dips below sea level inland, with a
steeper and rougher western margin.
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

HALF_WIDTH = 494.5e3
SUMMIT_X = 60e3
SUMMIT_HEIGHT = 3000.0
MARGIN_THICKNESS = 50.0


def make_section(n_samples=199, seed=2024):
    rng = np.random.default_rng(seed)
    x = np.linspace(-HALF_WIDTH, HALF_WIDTH, n_samples)
    bed = 250.0 - 450.0 * np.exp(-((x - 40e3) / 220e3) ** 2)
    for k in range(1, 9):
        amp = rng.uniform(40.0, 160.0) / k ** 0.5
        phase = rng.uniform(0, 2 * np.pi)
        bed += amp * np.sin(k * np.pi * (x + HALF_WIDTH) / (2 * HALF_WIDTH) * 3 + phase)
    # western highlands near the margin
    bed += 350.0 * np.exp(-((x + 420e3) / 40e3) ** 2)

    side = np.where(x < SUMMIT_X, SUMMIT_X + HALF_WIDTH, HALF_WIDTH - SUMMIT_X)
    r = np.clip(np.abs(x - SUMMIT_X) / side, 0.0, 1.0)
    dome = SUMMIT_HEIGHT * (1.0 - r ** (4.0 / 3.0)) ** (3.0 / 8.0)
    surface = np.maximum(dome + 150.0, bed + MARGIN_THICKNESS)
    surface[[0, -1]] = bed[[0, -1]] + MARGIN_THICKNESS
    return x, bed, surface


def main(argv=None):
    default = Path(__file__).resolve().parents[1] / "src" / "weaksia" / "data" / "greenland_section.txt"
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=default)
    ap.add_argument("--samples", type=int, default=199)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args(argv)
    x, bed, surface = make_section(args.samples, args.seed)
    header = (f"synthetic Greenland-like cross section, seed {args.seed}\n"
              "columns: x [m]  bed [m]  surface [m]")
    np.savetxt(args.out, np.column_stack([x, bed, surface]), fmt="%.3f", header=header)
    print(f"wrote {len(x)} samples to {args.out}")


if __name__ == "__main__":
    main()
