"""Physical constants and the small value types shared across modules.

Units throughout: meters, years, MPa.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized

from .geometry import PERIODIC, DomainProfile


@dataclass(frozen=True)
class PhysicalConstants:
    A0: float = 100.0             # MPa^-3 yr^-1
    rho: float = 910.0            # kg m^-3
    g: float = 9.81               # m s^-2
    epsilon_visc: float = 1e-10   # additive regularization of the SIA viscosity
    epsilon_shear: float = 1e-10  # critical shear rate, yr^-1

    def __post_init__(self):
        for name in ("A0", "rho", "g", "epsilon_visc", "epsilon_shear"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def rho_g(self) -> float:
        """rho * |g| in MPa per meter."""
        return self.rho * self.g * 1e-6

    @property
    def g_vec(self) -> tuple[float, float]:
        return (0.0, -self.g)

    def scaled(self, **changes) -> "PhysicalConstants":
        vals = {k: getattr(self, k) for k in ("A0", "rho", "g", "epsilon_visc", "epsilon_shear")}
        vals.update(changes)
        return PhysicalConstants(**vals)


@dataclass(frozen=True, eq=False)
class HorizontalGrid:
    """Uniform nodes of the projected (horizontal) domain.

    Periodic grids store each node once: the right end is the image of the left
    end, shifted vertically by ``period_offset``.
    """
    x: np.ndarray
    dx: float
    bc: str
    length: float
    period_offset: float = 0.0

    @classmethod
    def from_profile(cls, profile: DomainProfile, n_x: int) -> "HorizontalGrid":
        dx = profile.length / n_x
        n = n_x if profile.periodic else n_x + 1
        x = profile.x_min + dx * np.arange(n)
        if not profile.periodic:
            x[-1] = profile.x_max
        return cls(x, dx, profile.surface_bc, profile.length, profile.period_offset)

    @classmethod
    def uniform(cls, n, length, bc=PERIODIC, x0=0.0, period_offset=0.0):
        if bc == PERIODIC:
            dx = length / n
            x = x0 + dx * np.arange(n)
        else:
            dx = length / (n - 1)
            x = x0 + dx * np.arange(n)
        return cls(x, dx, bc, length, period_offset)

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def periodic(self) -> bool:
        return self.bc == PERIODIC

    @cached_property
    def mass_solve(self):
        """Factorized P1 mass matrix on this grid."""
        n, h = self.n, self.dx
        main = np.full(n, 4 * h / 6)
        off = np.full(n - 1, h / 6)
        M = sp.diags([off, main, off], [-1, 0, 1], format="lil")
        if self.periodic:
            M[0, n - 1] = h / 6
            M[n - 1, 0] = h / 6
        else:
            M[0, 0] = M[n - 1, n - 1] = 2 * h / 6
        return factorized(M.tocsc())

    def on_columns(self, values, offset=0.0) -> np.ndarray:
        """Values at all mesh columns (periodic grids get the right end appended)."""
        values = np.asarray(values, dtype=float)
        if self.periodic:
            return np.append(values, values[0] + offset)
        return values.copy()


@dataclass(frozen=True, eq=False)
class SurfaceFields:
    """Surface and bed data per horizontal node."""
    grid: HorizontalGrid
    h: np.ndarray
    dhdx: np.ndarray
    d2hdx2: np.ndarray
    b: np.ndarray
    dbdx: np.ndarray

    def __post_init__(self):
        n = self.grid.n
        for name in ("h", "dhdx", "d2hdx2", "b", "dbdx"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, grid has {n}")

    def on_columns(self) -> dict:
        g = self.grid
        off = g.period_offset
        return {
            "x": g.on_columns(g.x, g.length),
            "h": g.on_columns(self.h, off),
            "dhdx": g.on_columns(self.dhdx),
            "d2hdx2": g.on_columns(self.d2hdx2),
            "b": g.on_columns(self.b, off),
            "dbdx": g.on_columns(self.dbdx),
        }


@dataclass(frozen=True, eq=False)
class MomentumSolution:
    """Velocity (m/yr) and pressure (MPa) fields on a mesh.

    ``u1``/``u2`` live on the velocity space nodes (P1 vertices or P2 nodes),
    ``p`` on the mesh vertices. ``surface_trace`` holds the velocities at the
    surface vertices in ascending x.
    """
    u1: np.ndarray
    u2: np.ndarray
    p: np.ndarray
    surface_trace: tuple[np.ndarray, np.ndarray]
    element_pair: str = "P1P1"
    diagnostics: dict = field(default_factory=dict)

    @property
    def u1s(self) -> np.ndarray:
        return self.surface_trace[0]

    @property
    def u2s(self) -> np.ndarray:
        return self.surface_trace[1]
