"""Semi-implicit kinematic free-surface update on the horizontal grid.

The surface equation ``h_t + u1s h_x = u2s + a`` is discretized as

    (I + dt diag(u1s) D) h^{n+1} = h^n + dt (u2s + a)

with ``D`` the centered first-difference matrix, optionally plus the
upwind-equivalent artificial diffusion ``nu = |u1s| dx / 2``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .fields import HorizontalGrid
from .geometry import DIRICHLET_FIXED, PERIODIC


@dataclass(frozen=True, eq=False)
class SurfaceState:
    """Surface elevation on a :class:`HorizontalGrid` at time ``t``.

    ``datum`` is the reference elevation the energy is measured from (the bed
    for the slab, zero otherwise).
    """
    grid: HorizontalGrid
    h: np.ndarray
    a: np.ndarray | float = 0.0
    t: float = 0.0
    datum: np.ndarray | float = 0.0

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if h.shape != (self.grid.n,):
            raise ValueError(f"h has shape {h.shape}, grid has {self.grid.n} nodes")
        object.__setattr__(self, "h", h)

    @property
    def bc(self) -> str:
        return self.grid.bc

    def with_h(self, h, dt) -> "SurfaceState":
        return replace(self, h=np.asarray(h, dtype=float), t=self.t + dt)


def build_dx_matrix(n, dx, bc=PERIODIC) -> sp.csr_matrix:
    """Centered difference ``(h_{i+1} - h_{i-1}) / (2 dx)``.

    Periodic grids wrap around (a vertical shift across the period enters
    through :func:`dx_offset_correction`). For fixed ends the two boundary
    rows are zero, since those heights never change.
    """
    if n < 3:
        raise ValueError(f"need at least 3 nodes, got {n}")
    D = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1], format="lil")
    if bc == PERIODIC:
        D[0, n - 1] = -1.0
        D[n - 1, 0] = 1.0
    else:
        D[0, :] = 0
        D[n - 1, :] = 0
    return (D / (2 * dx)).tocsr()


def build_laplacian(n, dx, bc=PERIODIC) -> sp.csr_matrix:
    """Three-point second difference; fixed-end boundary rows are zero."""
    L = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], format="lil")
    if bc == PERIODIC:
        L[0, n - 1] = 1.0
        L[n - 1, 0] = 1.0
    else:
        L[0, :] = 0
        L[n - 1, :] = 0
    return (L / dx ** 2).tocsr()


def dx_offset_correction(grid: HorizontalGrid) -> np.ndarray:
    """Constant term so that ``D h + c`` differentiates across a shifted period."""
    c = np.zeros(grid.n)
    if grid.periodic and grid.period_offset:
        c[0] = c[-1] = grid.period_offset / (2 * grid.dx)
    return c


def laplacian_offset_correction(grid: HorizontalGrid) -> np.ndarray:
    c = np.zeros(grid.n)
    if grid.periodic and grid.period_offset:
        c[0] = -grid.period_offset / grid.dx ** 2
        c[-1] = grid.period_offset / grid.dx ** 2
    return c


def upwind_viscosity(u1s, dx) -> np.ndarray:
    return 0.5 * np.abs(np.asarray(u1s, dtype=float)) * dx


def add_upwind_viscosity(matrix, rhs, state: SurfaceState, u1s, dt):
    """Add ``dt * (-nu h_xx)`` implicitly to an assembled step system."""
    grid = state.grid
    nu = sp.diags(upwind_viscosity(u1s, grid.dx))
    L = build_laplacian(grid.n, grid.dx, grid.bc)
    return (matrix - dt * nu @ L).tocsr(), rhs + dt * nu @ laplacian_offset_correction(grid)


def step_semi_implicit(state: SurfaceState, u1s, u2s, dt, upwind=False) -> SurfaceState:
    """One semi-implicit step with surface velocities held at time level n."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    grid = state.grid
    u1s = np.asarray(u1s, dtype=float)
    u2s = np.asarray(u2s, dtype=float)
    if u1s.shape != (grid.n,) or u2s.shape != (grid.n,):
        raise ValueError("surface velocities must match the grid")
    U = sp.diags(u1s)
    A = sp.identity(grid.n, format="csr") + dt * U @ build_dx_matrix(grid.n, grid.dx, grid.bc)
    rhs = state.h + dt * (u2s + state.a) - dt * u1s * dx_offset_correction(grid)
    if upwind:
        A, rhs = add_upwind_viscosity(A, rhs, state, u1s, dt)
    A = A.tocsc()
    if grid.bc == DIRICHLET_FIXED:
        # eliminate the fixed end values so they are carried over bit for bit
        h = state.h.copy()
        inner = np.arange(1, grid.n - 1)
        ends = np.array([0, grid.n - 1])
        A_ii = A[inner][:, inner]
        h[inner] = spsolve(A_ii.tocsc(), rhs[inner] - A[inner][:, ends] @ h[ends])
    else:
        h = spsolve(A, rhs)
    if not np.all(np.isfinite(h)):
        raise FloatingPointError(f"surface step produced non-finite heights (dt={dt})")
    return state.with_h(h, dt)


def surface_energy(state: SurfaceState) -> float:
    """Trapezoid-rule ``int (h - datum)^2 dx`` over one period or the full span."""
    g = state.grid
    e = (state.h - np.broadcast_to(state.datum, g.n)) ** 2
    if g.bc == PERIODIC:
        return float(g.dx * e.sum())
    return float(g.dx * (e.sum() - 0.5 * (e[0] + e[-1])))


def perturbation_energy(state: SurfaceState) -> float:
    """Energy with the mean offset removed on periodic grids.

    A uniform shift of a periodic surface is a neutral mode; removing it keeps
    a slow drift of the mean from registering as growth.
    """
    g = state.grid
    if g.bc != PERIODIC:
        return surface_energy(state)
    d = state.h - np.broadcast_to(state.datum, g.n)
    return float(g.dx * np.sum((d - d.mean()) ** 2))


def surface_mass(state: SurfaceState) -> float:
    g = state.grid
    d = state.h - np.broadcast_to(state.datum, g.n)
    if g.bc == PERIODIC:
        return float(g.dx * d.sum())
    return float(g.dx * (d.sum() - 0.5 * (d[0] + d[-1])))


def write_history(path, states) -> None:
    """Surface history as CSV with columns ``t,x,h`` (one row per node per time)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "h"])
        for st in states:
            for x, h in zip(st.grid.x, st.h):
                w.writerow([repr(float(st.t)), repr(float(x)), repr(float(h))])
