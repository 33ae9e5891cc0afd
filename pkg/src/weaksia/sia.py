"""Closed-form shallow ice velocities, viscosity and the projected surface gradient.

Sign convention: gravity points in -y, pressure is ``rho g (h - y) >= 0`` below
the surface, and ice flows down the surface gradient (``u1 > 0`` when
``dh/dx < 0``).
"""
from __future__ import annotations

import numpy as np

from .fields import HorizontalGrid, MomentumSolution, PhysicalConstants, SurfaceFields
from .geometry import ExtrudedMesh


def surface_gradient_projection(h, grid: HorizontalGrid, offset=None) -> np.ndarray:
    """L2 projection of the elementwise P1 gradient of ``h`` onto continuous P1.

    ``offset`` is the jump across the periodic wrap (defaults to the grid's
    ``period_offset``); pass 0 when projecting an already periodic field.
    """
    h = np.asarray(h, dtype=float)
    if len(h) != grid.n:
        raise ValueError(f"expected {grid.n} nodal values, got {len(h)}")
    if grid.n < 3:
        raise ValueError("need at least 3 nodes")
    dx = grid.dx
    if grid.periodic:
        off = grid.period_offset if offset is None else offset
        right = np.roll(h, -1)
        right[-1] += off
        g = (right - h) / dx              # element e spans nodes e, e+1
        load = 0.5 * dx * (g + np.roll(g, 1))
    else:
        g = np.diff(h) / dx
        load = np.zeros_like(h)
        load[:-1] += 0.5 * dx * g
        load[1:] += 0.5 * dx * g
    out = grid.mass_solve(load)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("mass matrix solve failed")
    return out


def surface_fields(grid: HorizontalGrid, h, b) -> SurfaceFields:
    """Projected slopes and curvature; the second derivative reuses the projection."""
    h = np.asarray(h, dtype=float)
    b = np.asarray(b, dtype=float)
    dhdx = surface_gradient_projection(h, grid)
    d2hdx2 = surface_gradient_projection(dhdx, grid, offset=0.0)
    dbdx = surface_gradient_projection(b, grid)
    return SurfaceFields(grid, h, dhdx, d2hdx2, b, dbdx)


def sia_viscosity(y, h, dhdx, consts: PhysicalConstants):
    """mu = 1 / (2 (A (rho g)^2 (y-h)^2 |h_x|^2 + eps)), MPa yr."""
    rg = consts.rho_g
    return 0.5 / (consts.A0 * rg ** 2 * (y - h) ** 2 * dhdx ** 2 + consts.epsilon_visc)


def sia_u1(y, h, b, dhdx, consts: PhysicalConstants):
    k = 0.5 * consts.A0 * consts.rho_g ** 3
    return -k * dhdx ** 3 * ((h - b) ** 4 - (h - y) ** 4)


def sia_u2(y, h, b, dhdx, d2hdx2, dbdx, consts: PhysicalConstants):
    # u2 = -int_b^y du1/dx dy'
    k = 0.5 * consts.A0 * consts.rho_g ** 3
    H = h - b
    d = h - y
    shear = 3 * dhdx ** 2 * d2hdx2 * (H ** 4 * (y - b) + d ** 5 / 5 - H ** 5 / 5)
    stretch = 4 * dhdx ** 3 * (H ** 3 * (dhdx - dbdx) * (y - b) + d ** 4 / 4 * dhdx - H ** 4 / 4 * dhdx)
    return k * (shear + stretch)


def sia_velocity_field(mesh: ExtrudedMesh, fields: SurfaceFields,
                       consts: PhysicalConstants) -> MomentumSolution:
    """Evaluate the closed forms at every mesh vertex (P1 layout)."""
    col = fields.on_columns()
    ny1 = mesh.n_y + 1
    rep = {k: np.repeat(v, ny1) for k, v in col.items()}
    y = mesh.vertices[:, 1]
    u1 = sia_u1(y, rep["h"], rep["b"], rep["dhdx"], consts)
    u2 = sia_u2(y, rep["h"], rep["b"], rep["dhdx"], rep["d2hdx2"], rep["dbdx"], consts)
    p = consts.rho_g * (rep["h"] - y)
    top = mesh.surface_vertices
    return MomentumSolution(u1, u2, p, (u1[top], u2[top]), element_pair="P1P1",
                            diagnostics={"formulation": "SIA"})


def sia_surface_velocity(fields: SurfaceFields, consts: PhysicalConstants):
    """Surface velocities (u1s, u2s) per horizontal node."""
    k = 0.5 * consts.A0 * consts.rho_g ** 3
    hx, hxx, bx = fields.dhdx, fields.d2hdx2, fields.dbdx
    H = fields.h - fields.b
    u1s = -k * hx ** 3 * H ** 4
    u2s = k * (12.0 / 5.0 * hx ** 2 * hxx * H ** 5 + 4 * hx ** 3 * (H ** 4 * (hx - bx) - H ** 4 / 4 * hx))
    return u1s, u2s
