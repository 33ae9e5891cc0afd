"""Manufactured-solution checks for the momentum assembly.

The box ``[0, 1] x [0, 1]`` has no-slip-type Dirichlet data on the bed and the
side walls and a traction (Stokes) or shear (W-SIA) load on the top, all taken
from the exact solution, so the discrete solution should converge to it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy

from .elements import TRI_POINTS
from .fields import PhysicalConstants
from .geometry import DIRICHLET_FIXED, NO_SLIP, DomainProfile, extrude_mesh
from .momentum import (W_SIA, W_SIASTOKES, FormulationConfig, build_spaces,
                       solve_momentum)

X, Y = sympy.symbols("x y", real=True)


@dataclass(frozen=True)
class ManufacturedSolution:
    name: str
    u1: sympy.Expr
    u2: sympy.Expr
    p: sympy.Expr
    mu: float = 1.0

    def callables(self, formulation):
        """Numeric exact fields, body force and surface load for ``formulation``."""
        u1, u2, p, mu = self.u1, self.u2, self.p, self.mu
        if formulation == W_SIA:
            f1 = -sympy.diff(mu * sympy.diff(u1, Y), Y) + sympy.diff(p, X)
            f2 = sympy.diff(p, Y)
            # top load of the single shear term; n = (0, 1) on the flat top
            t1 = mu * sympy.diff(u1, Y)
            t2 = sympy.Integer(0)
            s11 = s12 = s22 = None
        else:
            d11, d22 = sympy.diff(u1, X), sympy.diff(u2, Y)
            d12 = (sympy.diff(u1, Y) + sympy.diff(u2, X)) / 2
            s11, s12, s22 = 2 * mu * d11 - p, 2 * mu * d12, 2 * mu * d22 - p
            f1 = -(sympy.diff(s11, X) + sympy.diff(s12, Y))
            f2 = -(sympy.diff(s12, X) + sympy.diff(s22, Y))
            t1, t2 = s12, s22
        lam = {k: sympy.lambdify((X, Y), sympy.simplify(v), "numpy")
               for k, v in dict(u1=u1, u2=u2, p=p, f1=f1, f2=f2, t1=t1, t2=t2).items()}
        return {k: _broadcasting(f) for k, f in lam.items()}


def _broadcasting(f):
    def g(x, y):
        return np.broadcast_to(np.asarray(f(x, y), dtype=float), np.broadcast(x, y).shape)
    return g


def polynomial_solution() -> ManufacturedSolution:
    """Quadratic divergence-free velocity with linear pressure."""
    return ManufacturedSolution("polynomial", X ** 2 + Y ** 2, -2 * X * Y, X + 2 * Y - 1)


def trigonometric_solution() -> ManufacturedSolution:
    psi = sympy.sin(sympy.pi * X) * sympy.sin(sympy.pi * Y) / sympy.pi
    return ManufacturedSolution("trigonometric", sympy.diff(psi, Y), -sympy.diff(psi, X),
                                sympy.cos(sympy.pi * X) * (1 - Y))


def unit_box(n: int):
    profile = DomainProfile(0.0, 1.0, lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                            lambda x: np.ones_like(np.asarray(x, dtype=float)),
                            NO_SLIP, DIRICHLET_FIXED, min_thickness=0.5, name="box")
    return extrude_mesh(profile, n, n)


def solve_manufactured(solution: ManufacturedSolution, n: int, formulation=W_SIASTOKES):
    """Velocity and pressure L2 errors on an ``n x n`` box mesh."""
    fn = solution.callables(formulation)
    mesh = unit_box(n)
    config = FormulationConfig(formulation)

    def dirichlet(vel, pres):
        return (fn["u1"](vel[:, 0], vel[:, 1]), fn["u2"](vel[:, 0], vel[:, 1]),
                fn["p"](pres[:, 0], pres[:, 1]))

    def traction(x, y, nx, ny):
        return fn["t1"](x, y), fn["t2"](x, y)

    sol = solve_momentum(mesh, config, solution.mu, PhysicalConstants(),
                         body_force=lambda x, y: (fn["f1"](x, y), fn["f2"](x, y)),
                         dirichlet_values=dirichlet, surface_traction=traction)
    vs, ps, geom = build_spaces(mesh, config.element_pair)
    val, _ = vs.basis(TRI_POINTS)
    pval, _ = ps.basis(TRI_POINTS)
    e1 = sol.u1[vs.cell_dofs] @ val.T - fn["u1"](geom.qx, geom.qy)
    e2 = sol.u2[vs.cell_dofs] @ val.T - fn["u2"](geom.qx, geom.qy)
    ep = sol.p[ps.cell_dofs] @ pval.T - fn["p"](geom.qx, geom.qy)
    vel = float(np.sqrt(np.sum(geom.wdet * (e1 ** 2 + e2 ** 2))))
    pre = float(np.sqrt(np.sum(geom.wdet * ep ** 2)))
    return vel, pre, sol.diagnostics.get("residual", 0.0)


@dataclass(frozen=True)
class ConvergenceTable:
    formulation: str
    solution: str
    n: tuple
    velocity_error: tuple
    pressure_error: tuple
    orders: tuple

    @property
    def order(self) -> float:
        """Least-squares slope of log error against log h."""
        h = 1.0 / np.asarray(self.n, dtype=float)
        return float(np.polyfit(np.log(h), np.log(self.velocity_error), 1)[0])

    def rows(self):
        prev = (None,) + self.orders
        return [(n, ev, ep, o) for n, ev, ep, o in
                zip(self.n, self.velocity_error, self.pressure_error, prev)]


def run_mms_convergence(formulation=W_SIASTOKES, solution: ManufacturedSolution | None = None,
                        sizes=(4, 8, 16, 32)) -> ConvergenceTable:
    """Refinement study; ``orders`` holds the pairwise observed orders."""
    if len(sizes) < 3:
        raise ValueError("need at least 3 mesh sizes")
    solution = solution or trigonometric_solution()
    ev, ep = [], []
    for n in sizes:
        v, p, _ = solve_manufactured(solution, n, formulation)
        ev.append(v)
        ep.append(p)
    orders = tuple(float(np.log(ev[i] / ev[i + 1]) / np.log(sizes[i + 1] / sizes[i]))
                   for i in range(len(sizes) - 1))
    return ConvergenceTable(formulation, solution.name, tuple(sizes), tuple(ev), tuple(ep), orders)
