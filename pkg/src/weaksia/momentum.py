"""Weak-form momentum balances on extruded meshes.

Three formulations share one assembly path:

* ``W_SIA``: vertical shear term only, pressure gradient tested against the
  velocity, ``p = 0`` imposed on the surface (P1P1).
* ``W_SIAStokes``: full strain-rate form with the SIA viscosity (P2P1).
* ``W_Stokes``: as above with Glen's viscosity, solved by Picard iteration.

The optional FSSA term adds ``theta * dt * rho g * int_{surface} (u.n) v2 ds``
to the left-hand side of the vertical momentum equation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .elements import (LINE_POINTS, LINE_WEIGHTS, TRI_POINTS, Geometry, Space,
                       element_geometry, line_basis, p1_space, p2_space)
from .fields import MomentumSolution, PhysicalConstants, SurfaceFields
from .geometry import ExtrudedMesh
from .sia import sia_viscosity

log = logging.getLogger(__name__)

W_SIA = "W_SIA"
W_SIASTOKES = "W_SIAStokes"
W_STOKES = "W_Stokes"
FORMULATIONS = (W_SIA, W_SIASTOKES, W_STOKES)
_PAIRS = {W_SIA: "P1P1", W_SIASTOKES: "P2P1", W_STOKES: "P2P1"}


class ConfigError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, message, pivot=None, residual=None):
        super().__init__(message)
        self.pivot = pivot
        self.residual = residual


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual, solution=None):
        super().__init__(message)
        self.residual = residual
        self.solution = solution


@dataclass(frozen=True)
class FormulationConfig:
    formulation: str = W_SIASTOKES
    fssa_theta: float = 0.0
    fssa_dt: float = 0.0
    element_pair: str | None = None
    picard_tol: float = 1e-6
    picard_max_iter: int = 50

    def __post_init__(self):
        if self.formulation not in FORMULATIONS:
            raise ConfigError(f"unknown formulation {self.formulation!r}")
        pair = _PAIRS[self.formulation]
        if self.element_pair is None:
            object.__setattr__(self, "element_pair", pair)
        elif self.element_pair != pair:
            raise ConfigError(f"{self.formulation} requires {pair}, got {self.element_pair}")
        if not 0.0 <= self.fssa_theta <= 1.0:
            raise ConfigError("fssa_theta must lie in [0, 1]")
        if self.fssa_dt < 0:
            raise ConfigError("fssa_dt must be non-negative")

    @property
    def fssa(self) -> bool:
        return self.fssa_theta > 0 and self.fssa_dt > 0


@dataclass(eq=False)
class LinearSystem:
    """Constrained sparse system plus the map back to the full nodal fields.

    Full vector layout is ``[u1, u2, p]``; ``full = prolongation @ reduced + lift``.
    """
    matrix: sp.csr_matrix
    rhs: np.ndarray
    prolongation: sp.csr_matrix
    lift: np.ndarray
    full_matrix: sp.csr_matrix
    full_rhs: np.ndarray
    velocity_space: Space
    pressure_space: Space
    fields: dict = field(default_factory=dict)

    def dof_map(self, name: str, node: int) -> int | None:
        """Reduced row of ``(field, node)``, or None if constrained."""
        start = self.fields[name].start
        row = self.prolongation.getrow(start + node)
        return int(row.indices[0]) if row.nnz else None

    def expand(self, x) -> np.ndarray:
        return self.prolongation @ x + self.lift


def build_spaces(mesh: ExtrudedMesh, element_pair: str):
    cache = mesh._cache
    key = ("spaces", element_pair)
    if key not in cache:
        vel = p1_space(mesh) if element_pair == "P1P1" else p2_space(mesh)
        cache[key] = (vel, p1_space(mesh), element_geometry(mesh))
    return cache[key]


def sia_viscosity_at_quadrature(geom: Geometry, fields: SurfaceFields,
                                consts: PhysicalConstants) -> np.ndarray:
    col = fields.on_columns()
    h = np.interp(geom.qx, col["x"], col["h"])
    dhdx = np.interp(geom.qx, col["x"], col["dhdx"])
    return sia_viscosity(geom.qy, h, dhdx, consts)


def glen_viscosity(D11, D12, D22, consts: PhysicalConstants):
    """mu* = 1/2 A^(-1/3) (eps_e^2 + eps_c^2)^(-1/3) with eps_e^2 = |Du|_F^2 / 2."""
    eff2 = 0.5 * (D11 ** 2 + 2 * D12 ** 2 + D22 ** 2)
    return 0.5 * consts.A0 ** (-1.0 / 3.0) * (eff2 + consts.epsilon_shear ** 2) ** (-1.0 / 3.0)


def _scatter(rows, cols, vals, shape):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()


def _pairs(a, b):
    """Row/column index arrays for local (k_a x k_b) element blocks."""
    return (np.broadcast_to(a[:, :, None], (len(a), a.shape[1], b.shape[1])),
            np.broadcast_to(b[:, None, :], (len(a), a.shape[1], b.shape[1])))


def _weighted_products(weight, a, b):
    """Local matrices sum_q weight[e,q] a[e,q,i] b[e,q,j]."""
    return np.matmul((weight[:, :, None] * a).transpose(0, 2, 1), b)


def _viscosity_array(viscosity, geom: Geometry):
    if callable(viscosity):
        mu = viscosity(geom.qx, geom.qy)
    else:
        mu = viscosity
    return np.broadcast_to(np.asarray(mu, dtype=float), geom.qx.shape)


def assemble_fssa_term(mesh: ExtrudedMesh, theta, dt, consts: PhysicalConstants,
                       velocity_space: Space | None = None, n_pressure=None) -> sp.csr_matrix:
    """FSSA surface matrix on the full ``[u1, u2, p]`` layout.

    Row ``v2_i``, column ``u_k,j`` holds ``theta dt rho g int phi_j n_k phi_i ds``
    over surface edges with the outward normal.
    """
    vs = velocity_space or p1_space(mesh)
    npr = n_pressure if n_pressure is not None else len(mesh.vertices)
    n = vs.n
    shape = (2 * n + npr, 2 * n + npr)
    scale = theta * dt * consts.rho_g
    if scale == 0:
        return sp.csr_matrix(shape)
    e = vs.surface_edges
    start, end = vs.coords[e[:, 0]], vs.coords[e[:, 1]]
    nvec = np.column_stack([-(end[:, 1] - start[:, 1]), end[:, 0] - start[:, 0]])  # |e| * n
    phi = line_basis(vs.degree, LINE_POINTS)
    local = np.einsum("q,qi,qj->ij", LINE_WEIGHTS, phi, phi)
    rows, cols = _pairs(e, e)
    blocks = []
    for k in range(2):
        vals = scale * nvec[:, k, None, None] * local[None]
        blocks.append(_scatter(rows + n, cols + k * n, vals, shape))
    return (blocks[0] + blocks[1]).tocsr()


def _surface_load(vs: Space, traction):
    """Boundary load int_{surface} t . v ds for a traction callable t(x, y, nx, ny)."""
    e = vs.surface_edges
    start, end = vs.coords[e[:, 0]], vs.coords[e[:, 1]]
    length = np.hypot(*(end - start).T)
    normal = np.column_stack([-(end[:, 1] - start[:, 1]), end[:, 0] - start[:, 0]]) / length[:, None]
    phi = line_basis(vs.degree, LINE_POINTS)
    qx = start[:, 0, None] + LINE_POINTS[None] * (end[:, 0] - start[:, 0])[:, None]
    qy = start[:, 1, None] + LINE_POINTS[None] * (end[:, 1] - start[:, 1])[:, None]
    t1, t2 = traction(qx, qy, normal[:, 0, None], normal[:, 1, None])
    out = []
    for t in (t1, t2):
        loc = np.einsum("q,eq,qi->ei", LINE_WEIGHTS, np.broadcast_to(t, qx.shape), phi) * length[:, None]
        out.append(np.bincount(e.ravel(), loc.ravel(), minlength=vs.n))
    return out


def _constraints(mesh, config, vs: Space, ps: Space, dirichlet_values=None):
    """Prolongation and lift implementing no-slip, periodic and surface-pressure constraints."""
    nv, npr = vs.n, ps.n
    fields = {"u1": slice(0, nv), "u2": slice(nv, 2 * nv), "p": slice(2 * nv, 2 * nv + npr)}
    total = 2 * nv + npr
    master = np.arange(total)
    fixed = np.zeros(total, dtype=bool)
    periodic = mesh.periodic

    def link(space, offset):
        if periodic:
            left = np.nonzero(space.left)[0]
            right = np.nonzero(space.right)[0]
            left = left[np.argsort(space.layer[left])]
            right = right[np.argsort(space.layer[right])]
            master[offset + right] = offset + left

    for k, name in enumerate(("u1", "u2")):
        off = fields[name].start
        link(vs, off)
        fixed[off + np.nonzero(vs.bed)[0]] = True
        if not periodic:
            # W-SIA determines u2 by vertical integration from the bed, so it cannot
            # also be pinned on the lateral walls
            if name == "u1" or config.formulation != W_SIA:
                fixed[off + np.nonzero(vs.left | vs.right)[0]] = True
    off = fields["p"].start
    link(ps, off)
    if config.formulation == W_SIA:
        fixed[off + np.nonzero(ps.surface)[0]] = True

    lift = np.zeros(total)
    if dirichlet_values is not None:
        g1, g2, gp = dirichlet_values(vs.coords, ps.coords)
        vals = np.concatenate([np.broadcast_to(g1, nv), np.broadcast_to(g2, nv),
                               np.broadcast_to(gp, npr)])
        lift[fixed] = vals[fixed]
    fixed_m = fixed[master]
    lift = lift[master]
    free_masters = np.nonzero(~fixed & (master == np.arange(total)))[0]
    red = -np.ones(total, dtype=np.int64)
    red[free_masters] = np.arange(len(free_masters))
    col = red[master]
    keep = (col >= 0) & ~fixed_m
    T = sp.csr_matrix((np.ones(keep.sum()), (np.nonzero(keep)[0], col[keep])),
                      shape=(total, len(free_masters)))
    lift[~fixed_m] = 0.0
    return T, lift, fields


def assemble_momentum(mesh: ExtrudedMesh, config: FormulationConfig, viscosity,
                      consts: PhysicalConstants, body_force: Callable | None = None,
                      dirichlet_values: Callable | None = None,
                      surface_traction: Callable | None = None) -> LinearSystem:
    """Assemble the constrained momentum system.

    ``viscosity`` is a scalar, an array of values at the element quadrature
    points, or a callable ``mu(x, y)``. ``body_force(x, y)`` replaces gravity,
    ``dirichlet_values(vel_coords, p_coords)`` gives nonzero boundary data and
    ``surface_traction(x, y, nx, ny)`` adds a surface load; all three exist for
    manufactured-solution checks.
    """
    vs, ps, geom = build_spaces(mesh, config.element_pair)
    mu = _viscosity_array(viscosity, geom)
    val, rgrad = vs.basis(TRI_POINTS)
    pval, prgrad = ps.basis(TRI_POINTS)
    dphi = geom.grads(rgrad)           # (M, Q, k, 2)
    dpsi = geom.grads(prgrad)
    w = geom.wdet
    wm = w * mu
    nv, npr = vs.n, ps.n
    N = 2 * nv + npr
    cv, cp = vs.cell_dofs, ps.cell_dofs
    r_vv, c_vv = _pairs(cv, cv)
    r_vp, c_vp = _pairs(cv, cp)
    r_pv, c_pv = _pairs(cp, cv)

    def stiff(a, b, weight):
        return _weighted_products(weight, dphi[..., a], dphi[..., b])

    blocks = []
    if config.formulation == W_SIA:
        blocks.append(_scatter(r_vv, c_vv, stiff(1, 1, wm), (N, N)))
        for k in range(2):
            # +int dp/dx_k v_k and +int div(u) q
            g = _weighted_products(w, np.broadcast_to(val, dphi.shape[:3]), dpsi[..., k])
            blocks.append(_scatter(r_vp + k * nv, c_vp + 2 * nv, g, (N, N)))
            b = _weighted_products(w, np.broadcast_to(pval, dpsi.shape[:3]), dphi[..., k])
            blocks.append(_scatter(r_pv + 2 * nv, c_pv + k * nv, b, (N, N)))
    else:
        A = {(0, 0): stiff(0, 0, 2 * wm) + stiff(1, 1, wm),
             (0, 1): stiff(1, 0, wm),
             (1, 0): stiff(0, 1, wm),
             (1, 1): stiff(0, 0, wm) + stiff(1, 1, 2 * wm)}
        for (a, b), loc in A.items():
            blocks.append(_scatter(r_vv + a * nv, c_vv + b * nv, loc, (N, N)))
        for k in range(2):
            # -int p div(v) and -int q div(u)
            b = -_weighted_products(w, np.broadcast_to(pval, dpsi.shape[:3]), dphi[..., k])
            blocks.append(_scatter(r_pv + 2 * nv, c_pv + k * nv, b, (N, N)))
            blocks.append(_scatter(c_pv + k * nv, r_pv + 2 * nv, b, (N, N)))
    K = blocks[0]
    for blk in blocks[1:]:
        K = K + blk
    if config.fssa:
        K = K + assemble_fssa_term(mesh, config.fssa_theta, config.fssa_dt, consts, vs, npr)

    f = np.zeros(N)
    if body_force is None:
        f1 = np.zeros_like(geom.qx)
        f2 = np.full_like(geom.qx, -consts.rho_g)
    else:
        f1, f2 = (np.broadcast_to(c, geom.qx.shape) for c in body_force(geom.qx, geom.qy))
    for k, fk in enumerate((f1, f2)):
        loc = np.einsum("eq,qi->ei", w * fk, val)
        f[k * nv:(k + 1) * nv] = np.bincount(cv.ravel(), loc.ravel(), minlength=nv)
    if surface_traction is not None:
        t1, t2 = _surface_load(vs, surface_traction)
        f[:nv] += t1
        if config.formulation != W_SIA:
            f[nv:2 * nv] += t2

    T, lift, fields = _constraints(mesh, config, vs, ps, dirichlet_values)
    K = K.tocsr()
    Kr = (T.T @ K @ T).tocsr()
    fr = T.T @ (f - K @ lift)
    return LinearSystem(Kr, fr, T, lift, K, f, vs, ps, fields)


def _equilibrate(A):
    A = A.tocsr()
    r = np.sqrt(abs(A).max(axis=1).toarray().ravel())
    r[r == 0] = 1.0
    Dr = sp.diags(1.0 / r)
    B = (Dr @ A).tocsc()
    c = np.sqrt(abs(B).max(axis=0).toarray().ravel())
    c[c == 0] = 1.0
    Dc = sp.diags(1.0 / c)
    return (Dr @ A @ Dc).tocsc(), 1.0 / r, 1.0 / c


def _smallest_pivot(lu) -> int:
    """Original column index of the smallest diagonal entry of U."""
    k = int(np.argmin(np.abs(lu.U.diagonal())))
    return int(lu.perm_c[k])


def solve_linear_system(system, pivot_tol=1e-13):
    """Sparse LU solve; returns ``(x, info)`` with the relative residual in ``info``.

    Accepts a :class:`LinearSystem` or an ``(A, b)`` pair. Raises
    :class:`SolverError` when the factorization hits a (numerically) zero pivot.
    """
    if isinstance(system, LinearSystem):
        A, b = system.matrix, system.rhs
    else:
        A, b = system
        A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise SolverError(f"matrix is not square: {A.shape}")
    if n == 0:
        return np.zeros(0), {"residual": 0.0}
    S, rs, cs = _equilibrate(A)
    # repeated passes so row and column scales both settle near one
    S2, rs2, cs2 = _equilibrate(S)
    rs, cs, S = rs * rs2, cs * cs2, S2
    try:
        lu = splu(S, permc_spec="COLAMD", diag_pivot_thresh=0.1)
    except RuntimeError as exc:
        # exactly singular: refactor a slightly shifted copy to locate the pivot
        shifted = splu((S + 1e-14 * sp.identity(n)).tocsc(), permc_spec="COLAMD",
                       diag_pivot_thresh=0.1)
        col = _smallest_pivot(shifted)
        raise SolverError(f"factorization failed ({exc}) near column {col}", pivot=col) from None
    d = np.abs(lu.U.diagonal())
    if not np.isfinite(d).all() or d.min() <= pivot_tol * d.max():
        col = _smallest_pivot(lu)
        raise SolverError(f"singular matrix: pivot {d.min():.3e} at column {col}", pivot=col)
    x = cs * lu.solve(rs * b)
    bn = np.linalg.norm(b)
    res = np.linalg.norm(A @ x - b) / (bn if bn > 0 else 1.0)
    if not np.isfinite(res):
        raise SolverError("non-finite solution", residual=res)
    return x, {"residual": float(res)}


def _split(system: LinearSystem, x_red):
    full = system.expand(x_red)
    f = system.fields
    return full[f["u1"]], full[f["u2"]], full[f["p"]]


def strain_rates(mesh: ExtrudedMesh, element_pair, u1, u2):
    """(D11, D12, D22) at the element quadrature points."""
    vs, _, geom = build_spaces(mesh, element_pair)
    _, rgrad = vs.basis(TRI_POINTS)
    dphi = geom.grads(rgrad)
    g1 = (dphi * u1[vs.cell_dofs][:, None, :, None]).sum(axis=2)
    g2 = (dphi * u2[vs.cell_dofs][:, None, :, None]).sum(axis=2)
    return g1[..., 0], 0.5 * (g1[..., 1] + g2[..., 0]), g2[..., 1]


def divergence_l2(mesh, element_pair, u1, u2) -> float:
    D11, _, D22 = strain_rates(mesh, element_pair, u1, u2)
    _, _, geom = build_spaces(mesh, element_pair)
    return float(np.sqrt(np.sum(geom.wdet * (D11 + D22) ** 2)))


def extract_surface_velocities(solution: MomentumSolution, mesh: ExtrudedMesh):
    """Velocities at the surface vertices in ascending x (P2 sampled at vertices)."""
    vs, _, _ = build_spaces(mesh, solution.element_pair)
    idx = vs.surface_nodes()
    return solution.u1[idx], solution.u2[idx]


def _solution(system, x, mesh, config, diagnostics):
    u1, u2, p = _split(system, x)
    sol = MomentumSolution(u1, u2, p, (None, None), config.element_pair, diagnostics)
    trace = extract_surface_velocities(sol, mesh)
    diagnostics["divergence_l2"] = divergence_l2(mesh, config.element_pair, u1, u2)
    diagnostics["formulation"] = config.formulation
    return replace(sol, surface_trace=trace)


def reduced_field_index(system: LinearSystem) -> np.ndarray:
    """Field number (0 = u1, 1 = u2, 2 = p) of every reduced unknown."""
    T = system.prolongation.tocsc()
    first = T.indices[T.indptr[:-1]]
    nv = system.velocity_space.n
    return np.where(first < nv, 0, np.where(first < 2 * nv, 1, 2))


def solve_block_triangular(system: LinearSystem):
    """Sequential solve of the unstabilized W-SIA system.

    The ``v2`` rows only involve ``p``, the ``v1`` rows ``u1`` and ``p`` and the
    continuity rows ``u1`` and ``u2``, so three smaller solves replace the
    coupled one.
    """
    A, b = system.matrix.tocsr(), system.rhs
    field = reduced_field_index(system)
    idx = [np.nonzero(field == k)[0] for k in range(3)]
    i1, i2, ip = idx
    x = np.zeros(len(b))
    x[ip], _ = solve_linear_system((A[i2][:, ip], b[i2]))
    x[i1], _ = solve_linear_system((A[i1][:, i1], b[i1] - A[i1][:, ip] @ x[ip]))
    x[i2], _ = solve_linear_system((A[ip][:, i2], b[ip] - A[ip][:, i1] @ x[i1]))
    bn = np.linalg.norm(b)
    return x, {"residual": float(np.linalg.norm(A @ x - b) / (bn if bn > 0 else 1.0))}


def solve_momentum(mesh, config: FormulationConfig, viscosity, consts, sequential=None,
                   **kw) -> MomentumSolution:
    """Assemble and solve a linear formulation with a fixed viscosity.

    Unstabilized W-SIA defaults to the sequential block solve; pass
    ``sequential=False`` to force the coupled factorization.
    """
    system = assemble_momentum(mesh, config, viscosity, consts, **kw)
    if sequential is None:
        sequential = config.formulation == W_SIA and not config.fssa
    if sequential:
        x, info = solve_block_triangular(system)
    else:
        x, info = solve_linear_system(system)
    return _solution(system, x, mesh, config, {"residual": info["residual"], "iterations": 1})


def solve_sia_weak(mesh, config: FormulationConfig, fields: SurfaceFields, consts):
    """W-SIA or W-SIAStokes with the closed-form SIA viscosity at quadrature points."""
    _, _, geom = build_spaces(mesh, config.element_pair)
    mu = sia_viscosity_at_quadrature(geom, fields, consts)
    return solve_momentum(mesh, config, mu, consts)


def picard_solve_wstokes(mesh, config: FormulationConfig, consts: PhysicalConstants,
                         initial_guess: MomentumSolution | None = None,
                         viscosity: Callable | None = None, **kw) -> MomentumSolution:
    """Fixed-point iteration on the viscosity, ``mu_k = mu*(D u_{k-1})``.

    Stops when ``|u_k - u_{k-1}| / |u_k| < picard_tol``; the returned
    diagnostics hold the iteration count and the increment history.
    """
    if config.formulation != W_STOKES:
        raise ConfigError("picard_solve_wstokes needs the W_Stokes formulation")
    visc = viscosity or (lambda D11, D12, D22: glen_viscosity(D11, D12, D22, consts))
    vs, _, _ = build_spaces(mesh, config.element_pair)
    if initial_guess is None:
        u1 = np.zeros(vs.n)
        u2 = np.zeros(vs.n)
    else:
        u1, u2 = np.asarray(initial_guess.u1), np.asarray(initial_guess.u2)
    increments = []
    system = x = None
    for it in range(1, config.picard_max_iter + 1):
        mu = visc(*strain_rates(mesh, config.element_pair, u1, u2))
        system = assemble_momentum(mesh, config, mu, consts, **kw)
        x, info = solve_linear_system(system)
        n1, n2, _ = _split(system, x)
        num = np.sqrt(np.sum((n1 - u1) ** 2 + (n2 - u2) ** 2))
        den = np.sqrt(np.sum(n1 ** 2 + n2 ** 2))
        inc = num / den if den > 0 else num
        increments.append(float(inc))
        u1, u2 = n1, n2
        log.debug("picard %d: increment %.3e", it, inc)
        if inc < config.picard_tol:
            return _solution(system, x, mesh, config,
                             {"residual": info["residual"], "iterations": it,
                              "increments": increments})
    sol = _solution(system, x, mesh, config, {"iterations": config.picard_max_iter,
                                               "increments": increments})
    raise ConvergenceError(f"Picard did not converge in {config.picard_max_iter} iterations "
                           f"(last increment {increments[-1]:.3e})", increments[-1], sol)


def write_matrix(A, path) -> None:
    """Coordinate text dump, one ``row col value`` triple per line."""
    A = sp.coo_matrix(A)
    with open(path, "w") as fh:
        for r, c, v in zip(A.row, A.col, A.data):
            fh.write(f"{r} {c} {float(v)!r}\n")
