import numpy as np
import pytest
import scipy.sparse as sp
import sympy
from hypothesis import given
from hypothesis import strategies as st

from weaksia.fields import HorizontalGrid
from weaksia.geometry import NO_SLIP, DIRICHLET_FIXED, DomainProfile, build_slab_profile, extrude_mesh
from weaksia.momentum import (W_SIA, W_SIASTOKES, W_STOKES, ConfigError, ConvergenceError,
                              FormulationConfig, SolverError, assemble_fssa_term, assemble_momentum,
                              build_spaces, extract_surface_velocities, picard_solve_wstokes,
                              solve_block_triangular, solve_linear_system, solve_momentum,
                              solve_sia_weak, write_matrix)
from weaksia.sia import sia_surface_velocity, surface_fields


def flat(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def slab_case(n_x, n_y, **kw):
    p = build_slab_profile(**kw)
    g = HorizontalGrid.from_profile(p, n_x)
    f = surface_fields(g, p.surface0(g.x), p.bed(g.x))
    return p, g, f, extrude_mesh(p, n_x, n_y)


@pytest.fixture(scope="module")
def small_slab():
    return slab_case(20, 4)


def p2_basis_at(tri, node):
    """Symbolic P2 basis function of ``node`` on triangle ``tri`` (physical coordinates)."""
    x, y = sympy.symbols("x y")
    (x0, y0), (x1, y1), (x2, y2) = [tuple(map(sympy.nsimplify, v)) for v in tri]
    det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    lam1 = ((y2 - y0) * (x - x0) - (x2 - x0) * (y - y0)) / det
    lam2 = (-(y1 - y0) * (x - x0) + (x1 - x0) * (y - y0)) / det
    lam = [1 - lam1 - lam2, lam1, lam2]
    verts = [np.array(v, dtype=float) for v in tri]
    for i in range(3):
        if np.allclose(node, verts[i]):
            return lam[i] * (2 * lam[i] - 1)
    for i in range(3):
        for j in range(i + 1, 3):
            if np.allclose(node, 0.5 * (verts[i] + verts[j])):
                return 4 * lam[i] * lam[j]
    return sympy.Integer(0)


def integrate_on_triangle(expr, tri):
    x, y, s, t = sympy.symbols("x y s t")
    (x0, y0), (x1, y1), (x2, y2) = [tuple(map(sympy.nsimplify, v)) for v in tri]
    X = x0 + s * (x1 - x0) + t * (x2 - x0)
    Y = y0 + s * (y1 - y0) + t * (y2 - y0)
    jac = abs((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))
    f = expr.subs({x: X, y: Y}, simultaneous=True)
    return sympy.integrate(sympy.integrate(f, (t, 0, 1 - s)), (s, 0, 1)) * jac


class TestConfig:
    def test_pairs_forced(self):
        assert FormulationConfig(W_SIA).element_pair == "P1P1"
        assert FormulationConfig(W_SIASTOKES).element_pair == "P2P1"
        assert FormulationConfig(W_STOKES).element_pair == "P2P1"

    @pytest.mark.parametrize("form,pair", [(W_SIA, "P2P1"), (W_SIASTOKES, "P1P1"), (W_STOKES, "P1P1")])
    def test_inconsistent_pair(self, form, pair):
        with pytest.raises(ConfigError):
            FormulationConfig(form, element_pair=pair)

    def test_fssa_switch(self):
        assert not FormulationConfig(fssa_theta=0.0, fssa_dt=1.0).fssa
        assert FormulationConfig(fssa_theta=0.5, fssa_dt=1.0).fssa
        with pytest.raises(ConfigError):
            FormulationConfig(fssa_theta=1.5)
        with pytest.raises(ConfigError):
            FormulationConfig("W_Nope")


class TestAssembly:
    def test_p2_stiffness_against_symbolic_integrals(self, consts):
        profile = DomainProfile(0.0, 2.0, flat, lambda x: flat(x) + 1.0, NO_SLIP, DIRICHLET_FIXED,
                                min_thickness=0.5)
        mesh = extrude_mesh(profile, 2, 1)
        mu = 0.7
        system = assemble_momentum(mesh, FormulationConfig(W_SIASTOKES), mu, consts)
        vs = system.velocity_space
        K = system.full_matrix.tocsr()[:vs.n, :vs.n].toarray()
        x, y = sympy.symbols("x y")
        expected = np.zeros_like(K)
        for tri_ids in mesh.triangles:
            tri = mesh.vertices[tri_ids]
            cell = [i for i in range(vs.n) if _in_triangle(vs.coords[i], tri)]
            basis = {i: p2_basis_at(tri, vs.coords[i]) for i in cell}
            for i in cell:
                for j in cell:
                    e = 2 * mu * sympy.diff(basis[i], x) * sympy.diff(basis[j], x) \
                        + mu * sympy.diff(basis[i], y) * sympy.diff(basis[j], y)
                    expected[i, j] += float(integrate_on_triangle(e, tri))
        np.testing.assert_allclose(K, expected, atol=1e-12)

    def test_wsia_vertical_rows_only_touch_pressure(self, small_slab, consts):
        _, _, f, mesh = small_slab
        vs, _, geom = build_spaces(mesh, "P1P1")
        from weaksia.momentum import sia_viscosity_at_quadrature
        mu = sia_viscosity_at_quadrature(geom, f, consts)
        system = assemble_momentum(mesh, FormulationConfig(W_SIA), mu, consts)
        n = vs.n
        rows = system.full_matrix.tocsr()[n:2 * n]
        assert rows[:, :2 * n].nnz == 0 or abs(rows[:, :2 * n]).max() == 0
        assert rows[:, 2 * n:].nnz > 0

    def test_fssa_changes_only_surface_v2_rows(self, small_slab, consts):
        _, _, f, mesh = small_slab
        from weaksia.momentum import sia_viscosity_at_quadrature
        for form in (W_SIA, W_SIASTOKES):
            cfg0 = FormulationConfig(form)
            vs, _, geom = build_spaces(mesh, cfg0.element_pair)
            mu = sia_viscosity_at_quadrature(geom, f, consts)
            A0 = assemble_momentum(mesh, cfg0, mu, consts).full_matrix
            A1 = assemble_momentum(mesh, FormulationConfig(form, 1.0, 2.0), mu, consts).full_matrix
            diff = sp.coo_matrix(A1 - A0)
            changed = set(diff.row[np.abs(diff.data) > 0])
            allowed = {vs.n + i for i in np.nonzero(vs.surface)[0]}
            assert changed and changed <= allowed

    def test_theta_zero_is_identical(self, small_slab, consts):
        _, _, f, mesh = small_slab
        from weaksia.momentum import sia_viscosity_at_quadrature
        vs, _, geom = build_spaces(mesh, "P2P1")
        mu = sia_viscosity_at_quadrature(geom, f, consts)
        a = assemble_momentum(mesh, FormulationConfig(W_SIASTOKES), mu, consts)
        b = assemble_momentum(mesh, FormulationConfig(W_SIASTOKES, 0.0, 5.0), mu, consts)
        assert (a.matrix != b.matrix).nnz == 0
        assert np.array_equal(a.rhs, b.rhs)

    def test_velocity_block_symmetric(self, small_slab, consts):
        _, _, f, mesh = small_slab
        from weaksia.momentum import sia_viscosity_at_quadrature
        vs, _, geom = build_spaces(mesh, "P2P1")
        mu = sia_viscosity_at_quadrature(geom, f, consts)
        K = assemble_momentum(mesh, FormulationConfig(W_SIASTOKES), mu, consts).full_matrix
        V = K[:2 * vs.n, :2 * vs.n]
        assert abs(V - V.T).max() <= 1e-12 * abs(V).max()
        Kf = assemble_momentum(mesh, FormulationConfig(W_SIASTOKES, 1.0, 3.0), mu, consts).full_matrix
        asym = sp.coo_matrix(Kf[:2 * vs.n, :2 * vs.n] - Kf[:2 * vs.n, :2 * vs.n].T)
        big = np.abs(asym.data) > 1e-12 * abs(V).max()
        surf_v2 = {vs.n + i for i in np.nonzero(vs.surface)[0]}
        assert set(asym.row[big]) | set(asym.col[big]) <= surf_v2 | set(np.nonzero(vs.surface)[0])

    def test_write_matrix(self, tmp_path):
        A = sp.csr_matrix(np.array([[1.5, 0], [0, -2.0]]))
        write_matrix(A, tmp_path / "a.txt")
        lines = (tmp_path / "a.txt").read_text().split("\n")
        assert lines[0] == "0 0 1.5" and lines[1] == "1 1 -2.0"


def _in_triangle(p, tri, tol=1e-12):
    a, b, c = tri
    m = np.column_stack([b - a, c - a])
    lam = np.linalg.solve(m, p - a)
    return lam.min() >= -tol and lam.sum() <= 1 + tol


class TestFSSATerm:
    def test_zero_theta(self, slab_mesh, consts):
        assert assemble_fssa_term(slab_mesh, 0.0, 3.0, consts).nnz == 0

    def test_tangential_flow_gives_zero(self, consts):
        p = build_slab_profile(bump_amp=0.0)
        mesh = extrude_mesh(p, 10, 2)
        vs, _, _ = build_spaces(mesh, "P2P1")
        F = assemble_fssa_term(mesh, 1.0, 2.0, consts, vs, len(mesh.vertices))
        t = np.array([1.0, -np.tan(np.radians(0.75))])
        u = np.concatenate([np.full(vs.n, t[0]), np.full(vs.n, t[1]), np.zeros(len(mesh.vertices))])
        assert np.abs(F @ u).max() <= 1e-14 * np.abs(F).max()

    @given(st.floats(0.01, 1.0), st.floats(0.01, 50.0))
    def test_linear_in_theta_dt(self, slab_mesh, consts, theta, dt):
        F1 = assemble_fssa_term(slab_mesh, theta, dt, consts).tocoo()
        F2 = assemble_fssa_term(slab_mesh, 2 * theta, dt, consts).tocoo()
        np.testing.assert_array_equal(F1.row, F2.row)
        np.testing.assert_allclose(F2.data, 2 * F1.data, rtol=1e-15)


class TestLinearSolve:
    def test_identity(self):
        b = np.array([1.0, -2.0, 3.0])
        x, info = solve_linear_system((sp.identity(3), b))
        np.testing.assert_array_equal(x, b)
        assert info["residual"] == 0

    def test_spd(self):
        A = np.array([[4.0, 1, 0], [1, 3, 1], [0, 1, 2]])
        b = np.array([1.0, 2.0, 3.0])
        x, _ = solve_linear_system((A, b))
        np.testing.assert_allclose(x, np.linalg.inv(A) @ b, rtol=1e-12)

    def test_singular_reports_pivot(self):
        A = np.array([[1.0, 1.0, 0], [1.0, 1.0, 0], [0, 0, 1.0]])
        with pytest.raises(SolverError) as exc:
            solve_linear_system((A, np.ones(3)))
        assert exc.value.pivot in (0, 1)

    def test_pure_neumann_pressure_is_singular(self, consts):
        # all-Dirichlet velocity box leaves the pressure constant undetermined
        profile = DomainProfile(0.0, 1.0, flat, lambda x: flat(x) + 1.0, NO_SLIP, DIRICHLET_FIXED,
                                min_thickness=0.5)
        mesh = extrude_mesh(profile, 3, 3)
        system = assemble_momentum(mesh, FormulationConfig(W_SIASTOKES), 1.0, consts)
        vs = system.velocity_space
        surf = np.nonzero(vs.surface)[0]
        keep = np.ones(system.full_matrix.shape[0], dtype=bool)
        keep[surf] = keep[vs.n + surf] = False
        wall = np.nonzero(vs.bed | vs.left | vs.right)[0]
        keep[wall] = keep[vs.n + wall] = False
        A = system.full_matrix.tocsr()[keep][:, keep]
        with pytest.raises(SolverError):
            solve_linear_system((A, np.ones(A.shape[0])))


class TestSolutions:
    def test_wsiastokes_close_to_sia(self, consts):
        p, g, f, mesh = slab_case(40, 6)
        sol = solve_sia_weak(mesh, FormulationConfig(W_SIASTOKES), f, consts)
        u1s, _ = sia_surface_velocity(f, consts)
        crest = int(np.argmin(np.abs(g.x - p.length / 2)))
        assert abs(sol.u1s[crest] - u1s[crest]) <= 0.15 * abs(u1s[crest])
        assert sol.diagnostics["residual"] < 1e-9

    def test_incompressible(self, small_slab, consts):
        _, _, f, mesh = small_slab
        sol = solve_sia_weak(mesh, FormulationConfig(W_SIASTOKES), f, consts)
        from weaksia.momentum import strain_rates
        vs, ps, geom = build_spaces(mesh, "P2P1")
        D11, _, D22 = strain_rates(mesh, "P2P1", sol.u1, sol.u2)
        from weaksia.elements import TRI_POINTS
        pval, _ = ps.basis(TRI_POINTS)
        loc = np.einsum("eq,qi->ei", geom.wdet * (D11 + D22), pval)
        r = np.bincount(ps.cell_dofs.ravel(), loc.ravel(), minlength=ps.n)
        # periodic pressure nodes are one unknown: fold the right wall onto the left
        left, right = np.nonzero(ps.left)[0], np.nonzero(ps.right)[0]
        r[left] += r[right]
        r[right] = 0.0
        scale = np.sqrt(np.sum(geom.wdet * (D11 ** 2 + D22 ** 2)))
        assert np.abs(r).max() <= 1e-9 * scale

    def test_sequential_matches_coupled(self, small_slab, consts):
        _, _, f, mesh = small_slab
        from weaksia.momentum import sia_viscosity_at_quadrature
        _, _, geom = build_spaces(mesh, "P1P1")
        mu = sia_viscosity_at_quadrature(geom, f, consts)
        a = solve_momentum(mesh, FormulationConfig(W_SIA), mu, consts, sequential=True)
        b = solve_momentum(mesh, FormulationConfig(W_SIA), mu, consts, sequential=False)
        np.testing.assert_allclose(a.u1, b.u1, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(a.u2, b.u2, rtol=1e-9, atol=1e-9)

    def test_pressure_independent_of_velocity_without_fssa(self, small_slab, consts):
        _, _, f, mesh = small_slab
        from weaksia.momentum import sia_viscosity_at_quadrature
        _, _, geom = build_spaces(mesh, "P1P1")
        sol1 = solve_momentum(mesh, FormulationConfig(W_SIA), sia_viscosity_at_quadrature(geom, f, consts), consts)
        sol2 = solve_momentum(mesh, FormulationConfig(W_SIA), 1e3, consts)
        np.testing.assert_allclose(sol1.p, sol2.p, rtol=1e-10, atol=1e-12)
        col = mesh.layer_index[:, 0]
        np.testing.assert_allclose(sol1.p, consts.rho_g * (mesh.surface_columns[col] - mesh.vertices[:, 1]),
                                   rtol=1e-8, atol=1e-10)

    def test_fssa_couples_pressure_to_velocity(self, small_slab, consts):
        _, _, f, mesh = small_slab
        cfg = FormulationConfig(W_SIA, 1.0, 1.0)
        sol1 = solve_momentum(mesh, cfg, 1e-2, consts)
        sol2 = solve_momentum(mesh, cfg, 1e3, consts)
        assert np.abs(sol1.p - sol2.p).max() > 1e-8

    def test_surface_extraction(self, small_slab, consts):
        _, _, f, mesh = small_slab
        for form in (W_SIA, W_SIASTOKES):
            sol = solve_sia_weak(mesh, FormulationConfig(form), f, consts)
            u1s, u2s = extract_surface_velocities(sol, mesh)
            np.testing.assert_array_equal(u1s, sol.u1s)
            if form == W_SIA:
                np.testing.assert_array_equal(u1s, sol.u1[mesh.surface_vertices])

    def test_no_slip_box_gives_zero_surface_velocity(self, consts):
        profile = DomainProfile(0.0, 1.0, flat, lambda x: flat(x) + 1.0, NO_SLIP, DIRICHLET_FIXED,
                                min_thickness=0.5)
        mesh = extrude_mesh(profile, 4, 4)
        zero = lambda v, p: (0.0, 0.0, 0.0)   # noqa: E731
        sol = solve_momentum(mesh, FormulationConfig(W_SIASTOKES), 1.0, consts,
                             body_force=lambda x, y: (0.0, 0.0), dirichlet_values=zero)
        np.testing.assert_allclose(sol.u1s, 0, atol=1e-14)
        np.testing.assert_allclose(sol.u2s, 0, atol=1e-14)


class TestPicard:
    def test_constant_viscosity_one_extra_iteration(self, small_slab, consts):
        _, _, _, mesh = small_slab
        sol = picard_solve_wstokes(mesh, FormulationConfig(W_STOKES), consts,
                                   viscosity=lambda a, b, c: np.full_like(a, 5.0))
        assert sol.diagnostics["iterations"] == 2

    def test_slab_increments_decrease(self, small_slab, consts):
        _, _, _, mesh = small_slab
        sol = picard_solve_wstokes(mesh, FormulationConfig(W_STOKES), consts)
        inc = sol.diagnostics["increments"]
        assert inc[-1] < 1e-6
        assert all(b < a for a, b in zip(inc[2:], inc[3:]))
        again = picard_solve_wstokes(mesh, FormulationConfig(W_STOKES), consts, initial_guess=sol)
        assert again.diagnostics["iterations"] == 1
        assert np.all(sol.u1s > 0)

    def test_convergence_error(self, small_slab, consts):
        _, _, _, mesh = small_slab
        with pytest.raises(ConvergenceError) as exc:
            picard_solve_wstokes(mesh, FormulationConfig(W_STOKES, picard_max_iter=2), consts)
        assert exc.value.residual > 0 and exc.value.solution is not None

    def test_wrong_formulation(self, small_slab, consts):
        with pytest.raises(ConfigError):
            picard_solve_wstokes(small_slab[3], FormulationConfig(W_SIASTOKES), consts)
