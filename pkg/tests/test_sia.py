import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from weaksia.fields import HorizontalGrid, PhysicalConstants
from weaksia.geometry import DIRICHLET_FIXED, build_slab_profile, extrude_mesh
from weaksia.sia import (sia_surface_velocity, sia_u1, sia_u2, sia_velocity_field, sia_viscosity,
                         surface_fields, surface_gradient_projection)

RHO_G = 910 * 9.81 * 1e-6
SLOPE = math.tan(math.radians(0.75))


def du1_dx(y, f, consts):
    """x-derivative of the closed-form u1 by the chain rule, written out independently."""
    k = 0.5 * consts.A0 * consts.rho_g ** 3
    H = f["h"] - f["b"]
    d = f["h"] - y
    return -k * (3 * f["dhdx"] ** 2 * f["d2hdx2"] * (H ** 4 - d ** 4)
                 + f["dhdx"] ** 3 * (4 * H ** 3 * (f["dhdx"] - f["dbdx"]) - 4 * d ** 3 * f["dhdx"]))


def quadrature_u2(y_top, f, consts, n=64):
    """-int_b^y du1/dx dy' by Gauss-Legendre per column."""
    t, w = np.polynomial.legendre.leggauss(n)
    b = f["b"]
    half = 0.5 * (y_top - b)
    ys = b[:, None] + half[:, None] * (t[None, :] + 1)
    vals = du1_dx(ys, {k: v[:, None] for k, v in f.items()}, consts)
    return -(vals * w[None, :]).sum(axis=1) * half


def slab_fields(n_x=80, **kw):
    p = build_slab_profile(**kw)
    g = HorizontalGrid.from_profile(p, n_x)
    return p, g, surface_fields(g, p.surface0(g.x), p.bed(g.x))


class TestGradientProjection:
    @pytest.mark.parametrize("bc", ["periodic", DIRICHLET_FIXED])
    def test_constant(self, bc):
        g = HorizontalGrid.uniform(9, 8.0, bc)
        np.testing.assert_allclose(surface_gradient_projection(np.full(9, 3.3), g), 0, atol=1e-14)

    def test_linear_dirichlet(self):
        g = HorizontalGrid.uniform(11, 10.0, DIRICHLET_FIXED)
        np.testing.assert_allclose(surface_gradient_projection(0.37 * g.x + 2, g), 0.37, rtol=1e-12)

    def test_quadratic_against_hand_assembly(self):
        g = HorizontalGrid.uniform(5, 4.0, DIRICHLET_FIXED)   # nodes 0..4, dx = 1
        h = g.x ** 2
        M = np.zeros((5, 5))
        load = np.zeros(5)
        for e in range(4):
            slope = h[e + 1] - h[e]
            M[e:e + 2, e:e + 2] += np.array([[2, 1], [1, 2]]) / 6
            load[e:e + 2] += slope / 2
        np.testing.assert_allclose(surface_gradient_projection(h, g), np.linalg.solve(M, load), rtol=1e-12)

    def test_periodic_offset(self):
        # a tilted line is periodic up to a shift; the projection must see a constant slope
        g = HorizontalGrid.uniform(16, 16.0, "periodic", period_offset=-0.5 * 16)
        np.testing.assert_allclose(surface_gradient_projection(-0.5 * g.x, g), -0.5, rtol=1e-12)

    def test_too_small(self):
        with pytest.raises(ValueError):
            surface_gradient_projection(np.zeros(2), HorizontalGrid.uniform(2, 1.0, DIRICHLET_FIXED))


class TestViscosity:
    def test_at_surface(self, consts):
        assert sia_viscosity(10.0, 10.0, 0.3, consts) == pytest.approx(0.5 / consts.epsilon_visc)

    def test_zero_slope(self, consts):
        assert sia_viscosity(-500.0, 10.0, 0.0, consts) == pytest.approx(0.5 / consts.epsilon_visc)

    def test_slab_bed_value(self, consts):
        expected = 0.5 / (100 * RHO_G ** 2 * 1000.0 ** 2 * SLOPE ** 2 + 1e-10)
        assert sia_viscosity(-1000.0, 0.0, -SLOPE, consts) == pytest.approx(expected, rel=1e-12)


class TestVelocities:
    def test_slab_surface_speed(self, consts):
        _, _, f = slab_fields(bump_amp=0.0)
        u1s, u2s = sia_surface_velocity(f, consts)
        expected = 0.5 * 100 * RHO_G ** 3 * SLOPE ** 3 * 1000.0 ** 4
        assert expected == pytest.approx(79.8, abs=0.1)
        np.testing.assert_allclose(u1s, expected, rtol=1e-9)
        # steady uniform slab: vertical velocity balances nothing but the bed slope
        np.testing.assert_allclose(u2s, -expected * SLOPE, rtol=1e-6)

    def test_no_slip_and_hydrostatic(self, consts):
        p, g, f = slab_fields(40)
        mesh = extrude_mesh(p, 40, 6, surface=f.on_columns()["h"])
        sol = sia_velocity_field(mesh, f, consts)
        bed = mesh.bed_vertices
        np.testing.assert_allclose(sol.u1[bed], 0, atol=1e-12)
        np.testing.assert_allclose(sol.u2[bed], 0, atol=1e-12)
        top = mesh.surface_vertices
        np.testing.assert_allclose(sol.p[top], 0, atol=1e-12)
        col = mesh.layer_index[:, 0]
        np.testing.assert_allclose(sol.p, consts.rho_g * (mesh.surface_columns[col] - mesh.vertices[:, 1]),
                                   rtol=1e-12)

    def test_flat_surface(self, consts):
        g = HorizontalGrid.uniform(10, 9e3, DIRICHLET_FIXED)
        f = surface_fields(g, np.full(10, 500.0), np.zeros(10))
        u1s, u2s = sia_surface_velocity(f, consts)
        assert np.all(u1s == 0) and np.all(u2s == 0)

    def test_surface_trace_matches_field(self, consts):
        p, g, f = slab_fields(40)
        mesh = extrude_mesh(p, 40, 6, surface=f.on_columns()["h"])
        sol = sia_velocity_field(mesh, f, consts)
        u1s, u2s = sia_surface_velocity(f, consts)
        np.testing.assert_allclose(sol.u1s[:-1], u1s, rtol=1e-12)
        np.testing.assert_allclose(sol.u2s[:-1], u2s, rtol=1e-12, atol=1e-12)

    def test_u2_against_quadrature_in_the_column(self, consts):
        _, g, f = slab_fields(80)
        d = {k: getattr(f, k) for k in ("h", "b", "dhdx", "d2hdx2", "dbdx")}
        for frac in (0.1, 0.5, 0.9, 1.0):
            y = d["b"] + frac * (d["h"] - d["b"])
            closed = sia_u2(y, d["h"], d["b"], d["dhdx"], d["d2hdx2"], d["dbdx"], consts)
            np.testing.assert_allclose(closed, quadrature_u2(y, d, consts), rtol=1e-8)

    @given(st.floats(0.1, 50.0))
    def test_linear_in_rate_factor(self, c):
        base = PhysicalConstants()
        _, _, f = slab_fields(40)
        u1, u2 = sia_surface_velocity(f, base)
        v1, v2 = sia_surface_velocity(f, base.scaled(A0=base.A0 * c))
        np.testing.assert_allclose(v1, c * u1, rtol=1e-12)
        np.testing.assert_allclose(v2, c * u2, rtol=1e-12, atol=1e-14)

    def test_reflection(self, consts):
        g = HorizontalGrid.uniform(41, 40e3, DIRICHLET_FIXED, x0=-20e3)
        h = 800 + 200 * np.exp(-(g.x / 8e3) ** 2) + 30 * np.sin(g.x / 3e3)
        hr = h[::-1]
        u1, u2 = sia_surface_velocity(surface_fields(g, h, np.zeros(41)), consts)
        r1, r2 = sia_surface_velocity(surface_fields(g, hr, np.zeros(41)), consts)
        np.testing.assert_allclose(r1, -u1[::-1], rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(r2, u2[::-1], rtol=1e-10, atol=1e-12)

    def test_downslope(self, consts):
        _, _, f = slab_fields(40)
        u1s, _ = sia_surface_velocity(f, consts)
        assert np.all(u1s > 0)
