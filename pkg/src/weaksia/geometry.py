"""Benchmark domain profiles and layered (extruded) triangular meshes.

Every mesh is built from a horizontal grid of ``n_x + 1`` columns, each column
carrying ``n_y + 1`` vertices placed uniformly in the reference coordinate
``yhat`` in [0, 1] and mapped to ``y = b(x) + yhat * (h(x) - b(x))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

PERIODIC = "periodic"
NO_SLIP = "no_slip"
DIRICHLET_FIXED = "dirichlet_fixed"

BED, SURFACE, LATERAL_LEFT, LATERAL_RIGHT = "bed", "surface", "lateral_left", "lateral_right"
TAGS = (BED, SURFACE, LATERAL_LEFT, LATERAL_RIGHT)


class GeometryError(ValueError):
    """Raised for invalid parameters or degenerate ice columns."""


class CrossSectionParseError(ValueError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


Profile1D = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DomainProfile:
    x_min: float
    x_max: float
    bed: Profile1D
    surface0: Profile1D
    lateral_bc: str
    surface_bc: str
    min_thickness: float = 1.0
    name: str = "profile"
    # elevation subtracted from h before the energy integral; None means 0
    datum: Profile1D | None = None

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise GeometryError("x_max must exceed x_min")
        if self.lateral_bc not in (PERIODIC, NO_SLIP):
            raise GeometryError(f"unknown lateral_bc {self.lateral_bc!r}")
        if self.surface_bc not in (PERIODIC, DIRICHLET_FIXED):
            raise GeometryError(f"unknown surface_bc {self.surface_bc!r}")
        if self.min_thickness <= 0:
            raise GeometryError("min_thickness must be positive")
        xs = np.linspace(self.x_min, self.x_max, 257)
        thick = self.surface0(xs) - self.bed(xs)
        if np.any(thick < self.min_thickness * (1 - 1e-12)):
            i = int(np.argmin(thick))
            raise GeometryError(
                f"surface below bed + min_thickness at x={xs[i]:.6g} (thickness {thick[i]:.6g})")
        if self.periodic:
            # periodic up to a common vertical shift (inclined slabs)
            t0, t1 = thick[0], thick[-1]
            if abs(t0 - t1) > 1e-9 * max(abs(t0), abs(t1), 1.0):
                raise GeometryError("periodic profile needs equal end thicknesses")

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def periodic(self) -> bool:
        return self.lateral_bc == PERIODIC

    @property
    def period_offset(self) -> float:
        """Vertical shift between the right and left ends, h(x_max) - h(x_min)."""
        if not self.periodic:
            return 0.0
        ends = np.array([self.x_min, self.x_max])
        b = self.bed(ends)
        return float(b[1] - b[0])

    def datum_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.datum is None:
            return np.zeros_like(x)
        return np.asarray(self.datum(x), dtype=float)


def build_slab_profile(L=80e3, H=1e3, alpha=0.75, bump_amp=1.0, bump_decay=5e-8,
                       min_thickness=1.0) -> DomainProfile:
    """Inclined slab with a Gaussian surface bump; ``alpha`` in degrees, clockwise."""
    if L <= 0 or H <= 0:
        raise GeometryError("slab needs L > 0 and H > 0")
    slope = math.tan(math.radians(alpha))

    def bed(x):
        return -np.asarray(x, dtype=float) * slope

    def surface0(x):
        x = np.asarray(x, dtype=float)
        return bed(x) + H + bump_amp * np.exp(-bump_decay * (x - L / 2) ** 2)

    def unperturbed(x):
        return bed(x) + H

    return DomainProfile(0.0, float(L), bed, surface0, PERIODIC, PERIODIC,
                         min_thickness=min_thickness, name="slab", datum=unperturbed)


def build_icecap_profile(L=750e3, H=3e3, min_thickness=1.0) -> DomainProfile:
    if L <= 0 or H <= 0:
        raise GeometryError("ice cap needs L > 0 and H > 0")

    def h1(x):
        return (3.0 - (np.asarray(x, dtype=float) / L) ** 2) ** 0.58

    h1_edge = float(h1(-L))
    h1_top = float(h1(0.0))

    def bed(x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def surface0(x):
        raw = H * (h1(x) - h1_edge) / h1_top
        return np.maximum(raw, bed(x) + min_thickness)

    return DomainProfile(-float(L), float(L), bed, surface0, NO_SLIP, DIRICHLET_FIXED,
                         min_thickness=min_thickness, name="icecap")


@dataclass(frozen=True)
class CrossSectionData:
    x: np.ndarray
    bed: np.ndarray
    surface: np.ndarray

    def __post_init__(self):
        if len(self.x) < 4:
            raise GeometryError("cross section needs at least 4 samples")
        if np.any(np.diff(self.x) <= 0):
            i = int(np.argmin(np.diff(self.x)))
            raise GeometryError(f"sample x not strictly increasing at index {i + 1}")

    @cached_property
    def bed_spline(self) -> CubicSpline:
        return CubicSpline(self.x, self.bed, bc_type="natural")

    @cached_property
    def surface_spline(self) -> CubicSpline:
        return CubicSpline(self.x, self.surface, bc_type="natural")


def read_cross_section(path) -> CrossSectionData:
    """Parse whitespace separated ``x bed surface`` rows; ``#`` starts a comment."""
    path = Path(path)
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 3:
                raise CrossSectionParseError(path, lineno, f"expected 3 columns, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise CrossSectionParseError(path, lineno, str(exc)) from None
    if not rows:
        raise CrossSectionParseError(path, 0, "no samples")
    arr = np.array(rows)
    return CrossSectionData(arr[:, 0], arr[:, 1], arr[:, 2])


def load_cross_section_profile(path, min_thickness=1.0) -> DomainProfile:
    data = read_cross_section(path)
    bs, ss = data.bed_spline, data.surface_spline

    def bed(x):
        return bs(np.asarray(x, dtype=float))

    def surface0(x):
        x = np.asarray(x, dtype=float)
        return np.maximum(ss(x), bs(x) + min_thickness)

    return DomainProfile(float(data.x[0]), float(data.x[-1]), bed, surface0, NO_SLIP,
                         DIRICHLET_FIXED, min_thickness=min_thickness,
                         name=Path(path).stem)


@dataclass(frozen=True, eq=False)
class ExtrudedMesh:
    """Structured triangulation of the ice column domain.

    Vertex ``(i, j)`` (column ``i``, layer ``j``) has index ``i * (n_y + 1) + j``.
    """
    profile: DomainProfile
    n_x: int
    n_y: int
    x_columns: np.ndarray
    bed_columns: np.ndarray
    surface_columns: np.ndarray
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    layer_index: np.ndarray
    reference_fraction: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dx(self) -> float:
        return (self.profile.x_max - self.profile.x_min) / self.n_x

    @property
    def periodic(self) -> bool:
        return self.profile.periodic

    def vertex_id(self, i, j):
        return np.asarray(i) * (self.n_y + 1) + np.asarray(j)

    @property
    def surface_vertices(self) -> np.ndarray:
        return self.vertex_id(np.arange(self.n_x + 1), self.n_y)

    @property
    def bed_vertices(self) -> np.ndarray:
        return self.vertex_id(np.arange(self.n_x + 1), 0)

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edges_with_tag(self, tag) -> np.ndarray:
        return self.boundary_edges[self.boundary_tags == tag]


def _column_coordinates(x, bed, surface, n_y):
    yhat = np.linspace(0.0, 1.0, n_y + 1)
    y = bed[:, None] + yhat[None, :] * (surface - bed)[:, None]
    xx = np.repeat(x, n_y + 1)
    return np.column_stack([xx, y.ravel()]), np.tile(yhat, len(x))


def _check_thickness(bed, surface, min_thickness):
    thick = surface - bed
    bad = np.nonzero(thick < min_thickness * (1 - 1e-12))[0]
    if bad.size:
        i = int(bad[0])
        raise GeometryError(f"column {i} has thickness {thick[i]:.6g} < {min_thickness}")


def extrude_mesh(profile: DomainProfile, n_x: int, n_y: int, surface=None) -> ExtrudedMesh:
    """Mesh ``profile`` with ``n_x`` columns of ``n_y`` layers.

    ``surface`` optionally overrides the column surface heights (length ``n_x + 1``).
    """
    if n_x < 2 or n_y < 1:
        raise GeometryError("need n_x >= 2 and n_y >= 1")
    x = profile.x_min + np.arange(n_x + 1) * ((profile.x_max - profile.x_min) / n_x)
    x[-1] = profile.x_max
    bed = np.asarray(profile.bed(x), dtype=float)
    if surface is None:
        h = np.asarray(profile.surface0(x), dtype=float).copy()
    else:
        h = column_heights(profile, surface, n_x)
    _check_thickness(bed, h, profile.min_thickness)
    vertices, yhat = _column_coordinates(x, bed, h, n_y)

    ny1 = n_y + 1
    i, j = np.meshgrid(np.arange(n_x), np.arange(n_y), indexing="ij")
    ll = (i * ny1 + j).ravel()
    lr = ll + ny1
    ur = lr + 1
    ul = ll + 1
    # diagonal lower-left -> upper-right in every quad
    tri = np.empty((2 * n_x * n_y, 3), dtype=np.int64)
    tri[0::2] = np.column_stack([ll, lr, ur])
    tri[1::2] = np.column_stack([ll, ur, ul])

    cols = np.arange(n_x)
    layers = np.arange(n_y)
    edges = [
        np.column_stack([cols * ny1, (cols + 1) * ny1]),
        np.column_stack([cols * ny1 + n_y, (cols + 1) * ny1 + n_y]),
        np.column_stack([layers, layers + 1]),
        np.column_stack([n_x * ny1 + layers, n_x * ny1 + layers + 1]),
    ]
    tags = np.concatenate([np.full(len(e), t) for e, t in zip(edges, TAGS)])
    layer_index = np.column_stack([np.repeat(np.arange(n_x + 1), ny1),
                                   np.tile(np.arange(ny1), n_x + 1)])
    arrays = [x, bed, h, vertices, tri, np.concatenate(edges), tags, layer_index, yhat]
    for a in arrays:
        a.setflags(write=False)
    return ExtrudedMesh(profile, n_x, n_y, *arrays)


def deform_mesh_to_surface(mesh: ExtrudedMesh, h) -> ExtrudedMesh:
    """Move every column so its top sits at ``h``; connectivity and yhat are kept.

    ``h`` is either the ``n_x + 1`` column heights or a ``SurfaceState``.
    """
    h = column_heights(mesh.profile, h, mesh.n_x)
    _check_thickness(mesh.bed_columns, h, mesh.profile.min_thickness)
    y = mesh.bed_columns[:, None] + mesh.reference_fraction.reshape(mesh.n_x + 1, -1) * \
        (h - mesh.bed_columns)[:, None]
    vertices = np.column_stack([mesh.vertices[:, 0], y.ravel()])
    vertices.setflags(write=False)
    h.setflags(write=False)
    return ExtrudedMesh(mesh.profile, mesh.n_x, mesh.n_y, mesh.x_columns, mesh.bed_columns, h,
                        vertices, mesh.triangles, mesh.boundary_edges, mesh.boundary_tags,
                        mesh.layer_index, mesh.reference_fraction)


def column_heights(profile: DomainProfile, h, n_x) -> np.ndarray:
    """Expand a surface (array or state) to all ``n_x + 1`` mesh columns."""
    h = np.asarray(getattr(h, "h", h), dtype=float)
    if len(h) == n_x + 1:
        return h.copy()
    if profile.periodic and len(h) == n_x:
        return np.append(h, h[0] + profile.period_offset)
    raise GeometryError(f"surface has {len(h)} values, mesh has {n_x + 1} columns")


def write_mesh(mesh: ExtrudedMesh, path) -> None:
    """Plain-text listing: vertex lines ``x y``, triangle lines ``i j k``, edge lines ``i j tag``."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# vertices {len(mesh.vertices)}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        fh.write(f"# triangles {len(mesh.triangles)}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")
        fh.write(f"# edges {len(mesh.boundary_edges)}\n")
        for (a, b), t in zip(mesh.boundary_edges, mesh.boundary_tags):
            fh.write(f"{a} {b} {t}\n")


def read_mesh(path):
    """Inverse of :func:`write_mesh`; returns ``(vertices, triangles, edges, tags)``."""
    sections = {}
    current = None
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("#"):
                current = line.split()[1]
                sections[current] = []
            elif line.strip():
                sections[current].append(line.split())
    vertices = np.array(sections["vertices"], dtype=float)
    triangles = np.array(sections["triangles"], dtype=np.int64)
    edges = np.array([e[:2] for e in sections["edges"]], dtype=np.int64)
    tags = np.array([e[2] for e in sections["edges"]])
    return vertices, triangles, edges, tags
