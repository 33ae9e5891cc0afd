"""Reference triangle bases, quadrature rules and P1/P2 node layouts."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ExtrudedMesh

# degree-4 six point rule on the reference triangle (weights sum to 1/2)
_A, _B = 0.445948490915965, 0.091576213509771
_WA, _WB = 0.223381589678011, 0.109951743655322
TRI_POINTS = np.array([[_A, _A], [1 - 2 * _A, _A], [_A, 1 - 2 * _A],
                       [_B, _B], [1 - 2 * _B, _B], [_B, 1 - 2 * _B]])
TRI_WEIGHTS = 0.5 * np.array([_WA, _WA, _WA, _WB, _WB, _WB])

# three point Gauss rule on [0, 1]
LINE_POINTS = 0.5 + 0.5 * np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
LINE_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0


def p1_basis(pts):
    xi, eta = pts[:, 0], pts[:, 1]
    val = np.column_stack([1 - xi - eta, xi, eta])
    grad = np.broadcast_to(np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]),
                           (len(pts), 3, 2)).copy()
    return val, grad


def p2_basis(pts):
    """Vertices 0, 1, 2 then midpoints of edges (1,2), (2,0), (0,1)."""
    xi, eta = pts[:, 0], pts[:, 1]
    l0, l1, l2 = 1 - xi - eta, xi, eta
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    lam = [l0, l1, l2]
    val = np.column_stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                           4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1])
    grad = np.zeros((len(pts), 6, 2))
    for k in range(3):
        grad[:, k] = (4 * lam[k] - 1)[:, None] * dl[k]
    for k, (a, b) in enumerate([(1, 2), (2, 0), (0, 1)]):
        grad[:, 3 + k] = 4 * (lam[a][:, None] * dl[b] + lam[b][:, None] * dl[a])
    return val, grad


def line_basis(degree, t):
    """Edge basis ordered (start, end[, mid])."""
    if degree == 1:
        return np.column_stack([1 - t, t])
    return np.column_stack([(1 - t) * (1 - 2 * t), t * (2 * t - 1), 4 * t * (1 - t)])


@dataclass(frozen=True, eq=False)
class Space:
    """Lagrange space on an extruded mesh.

    Nodes sit on a refined structured grid: node ``(i, j)`` for ``i`` in
    ``0..r*n_x`` and ``j`` in ``0..r*n_y`` with ``r`` the degree.
    """
    degree: int
    coords: np.ndarray
    cell_dofs: np.ndarray
    column: np.ndarray
    layer: np.ndarray
    n_cols: int
    n_layers: int
    surface_edges: np.ndarray

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def bed(self):
        return self.layer == 0

    @property
    def surface(self):
        return self.layer == self.n_layers - 1

    @property
    def left(self):
        return self.column == 0

    @property
    def right(self):
        return self.column == self.n_cols - 1

    def surface_nodes(self) -> np.ndarray:
        """Surface nodes at mesh vertices, ascending x."""
        idx = np.nonzero(self.surface & (self.column % self.degree == 0))[0]
        return idx[np.argsort(self.column[idx])]

    def basis(self, pts):
        return p1_basis(pts) if self.degree == 1 else p2_basis(pts)


def p1_space(mesh: ExtrudedMesh) -> Space:
    ny1 = mesh.n_y + 1
    cols = np.arange(mesh.n_x)
    edges = np.column_stack([cols * ny1 + mesh.n_y, (cols + 1) * ny1 + mesh.n_y])
    return Space(1, mesh.vertices, mesh.triangles, mesh.layer_index[:, 0],
                 mesh.layer_index[:, 1], mesh.n_x + 1, ny1, edges)


def p2_space(mesh: ExtrudedMesh) -> Space:
    nx, ny = mesh.n_x, mesh.n_y
    m = 2 * ny + 1
    i2, j2 = np.meshgrid(np.arange(2 * nx + 1), np.arange(m), indexing="ij")
    i2, j2 = i2.ravel(), j2.ravel()
    a = mesh.vertex_id(i2 // 2, j2 // 2)
    b = mesh.vertex_id((i2 + 1) // 2, (j2 + 1) // 2)
    coords = 0.5 * (mesh.vertices[a] + mesh.vertices[b])

    def nid(i, j):
        return i * m + j

    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    i, j = 2 * i.ravel(), 2 * j.ravel()
    cells = np.empty((2 * nx * ny, 6), dtype=np.int64)
    cells[0::2] = np.column_stack([nid(i, j), nid(i + 2, j), nid(i + 2, j + 2),
                                   nid(i + 2, j + 1), nid(i + 1, j + 1), nid(i + 1, j)])
    cells[1::2] = np.column_stack([nid(i, j), nid(i + 2, j + 2), nid(i, j + 2),
                                   nid(i + 1, j + 2), nid(i, j + 1), nid(i + 1, j + 1)])
    c = 2 * np.arange(nx)
    top = 2 * ny
    edges = np.column_stack([nid(c, top), nid(c + 2, top), nid(c + 1, top)])
    return Space(2, coords, cells, i2, j2, 2 * nx + 1, m, edges)


@dataclass(frozen=True, eq=False)
class Geometry:
    """Per-element affine data at the triangle quadrature points."""
    detJ: np.ndarray      # (M,)
    invJ: np.ndarray      # (M, 2, 2)
    qx: np.ndarray        # (M, Q)
    qy: np.ndarray        # (M, Q)
    wdet: np.ndarray      # (M, Q) quadrature weight times |det J|

    def grads(self, ref_grad):
        """Physical gradients (M, Q, k, 2) from reference ones (Q, k, 2)."""
        q, k, _ = ref_grad.shape
        flat = np.matmul(ref_grad.reshape(1, q * k, 2), self.invJ)
        return flat.reshape(-1, q, k, 2)


def element_geometry(mesh: ExtrudedMesh, points=TRI_POINTS, weights=TRI_WEIGHTS) -> Geometry:
    p = mesh.vertices[mesh.triangles]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)   # columns are edge vectors
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1] / det
    inv[:, 1, 1] = J[:, 0, 0] / det
    inv[:, 0, 1] = -J[:, 0, 1] / det
    inv[:, 1, 0] = -J[:, 1, 0] / det
    lam, _ = p1_basis(points)
    qx = lam @ p[:, :, 0].T
    qy = lam @ p[:, :, 1].T
    wdet = np.abs(det)[:, None] * weights[None, :]
    return Geometry(det, inv, qx.T, qy.T, wdet)
