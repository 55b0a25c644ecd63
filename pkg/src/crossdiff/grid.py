"""Uniform tensor grids on intervals and rectangles with no-flux operators.

Nodes sit at ``x_i = i h`` (vertex-centred).  Gradients live on the faces
between neighbouring nodes, and the divergence is defined as the negative
adjoint of the gradient under the lumped nodal quadrature::

    <div F, phi>_M = -<F, grad phi>_W

where ``M`` holds trapezoidal node weights and ``W`` face weights.  Boundary
faces do not exist, so the normal flux through the boundary is zero by
construction.  In 2-D, x-faces are stored before y-faces and nodes are
flattened in C order over ``(Nx, Ny)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class GridError(ValueError):
    pass


def _trapezoid_weights(N: int, h: float) -> np.ndarray:
    w = np.full(N, h)
    w[0] = w[-1] = 0.5 * h
    return w


def _diff_1d(N: int, h: float) -> sp.csr_matrix:
    return sp.diags([-np.ones(N - 1), np.ones(N - 1)], [0, 1], shape=(N - 1, N), format="csr") / h


def _avg_1d(N: int) -> sp.csr_matrix:
    return sp.diags([0.5 * np.ones(N - 1), 0.5 * np.ones(N - 1)], [0, 1], shape=(N - 1, N), format="csr")


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform grid on ``[0, extents[0]] (x [0, extents[1]])``."""

    extents: tuple[float, ...]
    nodes: tuple[int, ...]

    def __post_init__(self):
        ext = tuple(float(e) for e in np.atleast_1d(self.extents))
        nodes = tuple(int(k) for k in np.atleast_1d(self.nodes))
        if len(ext) not in (1, 2) or len(nodes) != len(ext):
            raise GridError(f"grid dimension must be 1 or 2 with matching extents/nodes, got {ext} / {nodes}")
        if any(k < 3 for k in nodes):
            raise GridError(f"need at least 3 nodes per axis, got {nodes}")
        if any(not (e > 0) for e in ext):
            raise GridError(f"extents must be positive, got {ext}")
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def interval(cls, N: int, length: float = 1.0) -> "Grid":
        return cls((length,), (N,))

    @classmethod
    def rectangle(cls, Nx: int, Ny: int, lx: float = 1.0, ly: float = 1.0) -> "Grid":
        return cls((lx, ly), (Nx, Ny))

    @property
    def dim(self) -> int:
        return len(self.nodes)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(e / (k - 1) for e, k in zip(self.extents, self.nodes))

    @property
    def size(self) -> int:
        return int(np.prod(self.nodes))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(np.linspace(0.0, e, k) for e, k in zip(self.extents, self.nodes))

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(N, d)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def mass(self) -> np.ndarray:
        """Lumped (trapezoidal) node weights."""
        ws = [_trapezoid_weights(k, h) for k, h in zip(self.nodes, self.spacing)]
        if self.dim == 1:
            return ws[0]
        return np.outer(ws[0], ws[1]).ravel()

    @cached_property
    def _ops(self):
        if self.dim == 1:
            (N,), (h,) = self.nodes, self.spacing
            G = _diff_1d(N, h)
            A = _avg_1d(N)
            W = np.full(N - 1, h)
            fc = 0.5 * (self.axes[0][:-1] + self.axes[0][1:])
            face_coords = fc[:, None]
            face_axis = np.zeros(N - 1, dtype=int)
            return G, A, W, face_coords, face_axis
        (Nx, Ny), (hx, hy) = self.nodes, self.spacing
        Ix, Iy = sp.identity(Nx, format="csr"), sp.identity(Ny, format="csr")
        Gx = sp.kron(_diff_1d(Nx, hx), Iy, format="csr")
        Gy = sp.kron(Ix, _diff_1d(Ny, hy), format="csr")
        Ax = sp.kron(_avg_1d(Nx), Iy, format="csr")
        Ay = sp.kron(Ix, _avg_1d(Ny), format="csr")
        wx = _trapezoid_weights(Nx, hx)
        wy = _trapezoid_weights(Ny, hy)
        Wx = np.outer(np.full(Nx - 1, hx), wy).ravel()
        Wy = np.outer(wx, np.full(Ny - 1, hy)).ravel()
        x, y = self.axes
        xm = 0.5 * (x[:-1] + x[1:])
        ym = 0.5 * (y[:-1] + y[1:])
        fx = np.stack([c.ravel() for c in np.meshgrid(xm, y, indexing="ij")], axis=1)
        fy = np.stack([c.ravel() for c in np.meshgrid(x, ym, indexing="ij")], axis=1)
        G = sp.vstack([Gx, Gy], format="csr")
        A = sp.vstack([Ax, Ay], format="csr")
        W = np.concatenate([Wx, Wy])
        face_coords = np.concatenate([fx, fy])
        face_axis = np.concatenate([np.zeros(len(fx), dtype=int), np.ones(len(fy), dtype=int)])
        return G, A, W, face_coords, face_axis

    @property
    def grad_matrix(self) -> sp.csr_matrix:
        """Face gradient operator, shape ``(F, N)``."""
        return self._ops[0]

    @property
    def avg_matrix(self) -> sp.csr_matrix:
        """Arithmetic face average, shape ``(F, N)``."""
        return self._ops[1]

    @property
    def face_weights(self) -> np.ndarray:
        return self._ops[2]

    @property
    def face_coords(self) -> np.ndarray:
        """Face midpoints, shape ``(F, d)``."""
        return self._ops[3]

    @property
    def face_axis(self) -> np.ndarray:
        """Axis index (0 = x, 1 = y) of the normal of each face."""
        return self._ops[4]

    @property
    def num_faces(self) -> int:
        return self.face_weights.size

    @cached_property
    def face_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """(left, right) node index of every face (right = +axis neighbour)."""
        G = self.grad_matrix.tocoo()
        left = np.empty(self.num_faces, dtype=int)
        right = np.empty(self.num_faces, dtype=int)
        neg = G.data < 0
        left[G.row[neg]] = G.col[neg]
        right[G.row[~neg]] = G.col[~neg]
        return left, right

    @cached_property
    def div_matrix(self) -> sp.csr_matrix:
        """``-M^{-1} G^T W``, the no-flux divergence, shape ``(N, F)``."""
        return (-sp.diags(1.0 / self.mass) @ self.grad_matrix.T @ sp.diags(self.face_weights)).tocsr()

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """``K = G^T W G`` (symmetric positive semidefinite)."""
        G = self.grad_matrix
        return (G.T @ sp.diags(self.face_weights) @ G).tocsr()

    @cached_property
    def neg_laplacian_matrix(self) -> sp.csr_matrix:
        """``-Delta = M^{-1} K``."""
        return (sp.diags(1.0 / self.mass) @ self.stiffness).tocsr()

    def regularization_matrix(self, m: int) -> sp.csr_matrix:
        """``(-Delta)^m`` for ``m`` in {1, 2}."""
        if m == 1:
            return self.neg_laplacian_matrix
        if m == 2:
            return self._neg_laplacian_squared
        raise GridError(f"regularization order must be 1 or 2, got {m}")

    @cached_property
    def _neg_laplacian_squared(self) -> sp.csr_matrix:
        L = self.neg_laplacian_matrix
        return (L @ L).tocsr()

    # -- shape helpers -------------------------------------------------------

    def check_nodal(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        if v.shape[-1] != self.size:
            raise GridError(f"nodal array must end in an axis of length {self.size}, got shape {v.shape}")
        return v

    def check_faces(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        if v.shape[-1] != self.num_faces:
            raise GridError(f"face array must end in an axis of length {self.num_faces}, got shape {v.shape}")
        return v

    def reshape_nodal(self, values) -> np.ndarray:
        v = self.check_nodal(values)
        return v.reshape(v.shape[:-1] + self.nodes)


def _apply(matrix: sp.csr_matrix, values: np.ndarray) -> np.ndarray:
    # matrix acts on the last axis
    flat = values.reshape(-1, values.shape[-1])
    out = (matrix @ flat.T).T
    return out.reshape(values.shape[:-1] + (matrix.shape[0],))


def gradient(grid: Grid, values) -> np.ndarray:
    """Face gradient of nodal values (last axis = nodes)."""
    return _apply(grid.grad_matrix, grid.check_nodal(values))


def face_average(grid: Grid, values) -> np.ndarray:
    return _apply(grid.avg_matrix, grid.check_nodal(values))


def divergence(grid: Grid, flux) -> np.ndarray:
    """Nodal divergence of a face flux with zero boundary flux."""
    return _apply(grid.div_matrix, grid.check_faces(flux))


def integrate(grid: Grid, values) -> np.ndarray | float:
    """Lumped quadrature over the last axis."""
    out = grid.check_nodal(values) @ grid.mass
    return float(out) if np.ndim(out) == 0 else out


def face_inner(grid: Grid, f, g) -> np.ndarray | float:
    """``<f, g>_W`` over the last (face) axis."""
    out = (grid.check_faces(f) * grid.check_faces(g)) @ grid.face_weights
    return float(out) if np.ndim(out) == 0 else out


def laplacian_apply(grid: Grid, values) -> np.ndarray:
    """Neumann Laplacian ``div(grad v)``."""
    return -_apply(grid.neg_laplacian_matrix, grid.check_nodal(values))


def bilaplacian_apply(grid: Grid, values) -> np.ndarray:
    """``Delta(Delta v)``, equal to ``(-Delta)^2 v``."""
    return _apply(grid.regularization_matrix(2), grid.check_nodal(values))


@dataclass(frozen=True)
class GradNorms:
    """Squared L2 norms of discrete gradients.

    ``l2[i] = |grad u_i|^2``, ``sqrt[i] = |grad sqrt(u_i)|^2`` and
    ``cross[i, j] = |grad sqrt(u_i u_j)|^2`` (diagonal is zero).
    """

    l2: np.ndarray
    sqrt: np.ndarray
    cross: np.ndarray


def l2_grad_norms(grid: Grid, u) -> GradNorms:
    u = np.atleast_2d(grid.check_nodal(u))
    if np.any(u < 0):
        raise GridError("square-root gradient norms need nonnegative densities")
    n = u.shape[0]
    W = grid.face_weights
    l2 = (gradient(grid, u) ** 2) @ W
    r = np.sqrt(u)
    sq = (gradient(grid, r) ** 2) @ W
    cross = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            cross[i, j] = cross[j, i] = (gradient(grid, r[i] * r[j]) ** 2) @ W
    return GradNorms(l2, sq, cross)


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal values of all species, species-major ``(n, N)``.

    ``kind`` is ``"primal"`` for densities and ``"entropy"`` for entropy
    variables.
    """

    grid: Grid
    values: np.ndarray
    kind: str = "primal"

    def __post_init__(self):
        v = np.atleast_2d(np.array(self.values, dtype=float))
        if v.ndim != 2 or v.shape[1] != self.grid.size:
            raise GridError(f"field values must have shape (n, {self.grid.size}), got {v.shape}")
        if self.kind not in ("primal", "entropy"):
            raise GridError(f"unknown field representation {self.kind!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Field":
        """Sample ``fn(coords) -> (n, N)`` at the grid nodes."""
        return cls(grid, fn(grid.coords))
