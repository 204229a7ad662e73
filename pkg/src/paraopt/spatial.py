"""Finite-difference spatial discretization on rectangular domains.

Provides the grid, the (negative) diffusion operator with Dirichlet or
Neumann boundary conditions, quadrature-weighted norms, and control
injection operators.  All norms share one set of trapezoidal quadrature
weights so that discrete adjoints are exact transposes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

Field = np.ndarray

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


class GridError(ValueError):
    """Invalid grid construction or mismatched field/grid shapes."""


@dataclass(frozen=True)
class SpatialGrid:
    """Tensor-product grid on [0, Lx] x [0, Ly].

    Degrees of freedom are the interior nodes for Dirichlet boundary
    conditions and all nodes for Neumann.  ``weights`` are trapezoidal
    cell areas; they sum to |Omega| on a Neumann grid.
    """

    nx: int
    ny: int
    Lx: float
    Ly: float
    bc: str
    hx: float = field(init=False)
    hy: float = field(init=False)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise GridError(f"need nx, ny >= 2, got ({self.nx}, {self.ny})")
        if self.Lx <= 0 or self.Ly <= 0:
            raise GridError(f"need positive side lengths, got ({self.Lx}, {self.Ly})")
        if self.bc not in (DIRICHLET, NEUMANN):
            raise GridError(f"unknown boundary condition {self.bc!r}")
        if self.bc == DIRICHLET and (self.nx < 3 or self.ny < 3):
            raise GridError("Dirichlet grid needs nx, ny >= 3 for interior dof")
        object.__setattr__(self, "hx", self.Lx / (self.nx - 1))
        object.__setattr__(self, "hy", self.Ly / (self.ny - 1))

    @property
    def dof_shape(self) -> tuple[int, int]:
        if self.bc == DIRICHLET:
            return (self.nx - 2, self.ny - 2)
        return (self.nx, self.ny)

    @property
    def ndof(self) -> int:
        rx, ry = self.dof_shape
        return rx * ry

    @property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened (x, y) coordinates of the dof nodes (C order)."""
        rx, ry = self.dof_shape
        off = 1 if self.bc == DIRICHLET else 0
        xs = (np.arange(rx) + off) * self.hx
        ys = (np.arange(ry) + off) * self.hy
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return X.ravel(), Y.ravel()

    @property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weight per dof node."""
        rx, ry = self.dof_shape
        if self.bc == DIRICHLET:
            wx = np.full(rx, self.hx)
            wy = np.full(ry, self.hy)
        else:
            wx = np.full(rx, self.hx)
            wx[0] = wx[-1] = self.hx / 2
            wy = np.full(ry, self.hy)
            wy[0] = wy[-1] = self.hy / 2
        return np.kron(wx, wy)

    def zeros(self) -> Field:
        return np.zeros(self.ndof)

    def check_field(self, v: Field) -> None:
        if v.shape != (self.ndof,):
            raise GridError(f"field of shape {v.shape} on grid with {self.ndof} dof")

    def boundary_mask(self) -> np.ndarray:
        """Boolean mask of dof nodes on the domain boundary (Neumann only)."""
        if self.bc != NEUMANN:
            raise GridError("Dirichlet dof are interior; no boundary nodes")
        rx, ry = self.dof_shape
        m = np.zeros((rx, ry), dtype=bool)
        m[0, :] = m[-1, :] = True
        m[:, 0] = m[:, -1] = True
        return m.ravel()

    def boundary_arc_weights(self) -> np.ndarray:
        """Trapezoidal arc-length weight per boundary dof node."""
        rx, ry = self.dof_shape
        w = np.zeros((rx, ry))
        w[0, :] += self.hy
        w[-1, :] += self.hy
        w[:, 0] += self.hx
        w[:, -1] += self.hx
        for i in (0, -1):
            for j in (0, -1):
                w[i, j] = (self.hx + self.hy) / 2
        return w.ravel()[self.boundary_mask()]


def build_grid(nx: int, ny: int, Lx: float, Ly: float, bc: str) -> SpatialGrid:
    return SpatialGrid(nx=nx, ny=ny, Lx=Lx, Ly=Ly, bc=bc)


def _lap1d(n: int, h: float, bc: str) -> sp.csr_matrix:
    # second-difference matrix (-d^2/ds^2); Neumann uses reflected ghosts
    main = np.full(n, 2.0)
    off = np.full(n - 1, -1.0)
    T = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    if bc == NEUMANN:
        T[0, 1] = -2.0
        T[n - 1, n - 2] = -2.0
    return sp.csr_matrix(T) / h**2


@dataclass(frozen=True)
class EllipticOperator:
    """Sparse realization of -coeff * Laplacian with the grid's BC."""

    grid: SpatialGrid
    coeff: float
    mat: sp.csr_matrix

    def apply(self, v: Field) -> Field:
        self.grid.check_field(v)
        return self.mat @ v


def build_elliptic(grid: SpatialGrid, coeff: float) -> EllipticOperator:
    rx, ry = grid.dof_shape
    bc1d = DIRICHLET if grid.bc == DIRICHLET else NEUMANN
    Tx = _lap1d(rx, grid.hx, bc1d)
    Ty = _lap1d(ry, grid.hy, bc1d)
    L = sp.kron(Tx, sp.identity(ry), format="csr") + sp.kron(
        sp.identity(rx), Ty, format="csr"
    )
    return EllipticOperator(grid=grid, coeff=coeff, mat=sp.csr_matrix(coeff * L))


def apply_elliptic(op: EllipticOperator, v: Field) -> Field:
    return op.apply(v)


def inner_l2(grid: SpatialGrid, f: Field, g: Field) -> float:
    grid.check_field(f)
    grid.check_field(g)
    return float(np.dot(grid.weights * f, g))


def norm_lp(grid: SpatialGrid, f: Field, p: float) -> float:
    grid.check_field(f)
    if p < 1:
        raise ValueError(f"need p >= 1, got {p}")
    if np.isinf(p):
        return float(np.max(np.abs(f))) if f.size else 0.0
    return float(np.sum(grid.weights * np.abs(f) ** p) ** (1.0 / p))


def _extend_full(grid: SpatialGrid, f: Field) -> np.ndarray:
    """Dof field as full-lattice (nx, ny) array; Dirichlet pads zeros."""
    rx, ry = grid.dof_shape
    F = f.reshape(rx, ry)
    if grid.bc == DIRICHLET:
        G = np.zeros((grid.nx, grid.ny))
        G[1:-1, 1:-1] = F
        return G
    return F


def norm_h1(grid: SpatialGrid, f: Field) -> float:
    """H1 norm sqrt(||f||^2 + ||grad f||^2), forward-difference gradient."""
    grid.check_field(f)
    F = _extend_full(grid, f)
    nx, ny = F.shape
    wx = np.full(nx, grid.hx)
    wx[0] = wx[-1] = grid.hx / 2
    wy = np.full(ny, grid.hy)
    wy[0] = wy[-1] = grid.hy / 2
    gx = np.diff(F, axis=0) / grid.hx
    gy = np.diff(F, axis=1) / grid.hy
    grad2 = np.sum(gx**2 * (grid.hx * wy[None, :])) + np.sum(
        gy**2 * (wx[:, None] * grid.hy)
    )
    return float(np.sqrt(inner_l2(grid, f, f) + grad2))


class DistributedControl:
    """Injection of a control acting on a node subset Omega_c."""

    def __init__(self, grid: SpatialGrid, mask: np.ndarray | None = None):
        self.grid = grid
        if mask is None:
            mask = np.ones(grid.ndof, dtype=bool)
        if mask.shape != (grid.ndof,):
            raise GridError("control mask shape does not match grid dof")
        self.mask = mask.astype(bool)
        self.idx = np.flatnonzero(self.mask)

    @property
    def dim(self) -> int:
        return self.idx.size

    @property
    def mass(self) -> np.ndarray:
        """Quadrature weights of the control space."""
        return self.grid.weights[self.idx]

    def apply(self, u: np.ndarray) -> Field:
        if u.shape != (self.dim,):
            raise GridError(f"control of shape {u.shape}, expected ({self.dim},)")
        v = self.grid.zeros()
        v[self.idx] = u
        return v

    def adjoint(self, lam: Field) -> np.ndarray:
        self.grid.check_field(lam)
        return lam[self.idx]

    def bbt_mat(self) -> sp.csr_matrix:
        d = np.zeros(self.grid.ndof)
        d[self.idx] = 1.0
        return sp.diags(d, format="csr")


class BoundaryControl:
    """Neumann flux control: kappa dx/dnu = u on the boundary nodes."""

    def __init__(self, grid: SpatialGrid):
        if grid.bc != NEUMANN:
            raise GridError("boundary control requires a Neumann grid")
        self.grid = grid
        self.bmask = grid.boundary_mask()
        self.idx = np.flatnonzero(self.bmask)
        self.arc = grid.boundary_arc_weights()

    @property
    def dim(self) -> int:
        return self.idx.size

    @property
    def mass(self) -> np.ndarray:
        return self.arc

    def apply(self, u: np.ndarray) -> Field:
        if u.shape != (self.dim,):
            raise GridError(f"control of shape {u.shape}, expected ({self.dim},)")
        v = self.grid.zeros()
        v[self.idx] = self.arc * u / self.grid.weights[self.idx]
        return v

    def adjoint(self, lam: Field) -> np.ndarray:
        self.grid.check_field(lam)
        return lam[self.idx]

    def bbt_mat(self) -> sp.csr_matrix:
        d = np.zeros(self.grid.ndof)
        d[self.idx] = self.arc / self.grid.weights[self.idx]
        return sp.diags(d, format="csr")


def control_injection(
    grid: SpatialGrid,
    u: np.ndarray,
    kind: str,
    mask: np.ndarray | None = None,
) -> Field:
    """Embed a control vector into a nodal field (the B operator)."""
    if kind == "distributed":
        return DistributedControl(grid, mask).apply(u)
    if kind == "boundary":
        return BoundaryControl(grid).apply(u)
    raise ValueError(f"unknown control kind {kind!r}")


def smallest_eigenvalue(op: EllipticOperator) -> float:
    """Smallest eigenvalue of the weighted-symmetric operator pencil."""
    from scipy.sparse.linalg import eigsh

    w = op.grid.weights
    A = sp.diags(np.sqrt(w)) @ op.mat @ sp.diags(1.0 / np.sqrt(w))
    A = (A + A.T) / 2
    if A.shape[0] < 3:
        return float(np.min(np.linalg.eigvalsh(A.toarray())))
    vals = eigsh(A, k=1, sigma=-1e-8, return_eigenvectors=False)
    return float(vals[0])
