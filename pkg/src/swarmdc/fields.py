"""Cell-centered grid fields on the unit square and their discrete calculus.

All fields live on a regular cell-centered grid over Omega = (0, 1)^2.
Arrays are stored row-major with shape (ny, nx); ``values[j, i]`` is the
sample at the cell center ((i + 0.5) dx, (j + 0.5) dy), so a row holds a
line of constant x2.  Differential operators use second-order central
differences at interior nodes and second-order one-sided differences at
boundary nodes; second derivatives use mirror ghost cells, which encode a
zero normal derivative at the walls.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import numpy as np


class GridMismatchError(ValueError):
    """Raised when an operation combines fields on different grids."""


@dataclass(frozen=True)
class Grid:
    """Regular cell-centered discretization of the unit square.

    Parameters
    ----------
    nx, ny : int
        Cell counts per axis, at least 4 each.
    """

    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"grid must be at least 4x4, got {self.nx}x{self.ny}")

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def dy(self) -> float:
        return 1.0 / self.ny

    @property
    def xcenters(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    @property
    def ycenters(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.dy

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (X, Y) coordinate arrays of shape (ny, nx)."""
        return np.meshgrid(self.xcenters, self.ycenters)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy


@dataclass
class ScalarField:
    """Scalar samples at the cell centers of a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.ny, self.grid.nx):
            raise ValueError(
                f"values shape {self.values.shape} does not match grid "
                f"({self.grid.ny}, {self.grid.nx})"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("scalar field contains non-finite values")

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


@dataclass
class VectorField:
    """Vector field with one ScalarField per component (x1 and x2)."""

    x: ScalarField
    y: ScalarField

    def __post_init__(self):
        if self.x.grid != self.y.grid:
            raise GridMismatchError("vector field components on different grids")

    @property
    def grid(self) -> Grid:
        return self.x.grid

    @classmethod
    def from_arrays(cls, grid: Grid, vx: np.ndarray, vy: np.ndarray) -> "VectorField":
        return cls(ScalarField(grid, vx), ScalarField(grid, vy))


@dataclass
class TensorField:
    """2x2 matrix per node; component ``jk`` holds d v_j / d x_k."""

    xx: ScalarField
    xy: ScalarField
    yx: ScalarField
    yy: ScalarField

    def __post_init__(self):
        g = self.xx.grid
        if any(c.grid != g for c in (self.xy, self.yx, self.yy)):
            raise GridMismatchError("tensor field components on different grids")

    @property
    def grid(self) -> Grid:
        return self.xx.grid


@dataclass(frozen=True)
class DiffusionMatrix:
    """Constant noise matrix g1 and the diffusion matrix sigma = g1 g1^T / 2.

    sigma is symmetric positive semidefinite by construction; a zero matrix
    is allowed so that noise-free scenarios can share the same interfaces.
    """

    g1: np.ndarray
    sigma: np.ndarray = field(init=False)

    def __post_init__(self):
        g1 = np.asarray(self.g1, dtype=float)
        if g1.shape != (2, 2) or not np.all(np.isfinite(g1)):
            raise ValueError("g1 must be a finite 2x2 matrix")
        object.__setattr__(self, "g1", g1)
        object.__setattr__(self, "sigma", 0.5 * g1 @ g1.T)

    @classmethod
    def isotropic(cls, sigma0: float) -> "DiffusionMatrix":
        """Isotropic diffusion sigma = sigma0 * I via g1 = sqrt(2 sigma0) * I."""
        if sigma0 < 0:
            raise ValueError(f"sigma0 must be nonnegative, got {sigma0}")
        return cls(np.sqrt(2.0 * sigma0) * np.eye(2))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.g1)


# ---------------------------------------------------------------------------
# Differential operators
# ---------------------------------------------------------------------------


def gradient(f: ScalarField) -> VectorField:
    """Discrete gradient of a scalar field.

    Central differences at interior nodes, second-order one-sided
    differences at boundary nodes.  Exact on affine fields at every node.
    """
    g = f.grid
    dfdx = np.gradient(f.values, g.dx, axis=1, edge_order=2)
    dfdy = np.gradient(f.values, g.dy, axis=0, edge_order=2)
    return VectorField.from_arrays(g, dfdx, dfdy)


def divergence(F: VectorField) -> ScalarField:
    """Discrete divergence, same stencil policy as :func:`gradient`."""
    g = F.grid
    out = np.gradient(F.x.values, g.dx, axis=1, edge_order=2)
    out += np.gradient(F.y.values, g.dy, axis=0, edge_order=2)
    return ScalarField(g, out)


def second_derivative(f: ScalarField, dim: int) -> ScalarField:
    """Second derivative along spatial dimension ``dim`` (0 = x1, 1 = x2).

    Uses the standard 3-point stencil with mirror ghost values across the
    boundary (consistent with a zero normal derivative).
    """
    g = f.grid
    if dim == 0:
        p = np.pad(f.values, ((0, 0), (1, 1)), mode="edge")
        d2 = (p[:, 2:] - 2.0 * p[:, 1:-1] + p[:, :-2]) / g.dx**2
    elif dim == 1:
        p = np.pad(f.values, ((1, 1), (0, 0)), mode="edge")
        d2 = (p[2:, :] - 2.0 * p[1:-1, :] + p[:-2, :]) / g.dy**2
    else:
        raise ValueError(f"dim must be 0 or 1, got {dim}")
    return ScalarField(g, d2)


def laplacian(f: ScalarField) -> ScalarField:
    """5-point Laplacian with mirror ghost cells at the boundary."""
    out = second_derivative(f, 0).values + second_derivative(f, 1).values
    return ScalarField(f.grid, out)


def jacobian(V: VectorField) -> TensorField:
    """Jacobian of a vector field; row j holds the gradient of component j."""
    gx = gradient(V.x)
    gy = gradient(V.y)
    return TensorField(xx=gx.x, xy=gx.y, yx=gy.x, yy=gy.y)


def sigma_flux(p: ScalarField, D: DiffusionMatrix) -> VectorField:
    """Diffusive flux sigma * grad(p) for a constant diffusion matrix."""
    gp = gradient(p)
    s = D.sigma
    fx = s[0, 0] * gp.x.values + s[0, 1] * gp.y.values
    fy = s[1, 0] * gp.x.values + s[1, 1] * gp.y.values
    return VectorField.from_arrays(p.grid, fx, fy)


def l2_norm(f: ScalarField) -> float:
    """L2 norm by midpoint quadrature: (sum f^2 dx dy)^(1/2)."""
    return float(np.sqrt(np.sum(f.values**2) * f.grid.cell_area))


def mass(f: ScalarField) -> float:
    """Integral of the field over Omega by midpoint quadrature."""
    return float(np.sum(f.values) * f.grid.cell_area)


# ---------------------------------------------------------------------------
# Off-grid sampling
# ---------------------------------------------------------------------------


class BilinearSampler:
    """Bilinear interpolation of grid fields at a fixed set of points.

    Precomputes cell indices and weights once so several fields can be
    sampled at the same points cheaply.  Points must lie in the closed unit
    square.  Outside the hull of cell centers the cell index clamps to the
    nearest valid interpolation cell and the bilinear form of that cell is
    evaluated at the query point, which keeps affine fields exact all the
    way to the walls.
    """

    def __init__(self, grid: Grid, points: np.ndarray):
        pts = np.asarray(points, dtype=float)
        squeeze = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"points must have shape (n, 2), got {pts.shape}")
        if np.any(pts < 0.0) or np.any(pts > 1.0) or not np.all(np.isfinite(pts)):
            raise ValueError("sample points must lie in the closed unit square")
        u = pts[:, 0] * grid.nx - 0.5
        v = pts[:, 1] * grid.ny - 0.5
        # snap to cell centers so querying exactly at a node returns exactly
        # that node's value despite rounding in the coordinate arithmetic
        for w in (u, v):
            r = np.round(w)
            near = np.abs(w - r) <= 1e-12 * np.maximum(1.0, np.abs(w))
            w[near] = r[near]
        i0 = np.clip(np.floor(u).astype(np.intp), 0, grid.nx - 2)
        j0 = np.clip(np.floor(v).astype(np.intp), 0, grid.ny - 2)
        self.grid = grid
        self._squeeze = squeeze
        self._i0, self._j0 = i0, j0
        self._tx = u - i0
        self._ty = v - j0

    def sample_values(self, values: np.ndarray) -> np.ndarray:
        i0, j0, tx, ty = self._i0, self._j0, self._tx, self._ty
        out = (
            (1.0 - tx) * (1.0 - ty) * values[j0, i0]
            + tx * (1.0 - ty) * values[j0, i0 + 1]
            + (1.0 - tx) * ty * values[j0 + 1, i0]
            + tx * ty * values[j0 + 1, i0 + 1]
        )
        return out[0] if self._squeeze else out

    def sample(self, f):
        if isinstance(f, ScalarField):
            if f.grid != self.grid:
                raise GridMismatchError("field grid differs from sampler grid")
            return self.sample_values(f.values)
        if isinstance(f, VectorField):
            if f.grid != self.grid:
                raise GridMismatchError("field grid differs from sampler grid")
            return np.stack(
                [self.sample_values(f.x.values), self.sample_values(f.y.values)],
                axis=-1,
            )
        raise TypeError(f"cannot sample object of type {type(f).__name__}")


def sample_bilinear(f, points):
    """Sample a scalar or vector field at points in the closed unit square.

    Returns an array of shape (n,) for scalar fields and (n, 2) for vector
    fields; a single point returns a scalar / a length-2 vector.
    """
    return BilinearSampler(f.grid, points).sample(f)


# ---------------------------------------------------------------------------
# Density snapshot files
# ---------------------------------------------------------------------------

_HEADER_RE = re.compile(
    r"^#\s*t=(?P<t>\S+)\s+nx=(?P<nx>\d+)\s+ny=(?P<ny>\d+)\s*$"
)


def write_grid_file(path, f: ScalarField, t: float) -> None:
    """Write a density snapshot: header line, then ny rows of nx values.

    The file is written to a temporary name and renamed into place so that
    interrupted runs never leave partial snapshots behind.
    """
    path = os.fspath(path)
    tmp = path + ".tmp"
    lines = [f"# t={float(t)!r} nx={f.grid.nx} ny={f.grid.ny}\n"]
    for row in f.values:
        lines.append(" ".join(repr(float(v)) for v in row) + "\n")
    with open(tmp, "w") as fh:
        fh.writelines(lines)
    os.replace(tmp, path)


def read_grid_file(path) -> tuple[ScalarField, float]:
    """Read a density snapshot written by :func:`write_grid_file`."""
    with open(path) as fh:
        header = fh.readline()
        m = _HEADER_RE.match(header)
        if m is None:
            raise ValueError(f"{path}: malformed snapshot header: {header!r}")
        t = float(m.group("t"))
        nx, ny = int(m.group("nx")), int(m.group("ny"))
        values = np.loadtxt(fh, ndmin=2)
    if values.shape != (ny, nx):
        raise ValueError(
            f"{path}: expected {ny} rows of {nx} values, got shape {values.shape}"
        )
    return ScalarField(Grid(nx, ny), values), t
