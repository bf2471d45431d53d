"""Matrix-free linear operators used by the splitting solvers.

Every operator is a :class:`LinearOperator`: a pair of callables for the
forward map and its adjoint together with the operator shape.  Operators are
pure (no internal state is mutated by application) and deterministic, so the
adjoint identity ``<A x, y> == <x, A* y>`` can be checked numerically for any
of the constructors in this module.

Two-dimensional models live on an ``nz x nx`` grid and are stacked
column-major (depth index ``z`` fastest), see :class:`GridDims`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

__all__ = [
    "LinearOperator",
    "GridDims",
    "identity",
    "make_derivative_operator",
    "make_gaussian_sensing",
    "make_subsampler",
    "make_causal_integration",
    "make_radon",
    "compose",
    "kron_operator",
    "to_dense",
]

# Largest rows*cols for which to_dense will materialise a matrix.
_DENSE_LIMIT = 1_000_000


@dataclass(frozen=True)
class LinearOperator:
    """A linear map given by matching forward/adjoint callables.

    Parameters
    ----------
    rows, cols : int
        Shape of the underlying matrix: forward maps length ``cols`` vectors
        to length ``rows`` vectors, the adjoint maps the other way.
    forward, adjoint : callable
        Pure functions of a single 1-d array.
    label : str
        Human-readable description used in error messages and logs.
    """

    rows: int
    cols: int
    forward: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]
    label: str = ""


@dataclass(frozen=True)
class GridDims:
    """Model grid dimensions.

    ``nx == 1`` denotes a 1-d model of length ``nz``.  2-d models are stacked
    column-major: model vector entry ``iz + nz*ix`` holds grid node
    ``(iz, ix)``, i.e. the depth index varies fastest.
    """

    nz: int
    nx: int = 1

    def __post_init__(self):
        if self.nz < 2:
            raise ValueError(f"nz must be at least 2, got {self.nz}")
        if self.nx < 1:
            raise ValueError(f"nx must be at least 1, got {self.nx}")

    @property
    def n(self) -> int:
        return self.nz * self.nx

    @property
    def is_1d(self) -> bool:
        return self.nx == 1

    @property
    def grad_len(self) -> int:
        """Length of a stacked gradient vector (n in 1-d, 2n in 2-d)."""
        return self.n if self.is_1d else 2 * self.n

    def to_grid(self, x: np.ndarray) -> np.ndarray:
        """Reshape a stacked model vector to its (nz, nx) grid."""
        return np.asarray(x, dtype=float).reshape((self.nz, self.nx), order="F")

    def to_vector(self, grid: np.ndarray) -> np.ndarray:
        return np.asarray(grid, dtype=float).ravel(order="F")


def _vec(x, n, label):
    out = np.asarray(x, dtype=float).ravel()
    if out.size != n:
        raise ValueError(f"{label}: expected length {n}, got {out.size}")
    return out


def identity(n: int) -> LinearOperator:
    """The identity on length ``n`` vectors."""
    if n < 1:
        raise ValueError("identity needs n >= 1")

    def fwd(x):
        return _vec(x, n, "identity").copy()

    return LinearOperator(n, n, fwd, fwd, label=f"identity(n={n})")


# ---------------------------------------------------------------------------
# First/second difference stencils.
#
# The 1-d first difference maps x to (x[1]-x[0], ..., x[n-1]-x[n-2], 0); the
# final row is identically zero so the operator is square.  All higher
# operators are built from this stencil.


def _diff(v: np.ndarray) -> np.ndarray:
    out = np.zeros_like(v)
    out[:-1] = v[1:] - v[:-1]
    return out


def _diff_adj(w: np.ndarray) -> np.ndarray:
    out = np.zeros_like(w)
    out[:-1] -= w[:-1]
    out[1:] += w[:-1]
    return out


def _diff_rows(g: np.ndarray) -> np.ndarray:
    # difference along z (down each column)
    out = np.zeros_like(g)
    out[:-1, :] = g[1:, :] - g[:-1, :]
    return out


def _diff_rows_adj(g: np.ndarray) -> np.ndarray:
    out = np.zeros_like(g)
    out[:-1, :] -= g[:-1, :]
    out[1:, :] += g[:-1, :]
    return out


def _diff_cols(g: np.ndarray) -> np.ndarray:
    # difference along x (across each row)
    out = np.zeros_like(g)
    out[:, :-1] = g[:, 1:] - g[:, :-1]
    return out


def _diff_cols_adj(g: np.ndarray) -> np.ndarray:
    out = np.zeros_like(g)
    out[:, :-1] -= g[:, :-1]
    out[:, 1:] += g[:, :-1]
    return out


def make_derivative_operator(kind: str, dims: GridDims) -> LinearOperator:
    """Finite-difference operators on a model grid.

    Parameters
    ----------
    kind : {"grad", "second_derivative", "component_grad"}
        ``grad`` is the first-order forward difference: in 1-d an ``n x n``
        map whose last row is zero, in 2-d the ``2n x n`` stack of the
        horizontal differences followed by the vertical differences.
        ``component_grad`` applies the first difference to each block of a
        stacked gradient vector (equal to ``grad`` in 1-d, block-diagonal in
        2-d, so it maps gradient space to gradient space).
        ``second_derivative`` is the composition ``component_grad * grad``.
    dims : GridDims

    Notes
    -----
    Only the zero-last-row boundary stencil is provided; all operators are
    applied matrix-free.
    """
    if kind == "second_derivative":
        return compose(
            make_derivative_operator("component_grad", dims),
            make_derivative_operator("grad", dims),
            label=f"second-difference({_dims_tag(dims)})",
        )
    if kind not in ("grad", "component_grad"):
        raise ValueError(f"unknown derivative kind: {kind!r}")

    n = dims.n
    if dims.is_1d:
        def fwd(x):
            return _diff(_vec(x, n, kind))

        def adj(y):
            return _diff_adj(_vec(y, n, kind))

        tag = "first-difference" if kind == "grad" else "component-difference"
        return LinearOperator(n, n, fwd, adj, label=f"{tag}({_dims_tag(dims)})")

    nz, nx = dims.nz, dims.nx
    if kind == "grad":
        def fwd(x):
            g = dims.to_grid(_vec(x, n, "grad"))
            return np.concatenate(
                [_diff_cols(g).ravel(order="F"), _diff_rows(g).ravel(order="F")]
            )

        def adj(y):
            y = _vec(y, 2 * n, "grad adjoint")
            h = y[:n].reshape((nz, nx), order="F")
            v = y[n:].reshape((nz, nx), order="F")
            out = _diff_cols_adj(h) + _diff_rows_adj(v)
            return out.ravel(order="F")

        return LinearOperator(2 * n, n, fwd, adj, label=f"first-difference({_dims_tag(dims)})")

    def fwd(x):
        x = _vec(x, 2 * n, "component_grad")
        h = x[:n].reshape((nz, nx), order="F")
        v = x[n:].reshape((nz, nx), order="F")
        return np.concatenate(
            [_diff_cols(h).ravel(order="F"), _diff_rows(v).ravel(order="F")]
        )

    def adj(y):
        y = _vec(y, 2 * n, "component_grad adjoint")
        h = y[:n].reshape((nz, nx), order="F")
        v = y[n:].reshape((nz, nx), order="F")
        return np.concatenate(
            [_diff_cols_adj(h).ravel(order="F"), _diff_rows_adj(v).ravel(order="F")]
        )

    return LinearOperator(2 * n, 2 * n, fwd, adj, label=f"component-difference({_dims_tag(dims)})")


def _dims_tag(dims: GridDims) -> str:
    return f"n={dims.nz}" if dims.is_1d else f"{dims.nz}x{dims.nx}"


# ---------------------------------------------------------------------------
# Sensing / sampling operators.


def make_gaussian_sensing(m: int, n: int, seed: int) -> LinearOperator:
    """Dense sensing matrix with i.i.d. standard normal entries and columns
    rescaled to unit 2-norm.  Deterministic in (m, n, seed)."""
    if m < 1 or n < 1:
        raise ValueError("sensing matrix needs m >= 1 and n >= 1")
    rng = np.random.default_rng(seed)
    mat = rng.standard_normal((m, n))
    mat /= np.linalg.norm(mat, axis=0)

    def fwd(x):
        return mat @ _vec(x, n, "gaussian sensing")

    def adj(y):
        return mat.T @ _vec(y, m, "gaussian sensing adjoint")

    return LinearOperator(m, n, fwd, adj, label=f"gaussian-sensing({m}x{n}, seed={seed})")


def make_subsampler(selected_rows, n: int) -> LinearOperator:
    """Row selection operator.

    ``selected_rows`` are 1-based indices into a length ``n`` vector and must
    be strictly increasing.  The adjoint scatters back with zero fill.
    """
    rows = np.asarray(selected_rows, dtype=int).ravel()
    if rows.size == 0:
        raise ValueError("subsampler needs at least one selected row")
    if np.any(rows < 1) or np.any(rows > n):
        raise ValueError(f"selected rows must lie in [1, {n}]")
    if np.any(np.diff(rows) <= 0):
        raise ValueError("selected rows must be strictly increasing")
    idx = rows - 1
    k = rows.size

    def fwd(x):
        return _vec(x, n, "subsampler")[idx].copy()

    def adj(y):
        out = np.zeros(n)
        out[idx] = _vec(y, k, "subsampler adjoint")
        return out

    return LinearOperator(k, n, fwd, adj, label=f"subsampler({k} of {n})")


def make_causal_integration(n: int) -> LinearOperator:
    """Running-sum operator (dense lower-triangular matrix of ones)."""
    if n < 1:
        raise ValueError("causal integration needs n >= 1")

    def fwd(x):
        return np.cumsum(_vec(x, n, "causal integration"))

    def adj(y):
        return np.cumsum(_vec(y, n, "causal integration adjoint")[::-1])[::-1].copy()

    return LinearOperator(n, n, fwd, adj, label=f"causal-integration(n={n})")


# ---------------------------------------------------------------------------
# Parallel-beam tomography.
#
# Geometry: unit square pixels, image centred at the origin, angle measured
# from the vertical so a 0 degree ray integrates straight down a column.  For
# each angle the rays are parallel with direction (sin t, cos t) in (x, z)
# and are indexed by their offset along the perpendicular (cos t, -sin t).
# Ray offsets are equispaced over the circumscribing extent (the image
# diagonal), centred:  offset_r = (r - (n_rays-1)/2) * diag / n_rays.
#
# The weight of pixel c for the ray at offset t is the exact chord length of
# the line through the pixel square.  With a = |cos t|, b = |sin t| and
# s the perpendicular distance from the pixel centre to the ray, the chord is
#
#     min(1/max(a, b), ((a+b)/2 - |s|) / (a*b))   clipped below at 0,
#
# a trapezoid in s.  For axis-aligned rays (a*b == 0) this degenerates to an
# indicator of width 1; rays exactly on a pixel boundary are assigned to the
# pixel whose centre sits at s = -1/2 (half-open convention).


def make_radon(dims: GridDims, n_rays: int, angles_deg) -> LinearOperator:
    """Exact-intersection parallel-beam projection operator.

    Rows are ordered angle-major, ray-minor.  Angles are in degrees and must
    lie in [-90, 90].  The sparse intersection table is precomputed once at
    construction; application is two sparse matvecs.
    """
    if dims.is_1d:
        raise ValueError("radon operator needs a 2-d grid")
    if n_rays < 1:
        raise ValueError("radon operator needs n_rays >= 1")
    angles = np.atleast_1d(np.asarray(angles_deg, dtype=float))
    if angles.size == 0:
        raise ValueError("radon operator needs at least one angle")
    if np.any(angles < -90.0) or np.any(angles > 90.0):
        raise ValueError("angles must lie in [-90, 90] degrees")

    nz, nx = dims.nz, dims.nx
    n = dims.n
    span = float(np.hypot(nx, nz))
    spacing = span / n_rays
    t0 = -(n_rays - 1) / 2.0 * spacing

    # pixel centre coordinates in stacking order (z fastest)
    px = np.repeat(np.arange(nx) - (nx - 1) / 2.0, nz)
    pz = np.tile(np.arange(nz) - (nz - 1) / 2.0, nx)

    row_parts, col_parts, val_parts = [], [], []
    pixel_ids = np.arange(n)
    for ia, theta in enumerate(np.deg2rad(angles)):
        c, s = np.cos(theta), np.sin(theta)
        a, b = abs(c), abs(s)
        scoord = px * c - pz * s
        halfwidth = (a + b) / 2.0
        first = np.ceil((scoord - halfwidth - t0) / spacing).astype(int)
        n_candidates = int(2.0 * halfwidth / spacing) + 2
        axis_aligned = min(a, b) < 1e-12
        for k in range(n_candidates):
            rays = first + k
            offs = t0 + rays * spacing
            dist = scoord - offs
            if axis_aligned:
                vals = ((dist >= -0.5) & (dist < 0.5)).astype(float)
            else:
                vals = np.minimum(1.0 / max(a, b), (halfwidth - np.abs(dist)) / (a * b))
                vals = np.maximum(vals, 0.0)
            keep = (vals > 0.0) & (rays >= 0) & (rays < n_rays)
            if not np.any(keep):
                continue
            row_parts.append(ia * n_rays + rays[keep])
            col_parts.append(pixel_ids[keep])
            val_parts.append(vals[keep])

    n_rows = angles.size * n_rays
    if row_parts:
        mat = sp.csr_matrix(
            (np.concatenate(val_parts), (np.concatenate(row_parts), np.concatenate(col_parts))),
            shape=(n_rows, n),
        )
    else:
        mat = sp.csr_matrix((n_rows, n))
    mat_t = mat.T.tocsr()

    def fwd(x):
        return mat @ _vec(x, n, "radon")

    def adj(y):
        return mat_t @ _vec(y, n_rows, "radon adjoint")

    return LinearOperator(
        n_rows, n, fwd, adj,
        label=f"radon({nz}x{nx}, {angles.size} angles x {n_rays} rays)",
    )


# ---------------------------------------------------------------------------
# Combinators.


def compose(a: LinearOperator, b: LinearOperator, label: str | None = None) -> LinearOperator:
    """The operator ``a b`` (apply ``b`` first)."""
    if a.cols != b.rows:
        raise ValueError(
            f"cannot compose {a.label or 'a'} ({a.rows}x{a.cols}) with "
            f"{b.label or 'b'} ({b.rows}x{b.cols})"
        )

    def fwd(x):
        return a.forward(b.forward(x))

    def adj(y):
        return b.adjoint(a.adjoint(y))

    if label is None:
        label = f"({a.label} * {b.label})"
    return LinearOperator(a.rows, b.cols, fwd, adj, label=label)


def kron_operator(outer: LinearOperator, inner: LinearOperator) -> LinearOperator:
    """Kronecker product ``outer (x) inner`` acting on column-major stacks.

    For a field F with ``inner.cols`` rows and ``outer.cols`` columns this
    applies ``inner`` down every column and ``outer`` across every row, i.e.
    the matrix form is ``kron(dense(outer), dense(inner))`` for column-major
    vectorisation.
    """
    rows = outer.rows * inner.rows
    cols = outer.cols * inner.cols

    def fwd(x):
        f = _vec(x, cols, "kron").reshape((inner.cols, outer.cols), order="F")
        mid = np.empty((inner.rows, outer.cols))
        for j in range(outer.cols):
            mid[:, j] = inner.forward(f[:, j])
        out = np.empty((inner.rows, outer.rows))
        for i in range(inner.rows):
            out[i, :] = outer.forward(mid[i, :])
        return out.ravel(order="F")

    def adj(y):
        f = _vec(y, rows, "kron adjoint").reshape((inner.rows, outer.rows), order="F")
        mid = np.empty((inner.rows, outer.cols))
        for i in range(inner.rows):
            mid[i, :] = outer.adjoint(f[i, :])
        out = np.empty((inner.cols, outer.cols))
        for j in range(outer.cols):
            out[:, j] = inner.adjoint(mid[:, j])
        return out.ravel(order="F")

    return LinearOperator(rows, cols, fwd, adj, label=f"({outer.label}) kron ({inner.label})")


def to_dense(op: LinearOperator) -> np.ndarray:
    """Materialise an operator column by column.  Test helper only; refuses
    operators with more than a million entries."""
    if op.rows * op.cols > _DENSE_LIMIT:
        raise ValueError(
            f"refusing to densify {op.label or 'operator'}: "
            f"{op.rows}x{op.cols} exceeds {_DENSE_LIMIT} entries"
        )
    out = np.zeros((op.rows, op.cols))
    basis = np.zeros(op.cols)
    for j in range(op.cols):
        basis[j] = 1.0
        out[:, j] = op.forward(basis)
        basis[j] = 0.0
    return out
