"""Second-order central difference operators on uniform grids.

Real-axis stencils are combined into the complex Hessian

    u_{i jbar} = 1/4 [(u_{x_i x_j} + u_{y_i y_j}) + i (u_{x_i y_j} - u_{y_i x_j})]

using axis second differences on the diagonal and four-point cross
differences off it. On Dirichlet axes values are only meaningful at interior
points; wrapped stencil values at boundary points are masked out.
"""
from __future__ import annotations

from collections import defaultdict

import numpy as np
import scipy.sparse as sp

from .errors import ConsistencyError, UnsupportedOperationError
from .grids import Form11Field, Grid, ScalarField

IMAG_TOL = 1e-12


def _shift(u: np.ndarray, offsets: dict[int, int]) -> np.ndarray:
    """Array whose value at index p is u[p + offsets] (periodic wrap)."""
    for axis, s in offsets.items():
        if s:
            u = np.roll(u, -s, axis=axis)
    return u


def second_difference(u: np.ndarray, grid: Grid, a: int) -> np.ndarray:
    h = grid.spacing[a]
    return (_shift(u, {a: 1}) - 2.0 * u + _shift(u, {a: -1})) / (h * h)


def cross_difference(u: np.ndarray, grid: Grid, a: int, b: int) -> np.ndarray:
    ha, hb = grid.spacing[a], grid.spacing[b]
    return (_shift(u, {a: 1, b: 1}) - _shift(u, {a: 1, b: -1})
            - _shift(u, {a: -1, b: 1}) + _shift(u, {a: -1, b: -1})) / (4.0 * ha * hb)


def _real_second(u: np.ndarray, grid: Grid, a: int | None, b: int | None) -> np.ndarray | float:
    if a is None or b is None:
        return 0.0
    if a == b:
        return second_difference(u, grid, a)
    return cross_difference(u, grid, a, b)


def hessian_values(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Raw complex Hessian array ``grid.shape + (n, n)``; exact Hermitian symmetry."""
    n = grid.n
    H = np.zeros(grid.shape + (n, n), dtype=complex)
    for i, (xi, yi) in enumerate(grid.pairs):
        H[..., i, i] = 0.25 * (_real_second(u, grid, xi, xi) + _real_second(u, grid, yi, yi))
        for j in range(i + 1, n):
            xj, yj = grid.pairs[j]
            re = _real_second(u, grid, xi, xj) + _real_second(u, grid, yi, yj)
            im = _real_second(u, grid, xi, yj) - _real_second(u, grid, yi, xj)
            H[..., i, j] = 0.25 * (re + 1j * im)
            H[..., j, i] = np.conj(H[..., i, j])
    return H


def complex_hessian(u: ScalarField) -> Form11Field:
    grid = u.grid
    H = hessian_values(u.values, grid)
    valid = grid.interior_mask
    H[~valid] = 0.0
    return Form11Field(grid, H, valid=valid.copy(), check=False)


# --- linear operators v -> tr(M Hess v) --------------------------------------

def hessian_coefficients(M: np.ndarray, grid: Grid) -> dict[tuple[int, int], np.ndarray]:
    """Real-axis coefficients c_ab of v -> sum_{ij} M[j, i] v_{i jbar}.

    ``M`` must be Hermitian per point. Keys (a, a) multiply second
    differences, keys (a, b) with a < b multiply cross differences.
    """
    coeffs: dict[tuple[int, int], np.ndarray] = defaultdict(lambda: 0.0)
    n = grid.n

    def add(a, b, c):
        if a is None or b is None:
            return
        key = (min(a, b), max(a, b))
        coeffs[key] = coeffs[key] + c

    for i, (xi, yi) in enumerate(grid.pairs):
        d = 0.25 * M[..., i, i].real
        add(xi, xi, d)
        add(yi, yi, d)
        for j in range(i + 1, n):
            xj, yj = grid.pairs[j]
            m = M[..., j, i]
            add(xi, xj, 0.5 * m.real)
            add(yi, yj, 0.5 * m.real)
            add(xi, yj, -0.5 * m.imag)
            add(yi, xj, 0.5 * m.imag)
    return dict(coeffs)


def _stencil(grid: Grid, a: int, b: int) -> list[tuple[dict[int, int], float]]:
    if a == b:
        h2 = grid.spacing[a] ** 2
        return [({a: -1}, 1.0 / h2), ({}, -2.0 / h2), ({a: 1}, 1.0 / h2)]
    w = 1.0 / (4.0 * grid.spacing[a] * grid.spacing[b])
    return [({a: 1, b: 1}, w), ({a: 1, b: -1}, -w), ({a: -1, b: 1}, -w), ({a: -1, b: -1}, w)]


def apply_coefficients(coeffs: dict, v: np.ndarray, grid: Grid) -> np.ndarray:
    out = np.zeros(grid.shape)
    for (a, b), c in coeffs.items():
        out = out + c * _real_second(v, grid, a, b)
    return out


def assemble(coeffs: dict, grid: Grid, unknown: np.ndarray, diagonal=None) -> sp.csr_matrix:
    """Sparse matrix of v -> sum c_ab D_ab v + diagonal * v restricted to ``unknown`` points.

    Columns for non-unknown neighbours are dropped (their values are held fixed).
    """
    idx = np.arange(grid.size).reshape(grid.shape)
    pos = np.full(grid.size, -1, dtype=np.int64)
    pos[idx[unknown]] = np.arange(int(unknown.sum()))
    rows_all = pos[idx[unknown]]
    rows, cols, vals = [], [], []
    weights: dict[tuple, np.ndarray] = {}
    for (a, b), c in coeffs.items():
        c = np.broadcast_to(c, grid.shape)[unknown]
        for off, w in _stencil(grid, a, b):
            key = tuple(sorted(off.items()))
            weights[key] = weights.get(key, 0.0) + w * c
    if diagonal is not None:
        key = ()
        weights[key] = weights.get(key, 0.0) + np.broadcast_to(diagonal, grid.shape)[unknown]
    for key, w in weights.items():
        nb = pos[_shift(idx, dict(key))[unknown]]
        keep = nb >= 0
        rows.append(rows_all[keep])
        cols.append(nb[keep])
        vals.append(np.broadcast_to(w, rows_all.shape)[keep])
    m = int(unknown.sum())
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))
    return A.tocsr()


# --- first derivatives -------------------------------------------------------

def first_difference(u: np.ndarray, grid: Grid, a: int) -> np.ndarray:
    ax = grid.axes[a]
    if ax.periodic:
        return (_shift(u, {a: 1}) - _shift(u, {a: -1})) / (2.0 * ax.spacing)
    return np.gradient(u, ax.spacing, axis=a, edge_order=2)


def complex_gradient(u: np.ndarray, grid: Grid) -> np.ndarray:
    """u_k = d u / d z_k = (u_x - i u_y) / 2, shape ``(n,) + grid.shape``."""
    out = []
    for ix, iy in grid.pairs:
        ux = first_difference(u, grid, ix)
        uy = first_difference(u, grid, iy) if iy is not None else 0.0
        out.append(0.5 * (ux - 1j * uy))
    return np.array(out)


def gradient_norm(u: ScalarField, g: Form11Field) -> np.ndarray:
    """Pointwise |grad u|_g = (g^{k lbar} u_k u_lbar)^{1/2} at every grid point."""
    p = np.moveaxis(complex_gradient(u.values, u.grid), 0, -1)
    Ginv = np.linalg.inv(g.values)
    sq = np.einsum("...lk,...k,...l->...", Ginv, p, np.conj(p)).real
    return np.sqrt(np.maximum(sq, 0.0))


def gradient_sup(u: ScalarField, g: Form11Field) -> float:
    if u.grid != g.grid:
        raise ValueError("fields live on different grids")
    return float(np.max(gradient_norm(u, g)))


def chern_laplacian(u: ScalarField, g: Form11Field) -> ScalarField:
    """Delta u = g^{i jbar} u_{i jbar}; zero at points where the stencil is undefined."""
    if u.grid != g.grid:
        raise ValueError("fields live on different grids")
    H = complex_hessian(u)
    val = np.einsum("...ij,...ji->...", np.linalg.inv(g.values), H.values)
    scale = max(1.0, float(np.abs(val.real).max()))
    if np.abs(val.imag).max() > IMAG_TOL * scale:
        raise ConsistencyError("Chern Laplacian has a non-negligible imaginary part")
    out = np.where(H.valid, val.real, 0.0)
    return ScalarField(u.grid, out)


def integrate(f: ScalarField, vol: Form11Field) -> float:
    """Midpoint sum of f * det(vol) over a torus (Lebesgue cell volume)."""
    if f.grid.kind != "torus":
        raise UnsupportedOperationError("integration is only defined on closed tori")
    integrand = f.values * vol.det()
    return float(np.sum(integrand.ravel()) * f.grid.cell_volume)
