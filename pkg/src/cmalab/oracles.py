"""Closed-form and brute-force reference solutions.

Determinants here are expanded by permutations, independently of the
LU-based path used by the solver.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InadmissibleError, PreconditionError
from .grids import BoxGrid, Grid, ScalarField
from .ma import MAProblem, ma_residual, rhs_values, subsolution_check
from .solver import _solve_linear
from .stencils import assemble, hessian_coefficients, hessian_values


def brute_det(M: np.ndarray) -> np.ndarray:
    """Leibniz expansion of det over the last two axes."""
    n = M.shape[-1]
    total = np.zeros(M.shape[:-2], dtype=complex)
    for perm in itertools.permutations(range(n)):
        sign = _perm_sign(perm)
        term = np.ones(M.shape[:-2], dtype=complex)
        for i, j in enumerate(perm):
            term = term * M[..., i, j]
        total = total + sign * term
    return total


def _perm_sign(perm) -> int:
    sign, seen = 1, set()
    for start in range(len(perm)):
        if start in seen:
            continue
        length, k = 0, start
        while k not in seen:
            seen.add(k)
            k = perm[k]
            length += 1
        sign *= (-1) ** (length - 1)
    return sign


def complex_hessian_from_real(D: np.ndarray, pairs) -> np.ndarray:
    """Exact complex Hessian from the real Hessian ``D[..., a, b]`` (real axes)."""
    n = len(pairs)
    shape = D.shape[:-2]
    H = np.zeros(shape + (n, n), dtype=complex)

    def d(a, b):
        return 0.0 if a is None or b is None else D[..., a, b]

    for i, (xi, yi) in enumerate(pairs):
        for j, (xj, yj) in enumerate(pairs):
            H[..., i, j] = 0.25 * ((d(xi, xj) + d(yi, yj)) + 1j * (d(xi, yj) - d(yi, xj)))
    return H


# --- manufactured solutions ------------------------------------------------------

@dataclass
class TestFunction:
    """A scalar function on the real coordinates with its exact real Hessian."""

    value: Callable[..., np.ndarray]
    real_hessian: Callable[..., np.ndarray]
    name: str = "u*"

    def complex_hessian(self, grid: Grid) -> np.ndarray:
        D = self.real_hessian(*grid.mesh)
        return complex_hessian_from_real(D, grid.pairs)


def sine_product(amplitude: float = 0.1, quad: float = 0.0, n: int = 2) -> TestFunction:
    """u = a sin(x_1) cos(y_n) + q * (sum of squares of the other real axes).

    For n = 2 the real axes are (x1, y1, x2, y2) and the quadratic part is
    q (y1^2 + x2^2); it is not periodic, so use it on boxes only.
    """
    last = 2 * n - 1
    middle = list(range(1, last))

    def value(*X):
        u = amplitude * np.sin(X[0]) * np.cos(X[last])
        for a in middle:
            u = u + quad * X[a] ** 2
        return u

    def hess(*X):
        s, c = np.sin(X[0]), np.cos(X[last])
        D = np.zeros(np.shape(X[0]) + (2 * n, 2 * n))
        D[..., 0, 0] = -amplitude * s * c
        D[..., last, last] = -amplitude * s * c
        D[..., 0, last] = D[..., last, 0] = -amplitude * np.cos(X[0]) * np.sin(X[last])
        for a in middle:
            D[..., a, a] = 2 * quad
        return D

    return TestFunction(value, hess, f"{amplitude:g}*sin(x1)cos(y{n})")


@dataclass
class ManufacturedCase:
    u_star: ScalarField
    psi_star: np.ndarray
    problem: MAProblem

    @property
    def boundary(self) -> np.ndarray | None:
        return self.problem.boundary


def make_manufactured(u_star: ScalarField, template: MAProblem,
                      exact_hessian: np.ndarray | None = None) -> ManufacturedCase:
    """psi* = det(chi + dd^c u*) / det g per point, by brute-force determinants.

    With ``exact_hessian`` omitted the discrete Hessian is used, so u* solves
    the discrete problem exactly; pass the analytic Hessian for convergence studies.
    """
    grid = template.grid
    H = hessian_values(u_star.values, grid) if exact_hessian is None else exact_hessian
    A = template.chi.values + H
    lam = np.linalg.eigvalsh(A)[..., 0][template.unknown]
    if lam.size and lam.min() <= 0:
        raise InadmissibleError("u* is not admissible for this chi")
    psi = (brute_det(A).real / brute_det(template.g.values).real)
    psi = np.where(template.unknown, psi, np.where(np.isfinite(psi), np.maximum(psi, 0.0), 1.0))
    boundary = u_star.values.copy() if grid.boundary_mask.any() else None
    prob = MAProblem(grid, template.g, template.chi, rhs_values(psi, "psi*"), boundary)
    return ManufacturedCase(u_star, psi, prob)


def strict_subsolution(case: ManufacturedCase, delta: float = 0.02, max_doublings: int = 10) -> ScalarField:
    """u* + delta w with w the zero-boundary solution of gfrak^{i jbar} w_{i jbar} = 1.

    The log-determinant rises by about delta, so for delta above the
    truncation error this is a strict discrete subsolution lying below u*.
    """
    prob = case.problem
    grid = prob.grid
    A = prob.chi.values + hessian_values(case.u_star.values, grid)
    A[~prob.unknown] = np.eye(grid.n)
    coeffs = hessian_coefficients(np.linalg.inv(A), grid)
    K = assemble(coeffs, grid, prob.unknown)
    x, _ = _solve_linear(K, np.ones(K.shape[0]))
    w = np.zeros(grid.shape)
    w[prob.unknown] = x
    for _ in range(max_doublings):
        ubar = ScalarField(grid, case.u_star.values + delta * w)
        ok, _info = subsolution_check(ubar, prob)
        if ok:
            return ubar
        delta *= 2
    raise InadmissibleError("could not build a strict subsolution")


# --- explicit HCMA solutions ----------------------------------------------------

def im_abs_box(n: int = 2, resolution: int = 32, offset: float = 6.0, side: float = 1.0) -> BoxGrid:
    """Box [0, side]^n + i [offset, offset + side]^n with ``resolution`` cells per axis.

    The discrete determinant of dd^c |Im z| is a pure truncation error of
    size h^2 / |Im z|^4, so the distance from R^n sets the attainable defect.
    """
    bounds = []
    for _ in range(n):
        bounds += [(0.0, side), (offset, offset + side)]
    return BoxGrid(n, bounds, resolution + 1)


def im_abs_check(grid: BoxGrid, safety: int = 3) -> dict:
    """det of the discrete complex Hessian of u = |Im z| on a box avoiding R^n."""
    if safety < 3:
        raise PreconditionError("safety must be at least 3")
    h = max(grid.spacing)
    r = np.sqrt(sum(grid.mesh[iy] ** 2 for _, iy in grid.pairs if iy is not None))
    if r.min() < safety * h:
        raise PreconditionError("box must stay at least safety*h away from R^n")
    det = brute_det(hessian_values(r, grid)).real
    inner = grid.interior_mask
    return {"max_det_defect": float(np.abs(det[inner]).max()), "h": h,
            "min_abs_im": float(r.min()), "n": grid.n}


def quadric_pullback_check(eta: np.ndarray, xi: np.ndarray | None = None) -> dict:
    """Pull u = arccosh |z|^2 back to C via z = (cos zeta, sin zeta) and compare with 2 Im zeta.

    ``eta`` are Im zeta samples (uniform, > 0); ``xi`` Re zeta samples.
    """
    eta = np.asarray(eta, dtype=float)
    if np.any(eta <= 0):
        raise PreconditionError("grid must lie in Im zeta > 0")
    xi = np.linspace(0.0, 1.0, eta.size) if xi is None else np.asarray(xi, dtype=float)
    X, Y = np.meshgrid(xi, eta, indexing="ij")
    zeta = X + 1j * Y
    z1, z2 = np.cos(zeta), np.sin(zeta)
    norm2 = np.abs(z1) ** 2 + np.abs(z2) ** 2
    u = np.arccosh(norm2)
    pull_defect = float(np.abs(u - 2 * Y).max())
    hx, hy = xi[1] - xi[0], eta[1] - eta[0]
    lap = ((u[2:, 1:-1] - 2 * u[1:-1, 1:-1] + u[:-2, 1:-1]) / hx ** 2
           + (u[1:-1, 2:] - 2 * u[1:-1, 1:-1] + u[1:-1, :-2]) / hy ** 2)
    return {"pullback_defect": pull_defect, "harmonic_defect": float(0.25 * np.abs(lap).max())}


@dataclass
class RadialProfile:
    """f(s) with exact f' and f'' for u = f(|z|^2)."""

    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    d2f: Callable[[np.ndarray], np.ndarray]
    name: str = "f"


RADIAL_PROFILES = {
    "identity": RadialProfile(lambda s: s, lambda s: np.ones_like(s), lambda s: np.zeros_like(s), "s"),
    "quartic": RadialProfile(lambda s: s + s * s / 4, lambda s: 1 + s / 2, lambda s: np.full_like(s, 0.5),
                             "s+s^2/4"),
    "log": RadialProfile(np.log1p, lambda s: 1 / (1 + s), lambda s: -1 / (1 + s) ** 2, "log(1+s)"),
}


def radial_det(profile: RadialProfile, s: np.ndarray, n: int) -> np.ndarray:
    """det(u_{i jbar}) = f'^{n-1} (f' + s f'') for u = f(|z|^2)."""
    d1, d2 = profile.df(s), profile.d2f(s)
    return d1 ** (n - 1) * (d1 + s * d2)


def radial_hessian(profile: RadialProfile, z: np.ndarray) -> np.ndarray:
    """Exact u_{i jbar} = f' delta_ij + f'' zbar_i z_j for z of shape (n, ...)."""
    n = z.shape[0]
    s = np.sum(np.abs(z) ** 2, axis=0)
    d1, d2 = profile.df(s), profile.d2f(s)
    H = np.zeros(s.shape + (n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            H[..., i, j] = d2 * np.conj(z[i]) * z[j] + (d1 if i == j else 0.0)
    return H


def validate_radial_identity(profile: RadialProfile, n: int, points: np.ndarray) -> float:
    """Max |brute-force det of the exact Hessian - closed form| over sample points (n, k)."""
    H = radial_hessian(profile, points)
    s = np.sum(np.abs(points) ** 2, axis=0)
    return float(np.abs(brute_det(H) - radial_det(profile, s, n)).max())


def radial_residual_check(profile: RadialProfile, grid: BoxGrid, seed: int = 0) -> dict:
    """Discrete det(dd^c f(|z|^2)) against the closed form on the grid interior."""
    z = grid.z
    s = np.sum(np.abs(z) ** 2, axis=0)
    d1 = profile.df(s)
    if np.any(d1 <= 0) or np.any(d1 + s * profile.d2f(s) <= 0):
        raise PreconditionError("radial profile is not admissible on this grid")
    rng = np.random.default_rng(seed)
    pts = 0.5 * (rng.standard_normal((grid.n, 5)) + 1j * rng.standard_normal((grid.n, 5)))
    identity_defect = validate_radial_identity(profile, grid.n, pts)
    u = profile.f(s)
    det = brute_det(hessian_values(u, grid)).real
    exact = radial_det(profile, s, grid.n)
    inner = grid.interior_mask
    return {"identity_defect": identity_defect,
            "max_defect": float(np.abs(det - exact)[inner].max()), "h": max(grid.spacing)}


def manufactured_residual(case: ManufacturedCase) -> float:
    return float(np.abs(ma_residual(case.u_star, case.problem).values).max())
