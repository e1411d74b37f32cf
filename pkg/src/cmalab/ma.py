"""The discrete complex Monge-Ampere operator det(chi + dd^c u) - psi(z, u) det g."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import InadmissibleError, InputRejected
from .grids import Form11Field, Grid, ScalarField
from .stencils import apply_coefficients, assemble, hessian_coefficients, hessian_values

ADMISSIBLE_TOL = 1e-12
SUBSOLUTION_RTOL = 1e-10

PsiFn = Callable[[tuple, np.ndarray], np.ndarray]


@dataclass
class RHSSpec:
    """Right-hand side psi(z, u) >= 0 and its u-derivative.

    ``psi`` and ``psi_u`` are called as ``f(mesh, u)`` where ``mesh`` is the
    tuple of real coordinate arrays of the grid and ``u`` the field values.
    """

    psi: PsiFn
    psi_u: PsiFn
    degenerate: bool = False
    monotone: bool = False
    strict_monotone: bool = False
    name: str = "psi"
    params: dict = field(default_factory=dict)

    def __call__(self, grid: Grid, u: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.psi(grid.mesh, u), grid.shape)

    def du(self, grid: Grid, u: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.psi_u(grid.mesh, u), grid.shape)

    @property
    def u_independent(self) -> bool:
        return bool(self.params.get("u_independent", False))

    def check(self, grid: Grid, u_range=(-5.0, 5.0), samples: int = 11) -> None:
        """Sample psi and psi_u over constant u-levels and verify the flags."""
        for level in np.linspace(*u_range, samples):
            u = np.full(grid.shape, level)
            p = self(grid, u)
            if np.any(p < 0) or not np.all(np.isfinite(p)):
                raise InputRejected(f"{self.name}: psi must be finite and nonnegative")
            pu = self.du(grid, u)
            if self.strict_monotone and np.any(pu <= 0):
                raise InputRejected(f"{self.name}: psi_u must be positive")
            if self.monotone and np.any(pu < 0):
                raise InputRejected(f"{self.name}: psi_u must be nonnegative")

    def scaled(self, c: float) -> RHSSpec:
        return RHSSpec(lambda X, u: c * self.psi(X, u), lambda X, u: c * self.psi_u(X, u),
                       self.degenerate, self.monotone, self.strict_monotone,
                       f"{c:g}*{self.name}", dict(self.params))


def rhs_constant(c: float) -> RHSSpec:
    if c < 0:
        raise ValueError("psi must be nonnegative")
    return RHSSpec(lambda X, u: np.full(np.shape(u), float(c)), lambda X, u: np.zeros(np.shape(u)),
                   degenerate=(c == 0), name=f"const({c:g})", params={"c": c, "u_independent": True})


def rhs_values(values: np.ndarray, name: str = "field") -> RHSSpec:
    """u-independent psi given by its samples on the grid."""
    values = np.asarray(values, dtype=float)
    if np.any(values < 0):
        raise ValueError("psi must be nonnegative")
    return RHSSpec(lambda X, u: values, lambda X, u: np.zeros(np.shape(u)),
                   degenerate=bool(np.any(values == 0)), name=name, params={"u_independent": True})


def rhs_exp_u(weight: np.ndarray | float = 1.0, name: str = "exp(u)") -> RHSSpec:
    """psi = weight(z) * exp(u); strictly increasing in u, tends to 0 as u -> -inf."""
    return RHSSpec(lambda X, u: weight * np.exp(u), lambda X, u: weight * np.exp(u),
                   monotone=True, strict_monotone=True, name=name, params={"u_independent": False})


@dataclass
class MAProblem:
    """(chi + dd^c u)^n = psi(z, u) omega^n on a grid, with Dirichlet data on boxes.

    ``boundary`` holds values on every grid point; only the boundary mask is used.
    """

    grid: Grid
    g: Form11Field
    chi: Form11Field
    rhs: RHSSpec
    boundary: np.ndarray | None = None
    subsolution: ScalarField | None = None
    check_subsolution: bool = True

    def __post_init__(self):
        if self.g.grid != self.grid or self.chi.grid != self.grid:
            raise ValueError("metric and chi must live on the problem grid")
        has_boundary = bool(self.grid.boundary_mask.any())
        if has_boundary and self.boundary is None:
            raise InputRejected("Dirichlet problems need boundary data")
        if self.boundary is not None:
            self.boundary = np.asarray(self.boundary, dtype=float).reshape(self.grid.shape)
        self._detg = self.g.det()
        self._ginv = np.linalg.inv(self.g.values)
        if self.subsolution is not None and self.check_subsolution:
            ok, info = subsolution_check(self.subsolution, self)
            if not ok:
                raise InputRejected(f"subsolution check failed: {info}")

    @property
    def unknown(self) -> np.ndarray:
        return self.grid.interior_mask

    @property
    def det_g(self) -> np.ndarray:
        return self._detg

    def with_rhs(self, rhs: RHSSpec, subsolution=None, check: bool = False) -> MAProblem:
        return MAProblem(self.grid, self.g, self.chi, rhs, self.boundary,
                         self.subsolution if subsolution is None else subsolution, check_subsolution=check)

    def install_boundary(self, u: np.ndarray) -> np.ndarray:
        u = np.array(u, dtype=float)
        if self.boundary is not None:
            mask = self.grid.boundary_mask
            u[mask] = self.boundary[mask]
        return u


def mixed_form(u: np.ndarray, prob: MAProblem) -> np.ndarray:
    """chi + dd^c u per point (garbage at boundary points, callers mask)."""
    return prob.chi.values + hessian_values(u, prob.grid)


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)


def ma_residual(u, prob: MAProblem) -> ScalarField:
    """det(chi_{i jbar} + u_{i jbar}) - psi(z, u) det g_{i jbar} at interior points (zero elsewhere)."""
    v = _values(u)
    A = mixed_form(v, prob)
    res = np.linalg.det(A).real - prob.rhs(prob.grid, v) * prob.det_g
    return ScalarField(prob.grid, np.where(prob.unknown, res, 0.0))


def generalized_eigenvalues(A: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Eigenvalues of g^{-1} A per point via a Cholesky factor of g."""
    L = np.linalg.cholesky(g)
    Linv = np.linalg.inv(L)
    B = Linv @ A @ np.conj(np.swapaxes(Linv, -1, -2))
    B = 0.5 * (B + np.conj(np.swapaxes(B, -1, -2)))
    return np.linalg.eigvalsh(B)


def lambda_min_field(u, prob: MAProblem) -> np.ndarray:
    v = _values(u)
    lam = generalized_eigenvalues(mixed_form(v, prob), prob.g.values)[..., 0]
    return np.where(prob.unknown, lam, np.inf)


def admissibility(u, prob: MAProblem) -> tuple[bool, float]:
    """(lambda_min > tol everywhere, grid minimum of lambda_min(g^{-1}(chi + dd^c u)))."""
    lam = float(np.min(lambda_min_field(u, prob)))
    return lam > ADMISSIBLE_TOL, lam


def log_residual(u, prob: MAProblem, rhs: RHSSpec | None = None) -> np.ndarray:
    """log det(chi_u) - log psi - log det g at interior points (zero elsewhere).

    Only meaningful for admissible u and psi > 0.
    """
    rhs = prob.rhs if rhs is None else rhs
    v = _values(u)
    sign, logdet = np.linalg.slogdet(mixed_form(v, prob))
    with np.errstate(divide="ignore", invalid="ignore"):
        res = logdet - np.log(rhs(prob.grid, v)) - np.log(prob.det_g)
    res = np.where(sign.real > 0, res, np.inf)
    return np.where(prob.unknown, res, 0.0)


class LinearizedOperator:
    """v -> gfrak^{i jbar} v_{i jbar} - (psi_u / psi) v at an admissible u (log form)."""

    def __init__(self, u, prob: MAProblem, rhs: RHSSpec | None = None):
        rhs = prob.rhs if rhs is None else rhs
        v = _values(u)
        ok, lam = admissibility(v, prob)
        if not ok:
            raise InadmissibleError(f"linearization refused: lambda_min = {lam:.3g}")
        self.grid = prob.grid
        self.unknown = prob.unknown
        A = mixed_form(v, prob)
        A[~self.unknown] = np.eye(self.grid.n)
        self.inverse_form = np.linalg.inv(A)
        self.coeffs = hessian_coefficients(self.inverse_form, self.grid)
        psi = rhs(self.grid, v)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.zeroth = np.where(psi > 0, rhs.du(self.grid, v) / psi, 0.0)

    def apply(self, w) -> np.ndarray:
        w = _values(w)
        out = apply_coefficients(self.coeffs, w, self.grid) - self.zeroth * w
        return np.where(self.unknown, out, 0.0)

    def matrix(self) -> sp.csr_matrix:
        return assemble(self.coeffs, self.grid, self.unknown, diagonal=-self.zeroth)


def linearize(u, prob: MAProblem, rhs: RHSSpec | None = None) -> LinearizedOperator:
    return LinearizedOperator(u, prob, rhs)


def subsolution_check(ubar: ScalarField, prob: MAProblem) -> tuple[bool, dict]:
    """Discrete subsolution test: det(chi_ubar) >= psi(z, ubar) det g inside, ubar = phi on the boundary."""
    v = ubar.values
    info: dict = {}
    A = mixed_form(v, prob)
    lam = generalized_eigenvalues(A, prob.g.values)[..., 0][prob.unknown]
    info["lambda_min"] = float(lam.min()) if lam.size else np.inf
    lhs = np.linalg.det(A).real[prob.unknown]
    rhs = (prob.rhs(prob.grid, v) * prob.det_g)[prob.unknown]
    slack = lhs - rhs
    info["min_slack"] = float(slack.min()) if slack.size else np.inf
    ok = info["lambda_min"] > ADMISSIBLE_TOL and bool(np.all(slack >= -SUBSOLUTION_RTOL * np.maximum(1.0, rhs)))
    if prob.boundary is not None:
        mask = prob.grid.boundary_mask
        info["boundary_mismatch"] = float(np.abs(v[mask] - prob.boundary[mask]).max()) if mask.any() else 0.0
        ok = ok and info["boundary_mismatch"] <= 1e-12 * max(1.0, float(np.abs(prob.boundary).max()))
    return ok, info


def concavity_gap(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """log det((A+B)/2) - (log det A + log det B)/2 per point; >= 0 on the positive cone."""
    return (np.linalg.slogdet(0.5 * (A + B))[1]
            - 0.5 * (np.linalg.slogdet(A)[1] + np.linalg.slogdet(B)[1]))


def yau_inequality_gap(A: np.ndarray, g: np.ndarray) -> np.ndarray:
    """(sum 1/lambda_i)^{n-1} - (sum lambda_i) / prod lambda_i for lambda = eig(g^{-1} A); >= 0."""
    lam = generalized_eigenvalues(A, g)
    n = lam.shape[-1]
    return np.sum(1.0 / lam, axis=-1) ** (n - 1) - np.sum(lam, axis=-1) / np.prod(lam, axis=-1)


def flat_problem(grid: Grid, rhs: RHSSpec, chi: str | np.ndarray = "omega", boundary=None,
                 subsolution=None) -> MAProblem:
    """Problem with the flat metric g = identity and constant chi (``"omega"`` or ``"zero"``)."""
    g = Form11Field.identity(grid)
    if isinstance(chi, str):
        chi_mat = {"omega": np.eye(grid.n), "zero": np.zeros((grid.n, grid.n))}[chi]
    else:
        chi_mat = np.asarray(chi)
    return MAProblem(grid, g, Form11Field.constant(grid, chi_mat), rhs, boundary, subsolution)
