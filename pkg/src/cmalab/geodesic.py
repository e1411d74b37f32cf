"""Geodesics between torus potentials as a degenerate problem on M x [0, 1].

The extra complex coordinate is w = t + i s. Data are rotation invariant, so s
is never stored; the product Hessian has u_{i wbar} = 1/2 d_t d_{z_i} phi and
u_{w wbar} = 1/4 phi_tt.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EndpointsTooWildError, InadmissibleError
from .grids import Form11Field, ProductGrid, ScalarField, TorusGrid, write_field
from .ma import MAProblem, rhs_constant
from .oracles import brute_det
from .solver import ContinuationSchedule, SolveReport, epsilon_sweep
from .stencils import hessian_values

K_MAX = 2.0 ** 20
LAMBDA_FLOOR = 1e-3


@dataclass
class GeodesicProblem:
    """Endpoints phi0, phi1 on a flat torus with omega = identity."""

    base: TorusGrid
    phi0: ScalarField
    phi1: ScalarField
    t_resolution: int = 16
    K: float | None = None

    def __post_init__(self):
        if self.t_resolution < 2:
            raise ValueError("t_resolution must be >= 2")
        for name, phi in (("phi0", self.phi0), ("phi1", self.phi1)):
            if phi.grid != self.base:
                raise ValueError(f"{name} must live on the base torus")
            lam = slice_lambda_min(phi.values, self.base)
            if lam.min() <= 0:
                raise InadmissibleError(f"{name} is not admissible (lambda_min = {lam.min():.3g})")

    @property
    def grid(self) -> ProductGrid:
        return ProductGrid(self.base, self.t_resolution)

    def linear_path(self) -> np.ndarray:
        t = self.grid.t
        return (1 - t) * self.phi0.values[..., None] + t * self.phi1.values[..., None]

    def subsolution(self, K: float) -> np.ndarray:
        t = self.grid.t
        return self.linear_path() + K * (t * t - t)


def slice_lambda_min(phi: np.ndarray, base: TorusGrid) -> np.ndarray:
    """Smallest eigenvalue of I + dd^c phi on a base slice."""
    return np.linalg.eigvalsh(np.eye(base.n) + hessian_values(phi, base))[..., 0]


def product_form(phi: np.ndarray, grid: ProductGrid) -> np.ndarray:
    """omega-tilde + dd^c phi: the base block gets the identity, the w-block nothing."""
    H = hessian_values(phi, grid)
    n = grid.base.n
    H[..., range(n), range(n)] += 1.0
    return H


def lift_problem(gp: GeodesicProblem) -> MAProblem:
    """Product problem with psi = 0 and the subsolution (1-t)phi0 + t phi1 + K(t^2 - t).

    K doubles from 1 (or starts at ``gp.K``) until lambda_min >= 1e-3 and
    det >= 1 at every interior point; the chosen value is stored on ``gp``.
    """
    grid = gp.grid
    inner = grid.interior_mask
    K = 1.0 if gp.K is None else float(gp.K)
    while True:
        ubar = gp.subsolution(K)
        A = product_form(ubar, grid)
        lam = np.linalg.eigvalsh(A)[..., 0][inner]
        det = np.linalg.det(A).real[inner]
        if lam.min() >= LAMBDA_FLOOR and det.min() >= 1.0:
            break
        K *= 2.0
        if K > K_MAX:
            raise EndpointsTooWildError(f"no subsolution with K <= 2^20 (lambda_min {lam.min():.3g})")
    gp.K = K
    n1 = grid.n
    chi = np.zeros((n1, n1))
    chi[: n1 - 1, : n1 - 1] = np.eye(n1 - 1)
    g = Form11Field.identity(grid)
    return MAProblem(grid, g, Form11Field.constant(grid, chi), rhs_constant(0.0),
                     boundary=ubar, subsolution=ScalarField(grid, ubar))


def _stack(phi, grid: ProductGrid) -> np.ndarray:
    if isinstance(phi, ScalarField):
        return phi.values
    if isinstance(phi, np.ndarray):
        return phi.reshape(grid.shape)
    return np.stack([p.values if isinstance(p, ScalarField) else np.asarray(p) for p in phi], axis=-1)


@dataclass
class GeodesicResidual:
    values: ScalarField
    valid: np.ndarray

    @property
    def sup(self) -> float:
        v = np.abs(self.values.values[self.valid])
        return float(v.max()) if v.size else float("nan")


def geodesic_residual(phi, gp: GeodesicProblem) -> GeodesicResidual:
    """phi_tt - g(phi)^{j kbar} phidot_j phidot_kbar at interior t.

    ``phi`` is a product-grid field or a sequence of base slices. Points at
    t in {0, 1} and slices where omega + dd^c phi is not positive are masked.
    """
    grid = gp.grid
    vals = _stack(phi, grid)
    n = grid.base.n
    M = product_form(vals, grid)
    A = M[..., :n, :n]
    b = M[..., :n, n]
    valid = grid.interior_mask & (np.linalg.eigvalsh(A)[..., 0] > 0)
    A_safe = np.where(valid[..., None, None], A, np.eye(n))
    x = np.linalg.solve(A_safe, b[..., None])[..., 0]
    schur = M[..., n, n].real - np.einsum("...i,...i->...", b.conj(), x).real
    res = np.where(valid, 4.0 * schur, 0.0)
    return GeodesicResidual(ScalarField(grid, res), valid)


def schur_defect(phi, gp: GeodesicProblem) -> float:
    """max |4 det(full) / det(base block) - geodesic residual| with brute-force determinants."""
    grid = gp.grid
    vals = _stack(phi, grid)
    n = grid.base.n
    M = product_form(vals, grid)
    r = geodesic_residual(vals, gp)
    ratio = 4.0 * brute_det(M).real / brute_det(M[..., :n, :n]).real
    return float(np.abs(ratio - r.values.values)[r.valid].max())


def path_length(phi, gp: GeodesicProblem) -> float:
    """Midpoint rule in t for int_0^1 (int phidot^2 omega_phi^n)^{1/2} dt."""
    grid = gp.grid
    vals = _stack(phi, grid)
    base = grid.base
    dt = np.diff(grid.t)
    total = 0.0
    for k in range(dt.size):
        mid = 0.5 * (vals[..., k] + vals[..., k + 1])
        A = np.eye(base.n) + hessian_values(mid, base)
        if np.linalg.eigvalsh(A)[..., 0].min() <= 0:
            raise InadmissibleError(f"slice {k} of the path is not admissible")
        vol = np.linalg.det(A).real
        rate = (vals[..., k + 1] - vals[..., k]) / dt[k]
        total += dt[k] * np.sqrt(np.sum(rate * rate * vol) * base.cell_volume)
    return float(total)


@dataclass
class GeodesicSolution:
    phi: ScalarField
    extrapolated: ScalarField | None
    report: SolveReport
    summary: dict = field(default_factory=dict)


def richardson(u1: np.ndarray, u2: np.ndarray, e1: float, e2: float, q: float) -> np.ndarray:
    """Eliminate an error term proportional to eps^q from two stages."""
    r1, r2 = e1 ** q, e2 ** q
    return u2 + (u2 - u1) * r2 / (r1 - r2)


def solve_geodesic(gp: GeodesicProblem, sched: ContinuationSchedule | None = None,
                   monotone_tol: float = 1e-8) -> GeodesicSolution:
    sched = sched or ContinuationSchedule()
    prob = lift_problem(gp)
    stages = epsilon_sweep(prob, sched, monotone_tol)
    report = SolveReport(converged=len(stages) == len(sched.eps_steps))
    if not stages:
        report.extra["K"] = gp.K
        return GeodesicSolution(prob.subsolution, None, report, {"K": gp.K, "eps": [], "residual_sup": []})
    ubar = prob.subsolution.values
    residual_sup = []
    for st in stages:
        r = st.report
        report.add_stage(st.eps, r.iterations[0], r.monitors[0])
        residual_sup.append(geodesic_residual(st.u, gp).sup)
        below = float(np.min(st.u.values - ubar))
        if below < -monotone_tol:
            raise AssertionError(f"solution drops below the subsolution by {-below:.3g}")
        if r.extra.get("monotone") is False:
            raise AssertionError(f"epsilon monotonicity fails at eps={st.eps:g}")
    last = stages[-1]
    report.final_residual = last.report.final_residual
    report.final_log_residual = last.report.final_log_residual
    extrap = None
    if len(stages) >= 2:
        a, b = stages[-2], stages[-1]
        extrap = ScalarField(prob.grid, richardson(a.u.values, b.u.values, a.eps, b.eps, prob.grid.n))
    summary = {
        "K": gp.K,
        "t": gp.grid.t.tolist(),
        "eps": [st.eps for st in stages],
        "residual_sup": residual_sup,
        "lower_margin": [st.report.extra["lower_margin"] for st in stages],
        "monotone_margin": [st.report.extra.get("monotone_margin") for st in stages],
        "length": path_length(last.u, gp),
    }
    if extrap is not None:
        summary["extrapolated_residual_sup"] = geodesic_residual(extrap, gp).sup
    report.extra.update(summary)
    return GeodesicSolution(last.u, extrap, report, summary)


def export_path(directory, phi: ScalarField, gp: GeodesicProblem, summary: dict) -> Path:
    """One binary dump per t-slice plus manifest.json; returns the manifest path."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for k in range(phi.values.shape[-1]):
        name = f"phi_t{k:04d}.bin"
        write_field(out / name, ScalarField(gp.base, phi.values[..., k]))
        files.append(name)
    manifest = dict(summary, files=files)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=float))
    return path
