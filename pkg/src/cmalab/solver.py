"""Damped Newton on the log form, s-continuation, torus normalization and the epsilon sweep."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import pyamg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InadmissibleError, InputRejected, PreconditionError
from .grids import Form11Field, ScalarField
from .ma import (MAProblem, RHSSpec, admissibility, lambda_min_field, linearize, log_residual,
                 ma_residual, mixed_form, subsolution_check)
from .stencils import (apply_coefficients, assemble, chern_laplacian, complex_gradient,
                       gradient_norm, hessian_coefficients, integrate)

log = logging.getLogger(__name__)

DIRECT_LIMIT = 6000
COMPAT_TOL = 1e-6
AMG_SEED = 20240101


@dataclass
class NewtonConfig:
    max_iter: int = 40
    residual_tol: float = 1e-10
    min_damping: float = 2.0 ** -20
    sigma: float = 0.1
    armijo: float = 1e-4
    linear_rtol: float = 1e-12


@dataclass
class ContinuationSchedule:
    s_steps: tuple = tuple(np.linspace(0.0, 1.0, 11))
    eps_steps: tuple = (1e-1, 1e-2, 1e-3, 1e-4)
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    max_bisections: int = 6

    def __post_init__(self):
        s = np.asarray(self.s_steps, dtype=float)
        if s.size < 1 or s[0] != 0.0 or s[-1] != 1.0 or np.any(np.diff(s) <= 0):
            raise ValueError("s_steps must increase from 0 to 1")
        e = np.asarray(self.eps_steps, dtype=float)
        if np.any(e <= 0) or np.any(np.diff(e) >= 0):
            raise ValueError("eps_steps must be positive and strictly decreasing")
        if not 0 < self.newton.sigma < 1:
            raise ValueError("admissibility floor sigma must lie in (0, 1)")
        self.s_steps = tuple(float(x) for x in s)
        self.eps_steps = tuple(float(x) for x in e)


@dataclass
class SolveReport:
    converged: bool = True
    iterations: list = field(default_factory=list)
    stages: list = field(default_factory=list)
    final_residual: float = 0.0
    final_log_residual: float = 0.0
    monitors: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def add_stage(self, label, iterations: int, monitor: dict) -> None:
        self.stages.append(label)
        self.iterations.append(iterations)
        self.monitors.append(monitor)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


# --- linear algebra ----------------------------------------------------------

def _amg_hierarchy(A: sp.csr_matrix):
    """Smoothed-aggregation hierarchy built under a fixed global RNG state.

    pyamg seeds its spectral radius estimates from np.random, so without this
    repeated solves differ in the last bits.
    """
    saved = np.random.get_state()
    np.random.seed(AMG_SEED)
    try:
        return pyamg.smoothed_aggregation_solver(A, symmetry="nonsymmetric")
    finally:
        np.random.set_state(saved)


def _solve_linear(A: sp.csr_matrix, b: np.ndarray, border: np.ndarray | None = None,
                  rtol: float = 1e-12) -> tuple[np.ndarray, float]:
    """Solve A x = b, or the bordered system [[A, -1], [w^T, 0]] (x, c) = (b, 0).

    Returns (x, c); c is 0 without a border.
    """
    m = A.shape[0]
    if border is not None:
        ones = np.ones((m, 1))
        K = sp.bmat([[A, sp.csr_matrix(-ones)], [sp.csr_matrix(border[None, :]), None]], format="csr")
        rhs = np.concatenate([b, [0.0]])
    else:
        K, rhs = A, b
    if m <= DIRECT_LIMIT:
        x = spla.spsolve(K.tocsc(), rhs)
    else:
        base = -A if border is None else -(A - 1e-3 * sp.identity(m, format="csr"))
        ml = _amg_hierarchy(base.tocsr())
        P = ml.aspreconditioner()

        def prec(v):
            out = np.empty_like(v)
            out[:m] = -P(v[:m])
            if border is not None:
                out[m:] = v[m:]
            return out

        M = spla.LinearOperator(K.shape, prec)
        x, info = spla.gmres(K, rhs, M=M, rtol=rtol, atol=0.0, restart=60, maxiter=20)
        if info != 0:
            log.warning("GMRES did not reach rtol=%g (info=%s)", rtol, info)
    if border is not None:
        return x[:m], float(x[m])
    return x, 0.0


# --- monitors ---------------------------------------------------------------

def estimate_monitor(u, prob: MAProblem) -> dict:
    """Interior and boundary sups of |grad u| and Delta u, their ratios and lambda_min."""
    uf = u if isinstance(u, ScalarField) else ScalarField(prob.grid, u)
    grid = prob.grid
    grad = gradient_norm(uf, prob.g)
    lap = chern_laplacian(uf, prob.g).values
    inner = grid.interior_mask
    rec = {
        "sup_grad": float(grad[inner].max()) if inner.any() else 0.0,
        "sup_lap": float(lap[inner].max()) if inner.any() else 0.0,
    }
    if grid.boundary_mask.any():
        rec["boundary_sup_grad"] = float(grad[grid.boundary_mask].max())
        near = grid.near_boundary_mask
        rec["boundary_sup_lap"] = float(lap[near].max()) if near.any() else 0.0
        rec["ratio_grad"] = _ratio(rec["sup_grad"], rec["boundary_sup_grad"])
        rec["ratio_lap"] = _ratio(rec["sup_lap"], rec["boundary_sup_lap"])
    else:
        rec.update(boundary_sup_grad=None, boundary_sup_lap=None, ratio_grad=None, ratio_lap=None)
    lam = lambda_min_field(uf.values, prob)
    rec["lambda_min"] = float(lam.min())
    return rec


def _ratio(a: float, b: float) -> float:
    if b == 0.0:
        return float("nan") if a == 0.0 else float("inf")
    return a / b


# --- Newton -------------------------------------------------------------------

@dataclass
class NewtonResult:
    u: np.ndarray
    converged: bool
    iterations: int
    log_residual: float
    shift: float = 0.0
    lambda_history: list = field(default_factory=list)
    tolerance: float = 0.0


def _weights(prob: MAProblem) -> np.ndarray:
    return prob.det_g * prob.grid.cell_volume


def _project_mean(u: np.ndarray, prob: MAProblem) -> np.ndarray:
    w = _weights(prob)
    return u - np.sum((u * w).ravel()) / np.sum(w.ravel())


def _newton(prob: MAProblem, u0: np.ndarray, cfg: NewtonConfig, rhs: RHSSpec | None = None,
            normalize: bool = False) -> NewtonResult:
    rhs = prob.rhs if rhs is None else rhs
    unknown = prob.unknown
    u = prob.install_boundary(u0)
    if normalize:
        u = _project_mean(u, prob)
    ok, lam = admissibility(u, prob)
    if not ok:
        raise InadmissibleError(f"initial guess is not admissible (lambda_min = {lam:.3g})")
    if np.any(rhs(prob.grid, u)[unknown] <= 0):
        raise PreconditionError("psi must be positive on the initial guess")
    shift = 0.0
    border = _weights(prob)[unknown] if normalize else None

    def residual(v, b):
        return log_residual(v, prob, rhs)[unknown] - b

    F = residual(u, shift)
    history = [lam]
    it = 0
    h2 = min(prob.grid.spacing) ** 2

    def tolerance(v, lam_v):
        # rounding floor of log det from second differences of O(|u|) values
        floor = 16 * np.finfo(float).eps * (np.abs(v).max() + 1.0) / (h2 * lam_v)
        return max(cfg.residual_tol, floor)

    tol = tolerance(u, lam)
    while np.max(np.abs(F)) > tol and it < cfg.max_iter:
        L = linearize(u, prob, rhs)
        dx, db = _solve_linear(L.matrix(), -F, border, cfg.linear_rtol)
        du = np.zeros(prob.grid.shape)
        du[unknown] = dx
        lam_floor = cfg.sigma * lam
        merit = np.linalg.norm(F)
        alpha = 1.0
        while True:
            trial = u + alpha * du
            lam_t = float(np.min(lambda_min_field(trial, prob)))
            if lam_t > lam_floor:
                Ft = residual(trial, shift + alpha * db)
                if np.all(np.isfinite(Ft)) and (np.linalg.norm(Ft) <= (1 - cfg.armijo * alpha) * merit
                                                or np.max(np.abs(Ft)) <= tol):
                    break
            alpha *= 0.5
            if alpha < cfg.min_damping:
                log.info("Newton damping underflow at iteration %d", it)
                return NewtonResult(u, False, it, float(np.max(np.abs(F))), shift, history, tol)
        u = trial
        shift += alpha * db
        if normalize:
            u = _project_mean(u, prob)
        F, lam = Ft, lam_t
        tol = tolerance(u, lam)
        history.append(lam)
        it += 1
        log.debug("newton it=%d alpha=%g res=%.3e lam=%.3e", it, alpha, np.max(np.abs(F)), lam)
    res = float(np.max(np.abs(F))) if F.size else 0.0
    return NewtonResult(u, res <= tol, it, res, shift, history, tol)


def newton_solve(prob: MAProblem, u0, cfg: NewtonConfig | None = None, rhs: RHSSpec | None = None,
                 normalize: bool = False) -> tuple[ScalarField, SolveReport]:
    """Damped Newton for log det(chi_u) = log(psi det g) from an admissible u0.

    Every accepted iterate keeps lambda_min above sigma times the previous
    iterate's value; on grids with a boundary the boundary values are held at
    the Dirichlet data.
    """
    cfg = cfg or NewtonConfig()
    u0 = u0.values if isinstance(u0, ScalarField) else np.asarray(u0, dtype=float)
    res = _newton(prob, u0, cfg, rhs, normalize)
    report = SolveReport(converged=res.converged)
    _finish(report, res, prob, rhs, "newton")
    return ScalarField(prob.grid, res.u), report


def _finish(report: SolveReport, res: NewtonResult, prob: MAProblem, rhs, label) -> None:
    report.add_stage(label, res.iterations, estimate_monitor(res.u, prob))
    report.final_log_residual = res.log_residual
    p = prob if rhs is None else prob.with_rhs(rhs)
    report.final_residual = float(np.abs(ma_residual(res.u, p).values).max())
    report.extra.setdefault("lambda_history", []).append(res.lambda_history)
    report.extra.setdefault("tolerance", []).append(res.tolerance)


# --- continuation in s -----------------------------------------------------------

def continuation_rhs(rhs: RHSSpec, s: float) -> RHSSpec:
    """psi^s = (1 - s) e^u + s psi(z, u)."""
    return RHSSpec(lambda X, u: (1 - s) * np.exp(u) + s * rhs.psi(X, u),
                   lambda X, u: (1 - s) * np.exp(u) + s * rhs.psi_u(X, u),
                   monotone=True, strict_monotone=True, name=f"psi^{s:g}",
                   params={"u_independent": False})


def max_principle_margin(u: np.ndarray, prob: MAProblem, rhs: RHSSpec) -> float:
    """det chi - psi(p, u(p)) det g at the grid maximum p of u (>= 0 expected)."""
    p = np.unravel_index(np.argmax(np.where(prob.unknown, u, -np.inf)), u.shape)
    detchi = np.linalg.det(prob.chi.values[p]).real
    psi = rhs(prob.grid, u)[p]
    return float(detchi - psi * prob.det_g[p])


def continuation_solve(prob: MAProblem, sched: ContinuationSchedule | None = None,
                       u0=None) -> tuple[ScalarField, SolveReport]:
    """Solve (chi_u)^n = psi omega^n with psi_u > 0 on a torus through psi^s, s: 0 -> 1."""
    sched = sched or ContinuationSchedule()
    if prob.grid.kind != "torus":
        raise PreconditionError("continuation_solve works on tori")
    if not prob.rhs.strict_monotone:
        raise InputRejected("continuation needs a strictly increasing psi")
    prob.rhs.check(prob.grid)
    report = SolveReport()
    u = np.zeros(prob.grid.shape) if u0 is None else np.array(_vals(u0), dtype=float)
    targets = list(sched.s_steps)
    s_done = None
    margins = []
    while targets:
        s = targets[0]
        rhs_s = continuation_rhs(prob.rhs, s)
        res = _newton(prob, u, sched.newton, rhs_s)
        if not res.converged:
            if s_done is None or len(report.extra.get("bisections", [])) >= sched.max_bisections:
                report.converged = False
                _finish(report, res, prob, rhs_s, s)
                return ScalarField(prob.grid, u), report
            mid = 0.5 * (s_done + s)
            report.extra.setdefault("bisections", []).append(mid)
            targets.insert(0, mid)
            continue
        targets.pop(0)
        u, s_done = res.u, s
        _finish(report, res, prob, rhs_s, s)
        margins.append(max_principle_margin(u, prob, rhs_s))
    report.extra["max_principle_margin"] = margins
    return ScalarField(prob.grid, u), report


def _vals(u):
    return u.values if isinstance(u, ScalarField) else u


# --- torus Calabi problem -------------------------------------------------------------

def compatibility_constant(prob: MAProblem) -> float:
    """c with int c psi omega^n = int chi^n on the torus."""
    ones = ScalarField(prob.grid, np.ones(prob.grid.shape))
    total_chi = integrate(ones, prob.chi)
    psi = ScalarField(prob.grid, prob.rhs(prob.grid, np.zeros(prob.grid.shape)))
    total_psi = integrate(psi, prob.g)
    if total_psi <= 0 or total_chi <= 0:
        raise InputRejected("compatibility cannot be restored by rescaling psi")
    return total_chi / total_psi


def torus_calabi_solve(prob: MAProblem, sched: ContinuationSchedule | None = None
                       ) -> tuple[ScalarField, SolveReport]:
    """Solve (chi_u)^n = c psi omega^n with int u omega^n = 0 on a torus, psi independent of u.

    c is chosen so the integrals of both sides agree. The remaining O(h^2)
    discrete incompatibility is absorbed by an extra constant ``log_shift``
    (psi -> exp(log_shift) c psi) solved together with u.
    """
    sched = sched or ContinuationSchedule()
    if prob.grid.kind != "torus":
        raise PreconditionError("torus_calabi_solve works on tori")
    if not prob.rhs.u_independent:
        raise InputRejected("torus_calabi_solve needs psi independent of u")
    c = compatibility_constant(prob)
    rhs = prob.rhs.scaled(c) if abs(c - 1.0) > 0 else prob.rhs
    report = SolveReport()
    report.extra["rescale"] = c
    report.extra["rescaled"] = abs(c - 1.0) > COMPAT_TOL
    u0 = np.zeros(prob.grid.shape)
    res = _newton(prob, u0, sched.newton, rhs, normalize=True)
    if not res.converged:
        # continuity path between det chi / det g and c psi keeps compatibility at every s
        base = np.linalg.det(prob.chi.values).real / prob.det_g
        u = u0
        for s in sched.s_steps[1:]:
            mix = (1 - s) * base + s * rhs(prob.grid, u0)
            res = _newton(prob, u, sched.newton, _field_rhs(mix), normalize=True)
            if not res.converged:
                break
            u = res.u
    report.converged = res.converged
    report.extra["log_shift"] = res.shift
    w = _weights(prob)
    report.extra["mean"] = float(np.sum((res.u * w).ravel()))
    _finish(report, res, prob, rhs, "calabi")
    return ScalarField(prob.grid, res.u), report


def _field_rhs(values: np.ndarray) -> RHSSpec:
    return RHSSpec(lambda X, u: values, lambda X, u: np.zeros(np.shape(u)), name="path",
                   params={"u_independent": True})


# --- Dirichlet problem -------------------------------------------------------------------

def harmonic_barrier(prob: MAProblem) -> np.ndarray:
    """h with Delta_g h + tr_g chi = 0 inside and h = phi on the boundary."""
    grid = prob.grid
    ginv = np.linalg.inv(prob.g.values)
    coeffs = hessian_coefficients(ginv, grid)
    trchi = np.einsum("...ij,...ji->...", ginv, prob.chi.values).real
    hb = np.where(grid.boundary_mask, prob.boundary, 0.0)
    rhs = -trchi - apply_coefficients(coeffs, hb, grid)
    A = assemble(coeffs, grid, prob.unknown)
    x, _ = _solve_linear(A, rhs[prob.unknown])
    h = hb.copy()
    h[prob.unknown] = x
    return h


def dirichlet_solve(prob: MAProblem, sched: ContinuationSchedule | None = None,
                    ) -> tuple[ScalarField, SolveReport]:
    """Dirichlet problem from a verified subsolution; reports the sandwich ubar <= u <= h."""
    sched = sched or ContinuationSchedule()
    if prob.boundary is None or not prob.grid.boundary_mask.any():
        raise PreconditionError("dirichlet_solve needs a grid with boundary and boundary data")
    if prob.subsolution is None:
        raise InputRejected("dirichlet_solve needs a subsolution")
    ok, info = subsolution_check(prob.subsolution, prob)
    if not ok:
        raise InputRejected(f"subsolution check failed: {info}")
    res = _newton(prob, prob.subsolution.values, sched.newton)
    report = SolveReport(converged=res.converged)
    _finish(report, res, prob, None, "dirichlet")
    h = harmonic_barrier(prob)
    inner = prob.unknown
    report.extra["lower_margin"] = float(np.min((res.u - prob.subsolution.values)[inner]))
    report.extra["upper_margin"] = float(np.min((h - res.u)[inner]))
    return ScalarField(prob.grid, res.u), report


def barrier_subsolution(prob: MAProblem, delta: float = 0.2, rhs: RHSSpec | None = None,
                        max_doublings: int = 12) -> ScalarField:
    """h + delta w with h the barrier and w = 0 on the boundary, tr_g dd^c w = 1 inside.

    For n = 1 this gives chi + dd^c ubar = delta g exactly, so doubling delta
    reaches any bounded right-hand side. In higher dimension the result is
    only accepted if the discrete subsolution test passes.
    """
    grid = prob.grid
    rhs = prob.rhs if rhs is None else rhs
    h = harmonic_barrier(prob)
    A = assemble(hessian_coefficients(np.linalg.inv(prob.g.values), grid), grid, prob.unknown)
    x, _ = _solve_linear(A, np.ones(A.shape[0]))
    w = np.zeros(grid.shape)
    w[prob.unknown] = x
    for _ in range(max_doublings):
        ubar = ScalarField(grid, h + delta * w)
        ok, _info = subsolution_check(ubar, prob.with_rhs(rhs))
        if ok:
            return ubar
        delta *= 2.0
    raise InputRejected("no barrier subsolution found for this problem")


# --- epsilon regularization ----------------------------------------------------------------

def smooth_floor(psi: np.ndarray, eps: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """psi^eps and d psi^eps / d psi for the floor e = eps^n.

    psi^eps = psi for psi >= e and e/2 + psi^2 / (2e) below; C^{1,1} and
    sup(psi - eps, e/2) <= psi^eps <= sup(psi, e).
    """
    e = eps ** n
    low = psi < e
    val = np.where(low, 0.5 * e + psi * psi / (2.0 * e), psi)
    der = np.where(low, psi / e, 1.0)
    return val, der


def regularized_rhs(rhs: RHSSpec, eps: float, n: int) -> RHSSpec:
    def psi(X, u):
        return smooth_floor(np.asarray(rhs.psi(X, u), dtype=float), eps, n)[0]

    def psi_u(X, u):
        p = np.asarray(rhs.psi(X, u), dtype=float)
        return smooth_floor(p, eps, n)[1] * rhs.psi_u(X, u)

    return RHSSpec(psi, psi_u, degenerate=False, monotone=rhs.monotone, strict_monotone=False,
                   name=f"{rhs.name}^eps={eps:g}", params=dict(rhs.params))


def band_violation(psi: np.ndarray, psi_eps: np.ndarray, eps: float, n: int) -> float:
    lower = np.maximum(psi - eps, 0.5 * eps ** n)
    upper = np.maximum(psi, eps ** n)
    scale = max(1.0, float(np.abs(upper).max()))
    return float(max(np.max(lower - psi_eps), np.max(psi_eps - upper), 0.0)) / scale


@dataclass
class EpsStage:
    eps: float
    u: ScalarField
    report: SolveReport


def epsilon_sweep(prob: MAProblem, sched: ContinuationSchedule | None = None,
                  monotone_tol: float = 1e-8) -> list[EpsStage]:
    """Solve (chi_u)^n = psi^eps omega^n for decreasing eps, warm-starting each stage."""
    sched = sched or ContinuationSchedule()
    if prob.subsolution is None:
        raise InputRejected("epsilon_sweep needs a subsolution")
    n = prob.grid.n
    u = prob.subsolution.values
    stages: list[EpsStage] = []
    prev = None
    for k, eps in enumerate(sched.eps_steps):
        rhs_e = regularized_rhs(prob.rhs, eps, n)
        raw = np.asarray(prob.rhs(prob.grid, u), dtype=float)
        viol = band_violation(raw, np.asarray(rhs_e(prob.grid, u)), eps, n)
        if viol > 1e-14:
            raise AssertionError(f"regularized psi leaves the admissible band by {viol:.3g}")
        stage_prob = prob.with_rhs(rhs_e)
        if k == 0:
            ok, info = subsolution_check(prob.subsolution, stage_prob)
            if not ok:
                raise InputRejected(f"subsolution is not a subsolution at eps={eps:g}: {info}")
        res = _newton(stage_prob, u, sched.newton)
        report = SolveReport(converged=res.converged)
        _finish(report, res, stage_prob, None, eps)
        lower = float(np.min((res.u - prob.subsolution.values)[prob.unknown]))
        report.extra["lower_margin"] = lower
        if prev is not None:
            drop = float(np.min((res.u - prev)[prob.unknown]))
            report.extra["monotone_margin"] = drop
            report.extra["monotone"] = drop >= -monotone_tol
        if not res.converged:
            break
        stages.append(EpsStage(eps, ScalarField(prob.grid, res.u), report))
        prev = u = res.u
    return stages
