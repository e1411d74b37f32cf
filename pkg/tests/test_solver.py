import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmalab.errors import InadmissibleError, InputRejected, PreconditionError
from cmalab.grids import BoxGrid, ScalarField, TorusGrid
from cmalab.ma import admissibility, flat_problem, ma_residual, rhs_constant, rhs_exp_u, rhs_values
from cmalab.oracles import brute_det
from cmalab.solver import (ContinuationSchedule, compatibility_constant, NewtonConfig, SolveReport, barrier_subsolution,
                           band_violation, continuation_solve, dirichlet_solve, epsilon_sweep,
                           estimate_monitor, harmonic_barrier, newton_solve, smooth_floor,
                           torus_calabi_solve)
from cmalab.stencils import hessian_values

TWO_PI = 2 * np.pi


def _torus_case(N=8, amp=0.1):
    t = TorusGrid(2, TWO_PI, [N, 8, 8, N])
    x1, y1, x2, y2 = t.mesh
    u = amp * np.sin(x1) * np.cos(y2)
    psi = brute_det(np.eye(2) + hessian_values(u, t)).real
    return t, u, psi


def test_torus_calabi_recovers_manufactured():
    t, u, psi = _torus_case(8)
    sol, rep = torus_calabi_solve(flat_problem(t, rhs_values(psi)))
    assert rep.converged
    assert np.abs(sol.values - u).max() < 1e-9
    assert abs(rep.extra["mean"]) < 1e-12


def test_torus_calabi_rescales_incompatible_psi():
    t, u, psi = _torus_case(8)
    # make psi compatible for the discrete quadrature first; the scaling test is then exact
    psi = psi * compatibility_constant(flat_problem(t, rhs_values(psi)))
    sol, rep = torus_calabi_solve(flat_problem(t, rhs_values(7 * psi)))
    assert rep.converged and rep.extra["rescaled"]
    assert rep.extra["rescale"] * 7 == pytest.approx(1.0, abs=1e-10)
    assert np.abs(sol.values - u).max() < 1e-9


def test_torus_calabi_constant_rhs_gives_zero():
    t = TorusGrid(2, TWO_PI, 8)
    sol, rep = torus_calabi_solve(flat_problem(t, rhs_constant(1.0)))
    assert rep.converged and not rep.extra["rescaled"]
    assert np.abs(sol.values).max() < 1e-14


def test_torus_calabi_rejects_u_dependent_rhs():
    t = TorusGrid(1, TWO_PI, 8)
    with pytest.raises(InputRejected):
        torus_calabi_solve(flat_problem(t, rhs_exp_u()))


def test_continuation_exp_fixed_point():
    t = TorusGrid(1, TWO_PI, 16)
    sol, rep = continuation_solve(flat_problem(t, rhs_exp_u()))
    assert rep.converged
    assert np.abs(sol.values).max() < 1e-12
    assert all(m >= -1e-12 for m in rep.extra["max_principle_margin"])


def test_continuation_unique_from_perturbed_seed():
    t = TorusGrid(1, TWO_PI, 16)
    x, y = t.mesh
    weight = 1 + 0.3 * np.cos(x) * np.sin(y)
    prob = flat_problem(t, rhs_exp_u(weight))
    a, ra = continuation_solve(prob)
    b, rb = continuation_solve(prob, u0=0.05 * np.sin(x + y))
    assert ra.converged and rb.converged
    assert np.abs(a.values - b.values).max() < 1e-8
    assert np.abs(ma_residual(a, prob).values).max() < 1e-8


def test_newton_keeps_admissibility_from_barely_admissible_start():
    t = TorusGrid(1, TWO_PI, 16)
    x, y = t.mesh
    h = t.spacing[0]
    # discrete second difference of cos(x) is -(2 - 2 cos h)/h^2 times cos(x)
    amp = 0.999 / ((2 - 2 * np.cos(h)) / h ** 2 / 4)
    u0 = amp * np.cos(x)
    ok, lam = admissibility(u0, flat_problem(t, rhs_constant(1.0)))
    assert ok and lam < 2e-3
    sol, rep = newton_solve(flat_problem(t, rhs_constant(1.0)), u0, normalize=True)
    assert rep.converged
    hist = rep.extra["lambda_history"][0]
    assert min(hist) > 0
    assert all(b > 0.1 * a for a, b in zip(hist, hist[1:]))


def test_newton_refuses_inadmissible_start():
    t = TorusGrid(1, TWO_PI, 8)
    with pytest.raises(InadmissibleError):
        newton_solve(flat_problem(t, rhs_constant(1.0)), 10 * np.cos(t.mesh[0]))


def _box(n=1, N=16):
    return BoxGrid(n, [(-1, 1)] * (2 * n), N + 1)


def test_dirichlet_equality_case():
    b = _box()
    r2 = np.abs(b.z[0]) ** 2
    prob = flat_problem(b, rhs_constant(1.0), chi="zero", boundary=r2, subsolution=ScalarField(b, r2))
    sol, rep = dirichlet_solve(prob)
    assert rep.converged
    assert np.abs(sol.values - r2).max() < 1e-12


def test_dirichlet_sandwich_and_comparison():
    b = _box()
    x, y = b.mesh
    phi = np.exp(0.3 * x) * np.cos(0.3 * y)
    low = flat_problem(b, rhs_values(1 + 0.5 * x ** 2), boundary=phi)
    high = flat_problem(b, rhs_values(2 + 0.5 * x ** 2), boundary=phi)
    sub = barrier_subsolution(high)
    u_low, r_low = dirichlet_solve(low.with_rhs(low.rhs, subsolution=sub))
    u_high, r_high = dirichlet_solve(high.with_rhs(high.rhs, subsolution=sub))
    assert r_low.converged and r_high.converged
    for rep in (r_low, r_high):
        assert rep.extra["lower_margin"] >= -1e-10 and rep.extra["upper_margin"] >= -1e-10
    # larger psi gives the smaller solution
    assert np.all(u_high.values <= u_low.values + 1e-12)


def test_harmonic_barrier_is_harmonic_for_zero_chi():
    b = _box()
    x, y = b.mesh
    phi = x * y + x
    prob = flat_problem(b, rhs_constant(1.0), chi="zero", boundary=phi)
    assert np.abs(harmonic_barrier(prob) - phi).max() < 1e-12


def test_dirichlet_requires_subsolution():
    b = _box()
    prob = flat_problem(b, rhs_constant(1.0), boundary=np.zeros(b.shape))
    with pytest.raises(InputRejected):
        dirichlet_solve(prob)


@settings(max_examples=50, deadline=None)
@given(eps=st.floats(1e-3, 0.5), n=st.integers(1, 3),
       values=st.lists(st.floats(0.0, 10.0), min_size=1, max_size=30))
def test_smooth_floor_stays_in_band(eps, n, values):
    psi = np.array(values)
    val, der = smooth_floor(psi, eps, n)
    assert band_violation(psi, val, eps, n) <= 1e-14
    assert np.all(val >= 0.5 * eps ** n) and np.all((der >= 0) & (der <= 1))


def test_smooth_floor_is_c1():
    e = 1e-2
    lo, dlo = smooth_floor(np.array([e - 1e-12]), e, 1)
    hi, dhi = smooth_floor(np.array([e + 1e-12]), e, 1)
    assert abs(lo[0] - hi[0]) < 1e-11 and abs(dlo[0] - dhi[0]) < 1e-9


def test_sweep_with_positive_psi_is_stationary():
    b = _box(N=12)
    x, y = b.mesh
    phi = 0.1 * x * y
    prob = flat_problem(b, rhs_constant(1.0), chi="zero", boundary=phi)
    prob = prob.with_rhs(prob.rhs, subsolution=barrier_subsolution(prob), check=True)
    stages = epsilon_sweep(prob, ContinuationSchedule(eps_steps=(0.5, 0.1, 0.01)))
    assert len(stages) == 3
    for st_ in stages[1:]:
        assert np.array_equal(st_.u.values, stages[0].u.values) or \
            np.abs(st_.u.values - stages[0].u.values).max() < 1e-12


def test_sweep_degenerate_is_monotone():
    b = _box(N=16)
    x, y = b.mesh
    phi = np.exp(0.5 * x) * np.cos(0.5 * y)
    prob = flat_problem(b, rhs_constant(0.0), chi="zero", boundary=phi)
    sched = ContinuationSchedule(eps_steps=(1e-1, 1e-2, 1e-3))
    from cmalab.solver import regularized_rhs
    sub = barrier_subsolution(prob, rhs=regularized_rhs(prob.rhs, sched.eps_steps[0], 1))
    stages = epsilon_sweep(prob.with_rhs(prob.rhs, subsolution=sub), sched)
    assert len(stages) == 3
    assert all(s.report.extra["monotone"] for s in stages[1:])
    assert all(s.report.extra["lower_margin"] >= -1e-10 for s in stages)


def test_monitor_on_constant_gives_nan_ratios():
    b = _box(N=8)
    prob = flat_problem(b, rhs_constant(1.0), boundary=np.ones(b.shape))
    mon = estimate_monitor(np.ones(b.shape), prob)
    assert np.isnan(mon["ratio_grad"]) and np.isnan(mon["ratio_lap"])
    assert json.loads(SolveReport(monitors=[mon]).to_json())["monitors"][0]["ratio_grad"] is None


@pytest.mark.parametrize("kw", [dict(s_steps=(0.0, 0.5)), dict(s_steps=(0.0, 0.7, 0.5, 1.0)),
                                dict(eps_steps=(1e-2, 1e-1)), dict(eps_steps=(0.0,)),
                                dict(newton=NewtonConfig(sigma=1.5))])
def test_schedule_validation(kw):
    with pytest.raises(ValueError):
        ContinuationSchedule(**kw)


def test_continuation_only_on_torus():
    b = _box(N=8)
    with pytest.raises(PreconditionError):
        continuation_solve(flat_problem(b, rhs_exp_u(), boundary=np.zeros(b.shape)))


def test_amg_path_is_deterministic():
    from cmalab.solver import DIRECT_LIMIT, _solve_linear
    from cmalab.stencils import assemble, hessian_coefficients
    t = TorusGrid(2, TWO_PI, [12, 8, 8, 12])
    assert t.size > DIRECT_LIMIT
    A = assemble(hessian_coefficients(np.broadcast_to(np.eye(2), t.shape + (2, 2)), t), t,
                 np.ones(t.shape, bool), diagonal=-np.ones(t.shape))
    b = np.sin(np.arange(t.size))
    x1, _ = _solve_linear(A, b)
    np.random.seed(7)
    np.random.rand(5)
    x2, _ = _solve_linear(A, b)
    assert np.array_equal(x1, x2)
    assert np.linalg.norm(A @ x1 - b) < 1e-8 * np.linalg.norm(b)
