import json

import numpy as np
import pytest

from cmalab.errors import EndpointsTooWildError, InadmissibleError
from cmalab.geodesic import (GeodesicProblem, export_path, geodesic_residual, lift_problem,
                             path_length, product_form, richardson, schur_defect, solve_geodesic)
from cmalab.grids import ScalarField, TorusGrid, read_field
from cmalab.solver import ContinuationSchedule

TWO_PI = 2 * np.pi


def _gp(phi0, phi1, N=8, T=8):
    base = TorusGrid(1, TWO_PI, N)
    f = lambda v: ScalarField(base, v(*base.mesh) if callable(v) else np.broadcast_to(v, base.shape))
    return GeodesicProblem(base, f(phi0), f(phi1), t_resolution=T)


def test_subsolution_constant_for_zero_endpoints():
    gp = _gp(0.0, 0.0)
    prob = lift_problem(gp)
    # u_{w wbar} = K/2 for K(t^2 - t), so det >= 1 needs K = 2
    assert gp.K == 2.0
    A = product_form(prob.subsolution.values, gp.grid)
    inner = gp.grid.interior_mask
    assert np.linalg.det(A).real[inner].min() >= 1.0 - 1e-12


def test_residual_vanishes_on_linear_paths():
    gp = _gp(lambda x, y: 0.1 * np.sin(x), lambda x, y: 0.1 * np.sin(x) + 0.3)
    r = geodesic_residual(gp.linear_path(), gp)
    assert r.sup < 1e-12
    assert not r.valid[..., 0].any() and not r.valid[..., -1].any()
    const = _gp(0.0, 0.0)
    assert geodesic_residual(const.linear_path(), const).sup == 0.0


def test_schur_complement_matches_determinants(rng):
    gp = _gp(0.0, 0.0, N=8, T=6)
    base = gp.base
    x, y = base.mesh
    t = gp.grid.t
    phi = 0.05 * np.sin(x + y)[..., None] * np.cos(3 * t) + t * t
    assert schur_defect(phi, gp) < 1e-10
    phi2 = 0.02 * rng.standard_normal(gp.grid.shape) + t * t
    assert schur_defect(phi2, gp) < 1e-10


def test_residual_masks_inadmissible_slices():
    gp = _gp(0.0, 0.0, N=8, T=6)
    x = gp.base.mesh[0]
    phi = np.zeros(gp.grid.shape)
    phi[..., 2] = -10 * np.cos(x)
    r = geodesic_residual(phi, gp)
    bad = np.linalg.eigvalsh(product_form(phi, gp.grid)[..., :1, :1])[..., 0] <= 0
    assert bad[..., 2].any() and not r.valid[bad].any()
    assert r.valid[..., 3].all()


def test_length_of_constant_speed_path():
    c = 0.7
    gp = _gp(0.0, c)
    vol = TWO_PI ** 2
    assert path_length(gp.linear_path(), gp) == pytest.approx(abs(c) * np.sqrt(vol), rel=1e-13)
    still = _gp(0.0, 0.0)
    assert path_length(still.linear_path(), still) == 0.0


def test_length_midpoint_rule_second_order():
    def length(T):
        gp = _gp(lambda x, y: 0.1 * np.sin(x), lambda x, y: -0.1 * np.sin(x) + 0.2, N=16, T=T)
        t = gp.grid.t
        # a curved path: the endpoints are joined through an extra t^2 (1 - t) bump
        phi = gp.linear_path() + 0.3 * t * t * (1 - t)
        return path_length(phi, gp)

    ref = length(1025)
    e = [abs(length(T) - ref) for T in (9, 17, 33)]
    assert np.log2(e[1] / e[2]) >= 1.9


def test_length_rejects_inadmissible_path():
    gp = _gp(0.0, 0.0, T=4)
    x = gp.base.mesh[0]
    phi = np.zeros(gp.grid.shape)
    phi[..., 1] = phi[..., 2] = -10 * np.cos(x)
    with pytest.raises(InadmissibleError):
        path_length(phi, gp)


def test_richardson_removes_leading_term():
    e1, e2, q = 0.1, 0.01, 2
    exact = np.array([1.0, 2.0])
    u1, u2 = exact + 3 * e1 ** q, exact + 3 * e2 ** q
    assert np.allclose(richardson(u1, u2, e1, e2, q), exact, atol=1e-14)


@pytest.mark.slow
def test_linear_geodesic_recovered(tmp_path):
    gp = _gp(lambda x, y: 0.1 * np.sin(x), lambda x, y: 0.1 * np.sin(x) + 0.5, N=8, T=8)
    sol = solve_geodesic(gp, ContinuationSchedule(eps_steps=(1e-1, 1e-2, 1e-3)))
    lin = gp.linear_path()
    assert sol.report.converged
    assert np.abs(sol.phi.values - lin).max() < 5e-3
    assert np.abs(sol.extrapolated.values - lin).max() < np.abs(sol.phi.values - lin).max()
    assert min(sol.summary["lower_margin"]) >= -1e-8
    assert schur_defect(sol.phi, gp) < 1e-10
    r = sol.summary["residual_sup"]
    assert r[-1] < r[0]
    manifest = export_path(tmp_path / "path", sol.phi, gp, sol.summary)
    data = json.loads(manifest.read_text())
    assert len(data["files"]) == gp.grid.t.size
    _, f0 = read_field(tmp_path / "path" / data["files"][0])
    assert np.array_equal(f0, sol.phi.values[..., 0])


@pytest.mark.slow
def test_small_endpoints_close_to_linear():
    d = 1e-2
    gp = _gp(0.0, lambda x, y: d * np.sin(x) * np.cos(y), N=8, T=8)
    sol = solve_geodesic(gp, ContinuationSchedule(eps_steps=(1e-1, 1e-2, 1e-3)))
    assert np.abs(sol.extrapolated.values - gp.linear_path()).max() < 1e-3


def test_wild_endpoints_rejected():
    base = TorusGrid(1, TWO_PI, 8)
    h = base.spacing[0]
    # lambda_min of the endpoint sits below the floor, which no K can repair
    amp = (1 - 5e-4) / ((2 - 2 * np.cos(h)) / h ** 2 / 4)
    phi = ScalarField(base, amp * np.cos(base.mesh[0]))
    gp = GeodesicProblem(base, phi, phi, t_resolution=4)
    with pytest.raises(EndpointsTooWildError):
        lift_problem(gp)


def test_endpoints_must_be_admissible():
    with pytest.raises(InadmissibleError):
        _gp(lambda x, y: -10 * np.cos(x), 0.0)
