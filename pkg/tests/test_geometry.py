import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmalab.errors import DegenerateMetricError, PreconditionError
from cmalab.geometry import (ChartJet, QuadraticChange, bianchi_defect, christoffel, commutation_defects,
                             conformal_metric, curvature, flat_metric, hermitian_linear_metric,
                             identity_report, inverse_metric, is_kahler_jet, kahler_potential_metric,
                             metric_corpus, normalize_frame, normalized, off_diagonal_metric, poly_metric,
                             pullback_jet, random_real_poly, ricci_traces, special_coordinate_defects,
                             special_coordinate_report, special_coordinates, torsion)
from cmalab.poly import Poly, random_poly

ID_TOL = 1e-10
seeds = st.integers(0, 2 ** 20)


def _point(rng, scale=0.3):
    return scale * (rng.standard_normal(2) + 1j * rng.standard_normal(2))


def _random_metric(seed):
    return hermitian_linear_metric(2, np.random.default_rng(seed))


def _random_jet(seed):
    """Jet of a random metric at a random point, shrinking the point until g > 0."""
    rng = np.random.default_rng(seed)
    metric = _random_metric(seed)
    z = _point(rng)
    while True:
        try:
            return metric.jet(z)
        except ValueError:
            z = 0.5 * z


# --- jets and inverses -------------------------------------------------------

def test_jet_rejects_invalid_input():
    with pytest.raises(ValueError):
        ChartJet(np.array([[1, 1j], [1j, 1]]), np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        ChartJet(-np.eye(2), np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        ChartJet(np.eye(2), np.zeros((2, 2)))


def test_inverse_metric_guard():
    g = np.diag([1.0, 1e-13])
    with pytest.raises(DegenerateMetricError):
        inverse_metric(g)
    g = np.array([[2.0, 0.5j], [-0.5j, 1.0]])
    ginv = inverse_metric(g)
    # g^{i jbar} g_{k jbar} = delta_ik
    assert np.allclose(np.einsum("ij,kj->ik", ginv, g), np.eye(2))


# --- Christoffel symbols and torsion ---------------------------------------------

def test_flat_metric_is_trivial():
    jet = flat_metric(2).jet([0.1, 0.2j])
    assert not np.any(christoffel(jet))
    assert not np.any(torsion(jet))
    assert not np.any(curvature(jet))
    first, second = ricci_traces(jet)
    assert not np.any(first) and not np.any(second)
    assert special_coordinates(jet).quad.max() == 0


def test_conformal_critical_point_has_no_christoffels():
    phi = Poly.z(2, 0) * Poly.zbar(2, 0) + Poly.z(2, 1) * Poly.zbar(2, 1)
    jet = conformal_metric(phi).jet([0, 0])
    assert np.abs(christoffel(jet)).max() == 0


def test_christoffel_defining_relation(rng):
    for metric, _ in metric_corpus(2, 10, 3):
        for _ in range(10):
            jet = metric.jet(_point(rng))
            gam = christoffel(jet)
            # g_{l mbar} Gamma^l_{jk} = d_j g_{k mbar}
            lhs = np.einsum("lm,ljk->jkm", jet.g, gam)
            rhs = np.einsum("kmj->jkm", jet.dg)
            assert np.abs(lhs - rhs).max() < 1e-12


def test_torsion_vanishes_for_zbar2_off_diagonal():
    # g_{1 2bar} = zbar_2 is d-closed: d_2 g_{2 1bar} = 1 only enters T^1_{22} = 0
    n = 2
    one, zero = Poly.constant(n, 1.0), Poly(n)
    entries = [[one, Poly.zbar(n, 1)], [Poly.z(n, 1), one + zero]]
    jet = poly_metric(entries).jet([0, 0])
    assert np.abs(torsion(jet)).max() == 0


def test_torsion_hand_expansion_non_kahler():
    c = 0.7 - 0.4j
    jet = off_diagonal_metric(2, c).jet([0, 0])
    T = torsion(jet)
    expected = np.zeros((2, 2, 2), dtype=complex)
    # g = I at 0, dg[1, 0, 0] = d_1 g_{2 1bar} = c; T^k_{ij} = d_i g_{j kbar} - d_j g_{i kbar}
    expected[0, 0, 1] = c
    expected[0, 1, 0] = -c
    assert np.allclose(T, expected, atol=1e-15)
    assert not is_kahler_jet(jet)


@settings(max_examples=25, deadline=None)
@given(seed=seeds)
def test_torsion_antisymmetric_and_kahler_detector(seed):
    jet = _random_jet(seed)
    T = torsion(jet)
    assert np.array_equal(T, -T.transpose(0, 2, 1))
    sym = np.abs(jet.dg - jet.dg.transpose(2, 1, 0)).max()
    assert (np.abs(T).max() <= 1e-12) == (sym <= 1e-12)


def test_kahler_metrics_have_no_torsion(rng):
    for k in range(5):
        pot = Poly.z(2, 0) * Poly.zbar(2, 0) + Poly.z(2, 1) * Poly.zbar(2, 1)
        pot = pot + random_real_poly(2, 4, rng, 0.05, min_degree=3)
        jet = kahler_potential_metric(pot).jet(_point(rng))
        assert np.abs(torsion(jet)).max() <= 1e-12
        assert is_kahler_jet(jet)


# --- curvature ------------------------------------------------------------------

def test_curvature_of_one_plus_abs_squared():
    metric = poly_metric([[Poly.constant(1, 1.0) + Poly.z(1, 0) * Poly.zbar(1, 0)]])
    R = curvature(metric.jet([0.0]))
    assert np.isclose(R[0, 0, 0, 0], -1.0)


@settings(max_examples=25, deadline=None)
@given(seed=seeds)
def test_curvature_hermitian_and_bianchi(seed):
    jet = _random_jet(seed)
    R = curvature(jet)
    assert np.abs(np.conj(R) - R.transpose(1, 0, 3, 2)).max() <= 1e-12
    assert np.abs(bianchi_defect(jet)).max() <= ID_TOL


def test_curvature_from_christoffel_finite_differences(rng):
    metric = _random_metric(7)
    z0 = _point(rng)
    R = curvature(metric.jet(z0))
    g = metric.jet(z0).g

    def dbar_gamma(h):
        out = np.zeros((2, 2, 2, 2), dtype=complex)
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            dx = (christoffel(metric.jet(z0 + e)) - christoffel(metric.jet(z0 - e))) / (2 * h)
            dy = (christoffel(metric.jet(z0 + 1j * e)) - christoffel(metric.jet(z0 - 1j * e))) / (2 * h)
            out[..., j] = 0.5 * (dx + 1j * dy)
        # R_{i jbar k lbar} = -g_{m lbar} dbar_j Gamma^m_{ik}
        return -np.einsum("ml,mikj->ijkl", g, out)

    errs = [np.abs(dbar_gamma(h) - R).max() for h in (1e-2, 5e-3)]
    assert errs[1] < 1e-4
    assert np.log2(errs[0] / errs[1]) >= 1.9


def test_ricci_traces_brute_force(rng):
    for metric, point in metric_corpus(2, 10, 5):
        jet = metric.jet(point)
        R = curvature(jet)
        ginv = inverse_metric(jet.g)
        first, second = ricci_traces(jet)
        bf1 = np.zeros((2, 2), dtype=complex)
        bf2 = np.zeros((2, 2), dtype=complex)
        for a in range(2):
            for b in range(2):
                for i in range(2):
                    for j in range(2):
                        bf1[a, b] += ginv[i, j] * R[i, j, a, b]
                        bf2[a, b] += ginv[i, j] * R[a, b, i, j]
        assert np.allclose(first, bf1, atol=1e-13) and np.allclose(second, bf2, atol=1e-13)
        assert np.allclose(first, first.conj().T, atol=1e-12)
        assert np.allclose(second, second.conj().T, atol=1e-12)
        if metric.kahler:
            assert np.abs(first - second).max() <= ID_TOL


def test_second_ricci_is_minus_ddbar_log_det(rng):
    metric = _random_metric(11)
    z0 = _point(rng, 0.2)
    S = ricci_traces(metric.jet(z0))[1]

    def logdet(z):
        return np.log(np.linalg.det(metric.jet(z).g).real)

    def ddbar(h):
        out = np.zeros((2, 2), dtype=complex)
        E = np.eye(2)

        def d2(u, v):
            return (logdet(z0 + h * (u + v)) - logdet(z0 + h * (u - v))
                    - logdet(z0 - h * (u - v)) + logdet(z0 - h * (u + v))) / (4 * h * h)

        for i in range(2):
            for j in range(2):
                xi, yi, xj, yj = E[i], 1j * E[i], E[j], 1j * E[j]
                out[i, j] = 0.25 * ((d2(xi, xj) + d2(yi, yj)) + 1j * (d2(xi, yj) - d2(yi, xj)))
        return -out

    errs = [np.abs(ddbar(h) - S).max() for h in (2e-2, 1e-2)]
    assert np.log2(errs[0] / errs[1]) >= 1.9


# --- coordinate changes ---------------------------------------------------------------

def test_pullback_identity_and_unitary(rng):
    jet = _random_metric(3).jet(_point(rng))
    same = pullback_jet(jet, QuadraticChange.identity(2))
    assert np.allclose(same.g, jet.g) and np.allclose(same.dg, jet.dg) and np.allclose(same.ddg, jet.ddg)
    U, _ = np.linalg.qr(rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
    new = pullback_jet(jet, QuadraticChange(U, np.zeros((2, 2, 2))))
    B = np.linalg.inv(U)
    assert np.allclose(new.g, B.T @ jet.g @ B.conj(), atol=1e-13)


def test_pullback_round_trip(rng):
    for seed in range(5):
        jet = _random_metric(seed).jet(_point(rng))
        A = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)) + 3 * np.eye(2)
        there = pullback_jet(jet, QuadraticChange(A, np.zeros((2, 2, 2))))
        back = pullback_jet(there, QuadraticChange(np.linalg.inv(A), np.zeros((2, 2, 2))))
        assert np.abs(back.g - jet.g).max() <= 1e-12
        assert np.abs(back.dg - jet.dg).max() <= 1e-12


def test_quadratic_change_validation():
    q = np.zeros((2, 2, 2))
    q[0, 0, 1] = 1.0
    with pytest.raises(ValueError):
        QuadraticChange(np.eye(2), q)


def test_normalize_frame(rng):
    jet = _random_metric(4).jet(_point(rng))
    assert np.allclose(normalized(jet).g, np.eye(2), atol=1e-13)
    A = normalize_frame(jet).linear
    assert np.allclose(np.triu(A), A)


def test_special_coordinates_require_identity(rng):
    jet = _random_metric(2).jet(_point(rng) + 0.4)
    with pytest.raises(PreconditionError):
        special_coordinates(jet)
    with pytest.raises(ValueError):
        special_coordinates(normalized(jet), "other")


@settings(max_examples=25, deadline=None)
@given(seed=seeds)
def test_special_coordinates_both_variants(seed):
    jet = normalized(_random_jet(seed))
    for variant in ("primary", "alternate"):
        change = special_coordinates(jet, variant)
        assert np.array_equal(change.linear, np.eye(2))
        assert special_coordinate_defects(jet, variant) <= ID_TOL


def test_special_coordinate_report_has_fifty_jets():
    rows = special_coordinate_report(50)
    assert len(rows) == 50
    assert max(max(r["primary"], r["alternate"]) for r in rows) <= ID_TOL


# --- commutation formulas -------------------------------------------------------------

def _partials(p: Poly, z):
    return lambda word: p.d(word)(z)


def test_commutation_flat_and_linear(rng):
    v = random_poly(2, 3, rng)
    z = _point(rng)
    assert max(commutation_defects(flat_metric(2).jet(z), _partials(v, z)).values()) <= 1e-14
    lin = 0.3 * Poly.z(2, 0) - 0.2j * Poly.zbar(2, 1)
    d = commutation_defects(_random_metric(1).jet(z), _partials(lin, z))
    assert max(d.values()) <= 1e-9


def test_commutation_random_jets(rng):
    for metric, point in metric_corpus(2, 10, 9):
        v = random_poly(2, 3, rng)
        d = commutation_defects(metric.jet(point), _partials(v, point))
        assert set(d) >= {"mixed_2", "holo_2", "antiholo_3", "mixed_3", "mixed_3_cyclic",
                          "holo_3", "holo_3_cyclic", "curvature_20"}
        assert max(d.values()) <= 1e-9, (metric.name, d)


def test_identity_report_on_corpus():
    rows = [identity_report(m, p) for m, p in metric_corpus()]
    assert len(rows) == 20
    families = {r["name"].rsplit("-", 1)[0] for r in rows}
    assert {"flat", "conformal", "kahler", "hermitian-linear", "off-diagonal"} <= families
    assert all(r["bianchi"] <= ID_TOL for r in rows)
    assert all(r["torsion_norm"] <= 1e-12 for r in rows if r["kahler"])
    assert any(r["torsion_norm"] > 0.1 for r in rows if not r["kahler"])
