import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmalab.errors import UnsupportedOperationError
from cmalab.grids import BoxGrid, Form11Field, ScalarField, TorusGrid
from cmalab.stencils import (apply_coefficients, assemble, chern_laplacian, complex_hessian, gradient_sup,
                             hessian_coefficients, hessian_values, integrate)

TWO_PI = 2 * np.pi


def _order(errors):
    e = np.asarray(errors)
    return np.log2(e[:-1] / e[1:])


def test_constant_and_quadratic_hessians():
    b = BoxGrid(2, [(-1, 1)] * 4, 5)
    H = complex_hessian(ScalarField(b, np.full(b.shape, 3.0)))
    assert not np.any(H.values)
    u = ScalarField(b, np.sum(np.abs(b.z) ** 2, axis=0))
    H = complex_hessian(u)
    assert np.allclose(H.values[H.valid], np.eye(2), atol=1e-12)
    assert not H.valid[0].any()


def test_hessian_of_sin_cos_converges():
    errs = []
    for N in (16, 32, 64):
        t = TorusGrid(1, TWO_PI, N)
        x, y = t.mesh
        H = hessian_values(np.sin(x) * np.cos(y), t)
        errs.append(np.abs(H[..., 0, 0] + 0.5 * np.sin(x) * np.cos(y)).max())
    assert min(_order(errs)) >= 1.9


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_hessian_exactly_hermitian(seed):
    t = TorusGrid(2, TWO_PI, 8)
    H = hessian_values(np.random.default_rng(seed).standard_normal(t.shape), t)
    assert np.array_equal(H, np.conj(np.swapaxes(H, -1, -2)))


def test_cross_terms_match_complex_derivatives():
    # u = Re(z1 zbar2) = x1 x2 + y1 y2: u_{1 2bar} = 1/2 exactly
    b = BoxGrid(2, [(-1, 1)] * 4, 5)
    x1, y1, x2, y2 = b.mesh
    H = hessian_values(x1 * x2 + y1 * y2, b)[b.interior_mask]
    assert np.allclose(H[:, 0, 1], 0.5) and np.allclose(H[:, 1, 0], 0.5)
    # u = -Im(z1 zbar2) = -(z1 zbar2 - zbar1 z2) / 2i: u_{1 2bar} = i/2
    H = hessian_values(x1 * y2 - y1 * x2, b)[b.interior_mask]
    assert np.allclose(H[:, 0, 1], 0.5j)


def test_gradient_sup_examples():
    b = BoxGrid(1, [(0, 1), (0, 1)], 9)
    g = Form11Field.identity(b)
    assert gradient_sup(ScalarField(b, b.mesh[0]), g) == pytest.approx(0.5)
    assert gradient_sup(ScalarField(b, np.ones(b.shape)), g) == 0.0


def test_gradient_converges():
    errs = []
    for N in (16, 32, 64):
        t = TorusGrid(1, TWO_PI, N)
        x, y = t.mesh
        u = ScalarField(t, np.sin(x) + 0.5 * np.cos(y))
        # |u_z| = 1/2 |cos x + 0.5 i sin y|, max 1/2 sqrt(1 + 0.25)
        errs.append(abs(gradient_sup(u, Form11Field.identity(t)) - 0.5 * np.sqrt(1.25)))
    assert errs[-1] < 1e-3
    assert _order(errs)[-1] >= 1.9


def test_chern_laplacian_examples():
    b = BoxGrid(2, [(-1, 1)] * 4, 5)
    u = ScalarField(b, np.sum(np.abs(b.z) ** 2, axis=0))
    lap = chern_laplacian(u, Form11Field.identity(b)).values
    assert np.allclose(lap[b.interior_mask], 2.0)
    assert np.all(lap[b.boundary_mask] == 0)
    errs = []
    for N in (16, 32, 64):
        L = 3.0
        t = TorusGrid(1, L, N)
        u = np.cos(TWO_PI * t.mesh[0] / L)
        lap = chern_laplacian(ScalarField(t, u), Form11Field.identity(t)).values
        errs.append(np.abs(lap + (TWO_PI / L) ** 2 / 4 * u).max())
    assert min(_order(errs)) >= 1.9


def test_chern_laplacian_with_metric():
    t = TorusGrid(1, TWO_PI, 16)
    x, y = t.mesh
    u = ScalarField(t, np.sin(x))
    g = Form11Field.constant(t, [[2.0]])
    lap = chern_laplacian(u, g).values
    assert np.allclose(lap, 0.5 * hessian_values(u.values, t)[..., 0, 0].real)


def test_integrate():
    t = TorusGrid(2, TWO_PI, 8)
    one = ScalarField(t, np.ones(t.shape))
    assert integrate(one, Form11Field.identity(t)) == pytest.approx(TWO_PI ** 4, rel=1e-14)
    assert abs(integrate(ScalarField(t, np.cos(t.mesh[0])), Form11Field.identity(t))) < 1e-12
    b = BoxGrid(1, [(0, 1), (0, 1)], 4)
    with pytest.raises(UnsupportedOperationError):
        integrate(ScalarField.zeros(b), Form11Field.identity(b))


def test_manufactured_compatibility_integral():
    t = TorusGrid(2, TWO_PI, [32, 8, 8, 32])
    x1, y1, x2, y2 = t.mesh
    H = hessian_values(0.1 * np.sin(x1) * np.cos(y2), t)
    psi = np.linalg.det(np.eye(2) + H).real
    lhs = integrate(ScalarField(t, psi), Form11Field.identity(t))
    assert abs(lhs - t.volume) / t.volume <= 1e-3


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_assembled_matrix_matches_stencil(seed):
    rng = np.random.default_rng(seed)
    b = BoxGrid(2, [(0, 1)] * 4, 5)
    A = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    M = np.broadcast_to(A @ A.conj().T + np.eye(2), b.shape + (2, 2))
    coeffs = hessian_coefficients(M, b)
    v = rng.standard_normal(b.shape)
    v[b.boundary_mask] = 0.0
    direct = np.einsum("...ij,...ji->...", M, hessian_values(v, b)).real
    assert np.allclose(apply_coefficients(coeffs, v, b), direct)
    K = assemble(coeffs, b, b.interior_mask)
    assert np.allclose(K @ v[b.interior_mask], direct[b.interior_mask])
