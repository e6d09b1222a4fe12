import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from nestedflow.linalg import (
    LinalgError,
    SingularMatrixError,
    householder_apply,
    householder_matrix,
    householder_qr,
    log_abs_det_triangular,
    random_rotation,
    symmetric_eigendecompose,
    triangular_solve,
)


def test_householder_reflects_its_vector():
    v = np.array([1.0, 2.0, -1.0])
    assert_allclose(householder_apply(v, v), -v, atol=1e-12)


def test_householder_fixes_orthogonal_complement():
    v = np.array([1.0, 0.0, 0.0])
    x = np.array([0.0, 3.0, -2.0])
    assert_allclose(householder_apply(v, x), x, atol=1e-14)


def test_householder_zero_vector_rejected():
    with pytest.raises(LinalgError):
        householder_apply(np.zeros(3), np.ones(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_householder_involution_and_isometry(dim, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    if np.sqrt(v @ v) < 1e-6:
        v[0] += 1.0
    x = rng.standard_normal(dim)
    y = householder_apply(v, x)
    assert_allclose(householder_apply(v, y), x, atol=1e-10)
    assert np.dot(y, y) == pytest.approx(np.dot(x, x), rel=1e-12)


def test_householder_matrix_orthogonal():
    rng = np.random.default_rng(3)
    v = rng.standard_normal(5)
    h = householder_matrix(v)
    assert_allclose(h @ h.T, np.eye(5), atol=1e-12)
    assert np.linalg.det(h) == pytest.approx(-1.0, abs=1e-10)


@pytest.mark.parametrize("lower", [True, False])
@pytest.mark.parametrize("dim", [1, 2, 5, 9])
def test_triangular_solve_against_numpy(lower, dim):
    rng = np.random.default_rng(dim)
    t = rng.standard_normal((dim, dim))
    t = np.tril(t) if lower else np.triu(t)
    t[np.arange(dim), np.arange(dim)] = 1.0 + rng.random(dim)
    b = rng.standard_normal(dim)
    x = triangular_solve(t, b, lower=lower)
    assert_allclose(t @ x, b, atol=1e-10)
    assert_allclose(x, np.linalg.solve(t, b), atol=1e-10)


def test_triangular_solve_unit_diagonal_ignores_stored_diag():
    t = np.array([[5.0, 0.0], [2.0, 7.0]])
    x = triangular_solve(t, np.array([1.0, 4.0]), lower=True, unit_diag=True)
    assert_allclose(x, [1.0, 2.0], atol=1e-14)


def test_triangular_solve_singular_names_index():
    t = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 2.0]])
    with pytest.raises(SingularMatrixError, match="index 1"):
        triangular_solve(t, np.ones(3), lower=True)


def test_log_abs_det_triangular():
    t = np.diag([2.0, -3.0, 0.5])
    assert log_abs_det_triangular(t) == pytest.approx(np.log(3.0), abs=1e-12)


@pytest.mark.parametrize("dim", [2, 3, 6, 16])
def test_symmetric_eigendecompose_reconstructs(dim):
    rng = np.random.default_rng(dim)
    a = rng.standard_normal((dim, dim))
    s = (a + a.T) / 2.0
    w, v = symmetric_eigendecompose(s)
    assert np.all(np.diff(w) <= 1e-12)
    assert_allclose(v @ np.diag(w) @ v.T, s, atol=1e-10)
    assert_allclose(v.T @ v, np.eye(dim), atol=1e-10)
    assert_allclose(np.sort(w)[::-1], np.sort(np.linalg.eigvalsh(s))[::-1],
                    atol=1e-10)


def test_symmetric_eigendecompose_rejects_asymmetric():
    with pytest.raises(LinalgError):
        symmetric_eigendecompose(np.array([[1.0, 2.0], [0.0, 1.0]]))


@pytest.mark.parametrize("dim", [1, 3, 7])
def test_householder_qr_factors(dim):
    rng = np.random.default_rng(10 + dim)
    a = rng.standard_normal((dim, dim))
    q, r = householder_qr(a)
    assert_allclose(q @ r, a, atol=1e-10)
    assert_allclose(q.T @ q, np.eye(dim), atol=1e-10)
    assert np.all(np.diag(r) >= 0.0)
    assert_allclose(np.abs(np.triu(r)), np.abs(r), atol=1e-12)


@pytest.mark.parametrize("dim", [2, 3, 8, 32])
def test_random_rotation_is_special_orthogonal(dim):
    rng = np.random.default_rng(dim)
    q = random_rotation(dim, rng)
    assert_allclose(q @ q.T, np.eye(dim), atol=1e-10)
    assert np.linalg.det(q) == pytest.approx(1.0, abs=1e-8)


def test_random_rotation_deterministic():
    a = random_rotation(4, np.random.default_rng(7))
    b = random_rotation(4, np.random.default_rng(7))
    assert np.array_equal(a, b)
