import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isacfeel.numerics import (
    ValidationError,
    hermitian_eig,
    inv_sqrt,
    kron,
    make_rng,
    pinv,
    sample_complex_gaussian,
)

from conftest import random_hermitian, random_psd


class TestHermitianEig:
    def test_diagonal(self):
        vals, vecs = hermitian_eig(np.diag([2.0, 1.0]).astype(complex))
        np.testing.assert_allclose(vals, [1.0, 2.0])
        assert abs(abs(vecs[1, 0]) - 1) < 1e-12
        assert abs(abs(vecs[0, 1]) - 1) < 1e-12

    def test_identity_gives_orthonormal_basis(self):
        vals, vecs = hermitian_eig(np.eye(3, dtype=complex))
        np.testing.assert_allclose(vals, 1.0)
        np.testing.assert_allclose(vecs.conj().T @ vecs, np.eye(3), atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_reconstruction(self, seed):
        A = random_hermitian(make_rng(seed), 4)
        vals, vecs = hermitian_eig(A)
        assert np.all(np.diff(vals) >= 0)
        np.testing.assert_allclose(np.linalg.norm(vecs, axis=0), 1.0, atol=1e-12)
        recon = (vecs * vals) @ vecs.conj().T
        assert np.linalg.norm(recon - A) <= 1e-9 * np.linalg.norm(A)

    @pytest.mark.parametrize("seed", range(20))
    def test_two_by_two_matches_characteristic_roots(self, seed):
        A = random_hermitian(make_rng(seed), 2)
        a, d, b = A[0, 0].real, A[1, 1].real, A[0, 1]
        disc = np.sqrt(((a - d) / 2) ** 2 + abs(b) ** 2)
        roots = [(a + d) / 2 - disc, (a + d) / 2 + disc]
        np.testing.assert_allclose(hermitian_eig(A).values, roots, atol=1e-10)

    def test_rejects_non_hermitian(self):
        A = np.array([[1.0, 2.0], [0.0, 1.0]], dtype=complex)
        with pytest.raises(ValidationError, match="asymmetry"):
            hermitian_eig(A)


class TestInvSqrt:
    def test_identity(self):
        np.testing.assert_allclose(inv_sqrt(np.eye(3, dtype=complex)), np.eye(3), atol=1e-15)

    def test_diagonal(self):
        np.testing.assert_allclose(inv_sqrt(np.diag([4.0, 9.0]).astype(complex)),
                                   np.diag([0.5, 1 / 3]), atol=1e-15)

    @given(seed=st.integers(0, 2**32 - 1), log_cond=st.floats(0, 8))
    @settings(max_examples=50, deadline=None)
    def test_whitens_well_conditioned(self, seed, log_cond):
        rng = make_rng(seed)
        Q, _ = np.linalg.qr(rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5)))
        lam = np.logspace(0, log_cond, 5)
        A = (Q * lam) @ Q.conj().T
        A = (A + A.conj().T) / 2
        B = inv_sqrt(A)
        # even the correctly rounded A^{-1/2} leaves ~eps*cond when B A B^H is
        # evaluated in double precision, so the floor grows past cond 1e6
        tol = max(1e-9, 1e-15 * 10**log_cond)
        np.testing.assert_allclose(B @ A @ B.conj().T, np.eye(5), atol=tol)

    @given(seed=st.integers(0, 2**32 - 1), log_cond=st.floats(0, 6))
    @settings(max_examples=50, deadline=None)
    def test_whitens_to_1e9_up_to_cond_1e6(self, seed, log_cond):
        rng = make_rng(seed)
        Q, _ = np.linalg.qr(rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5)))
        A = (Q * np.logspace(0, log_cond, 5)) @ Q.conj().T
        A = (A + A.conj().T) / 2
        B = inv_sqrt(A)
        np.testing.assert_allclose(B @ A @ B.conj().T, np.eye(5), atol=1e-9)

    def test_near_singular_reports_condition(self):
        with pytest.raises(ValidationError, match="condition number"):
            inv_sqrt(np.diag([1.0, 1e-14]).astype(complex))

    def test_tiny_negative_eigenvalue_is_clamped_then_rejected(self):
        # clamped to zero, so the matrix is singular rather than indefinite
        with pytest.raises(ValidationError, match="condition number"):
            inv_sqrt(np.diag([1.0, -1e-12]).astype(complex))


class TestPinv:
    def test_identity(self):
        np.testing.assert_allclose(pinv(np.eye(2)), np.eye(2))

    def test_row_vector(self):
        np.testing.assert_allclose(pinv(np.array([[3.0, 4.0]])), [[3 / 25], [4 / 25]])

    @pytest.mark.parametrize("seed", range(100))
    def test_moore_penrose_conditions(self, seed):
        rng = make_rng(seed)
        A = sample_complex_gaussian(rng, (2, 5))
        P = pinv(A)
        np.testing.assert_allclose(A @ P, np.eye(2), atol=1e-9)
        np.testing.assert_allclose(A @ P @ A, A, atol=1e-9)
        np.testing.assert_allclose(P @ A @ P, P, atol=1e-9)
        np.testing.assert_allclose((A @ P).conj().T, A @ P, atol=1e-9)
        np.testing.assert_allclose((P @ A).conj().T, P @ A, atol=1e-9)


class TestKron:
    def test_identity(self):
        np.testing.assert_array_equal(kron(np.eye(2), np.eye(2)), np.eye(4))

    def test_diagonal(self):
        a, b, c, d = 2.0, 3.0, 5.0, 7.0
        np.testing.assert_array_equal(kron(np.diag([a, b]), np.diag([c, d])),
                                      np.diag([a * c, a * d, b * c, b * d]))

    @pytest.mark.parametrize("seed", range(10))
    def test_mixed_product(self, seed):
        rng = make_rng(seed)
        A, B, C, D = (sample_complex_gaussian(rng, (2, 2)) for _ in range(4))
        np.testing.assert_allclose(kron(A, B) @ kron(C, D), kron(A @ C, B @ D), atol=1e-12)


class TestComplexGaussian:
    def test_zero_variance(self, rng):
        np.testing.assert_array_equal(sample_complex_gaussian(rng, (7,), 0.0), 0)

    def test_moments(self):
        z = sample_complex_gaussian(make_rng(1), (100_000,), 1.0)
        assert abs(np.mean(np.abs(z) ** 2) - 1.0) < 0.02
        assert abs(np.var(z.real) - 0.5) < 0.01
        assert abs(np.var(z.imag) - 0.5) < 0.01

    def test_same_stream_same_draws(self):
        a = sample_complex_gaussian(make_rng(3, 1, 2), (16,))
        b = sample_complex_gaussian(make_rng(3, 1, 2), (16,))
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        a = sample_complex_gaussian(make_rng(3, 1), (16,))
        b = sample_complex_gaussian(make_rng(3, 2), (16,))
        assert not np.allclose(a, b)


def test_random_psd_helper_is_positive(rng):
    assert np.linalg.eigvalsh(random_psd(rng, 4)).min() > 0
