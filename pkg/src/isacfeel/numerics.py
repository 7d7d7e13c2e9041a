"""Small dense complex linear algebra shared by the rest of the package.

Everything here is a pure function of its inputs. Matrices are plain
``numpy`` arrays (complex128); no wrapper types.
"""

from typing import NamedTuple

import numpy as np

__all__ = [
    "ValidationError",
    "HermitianEigen",
    "make_rng",
    "hermitian_eig",
    "hermitize",
    "inv_sqrt",
    "pinv",
    "kron",
    "sample_complex_gaussian",
]

HERMITIAN_RTOL = 1e-12
PSD_CLAMP_RTOL = 1e-10
COND_RTOL = 1e-12


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class HermitianEigen(NamedTuple):
    """Eigenpairs of a Hermitian matrix, eigenvalues ascending.

    ``vectors[:, i]`` is the unit-norm eigenvector of ``values[i]``.
    """

    values: np.ndarray
    vectors: np.ndarray


def make_rng(seed, *stream):
    """Return an independent, reproducible generator for ``(seed, *stream)``.

    Identical arguments give identical sequences; different stream ids give
    statistically independent streams.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.default_rng(ss)


def _max_asymmetry(A):
    A = np.asarray(A)
    scale = max(np.max(np.abs(A)), 1e-300)
    return np.max(np.abs(A - A.conj().T)) / scale


def hermitize(A):
    """Project ``A`` onto the Hermitian matrices, ``(A + A^H) / 2``."""
    A = np.asarray(A, dtype=complex)
    return 0.5 * (A + A.conj().T)


def hermitian_eig(A) -> HermitianEigen:
    """Eigendecomposition of a Hermitian matrix.

    Parameters
    ----------
    A : (n, n) array_like
        Hermitian within a relative tolerance of 1e-12.

    Returns
    -------
    HermitianEigen
        Ascending real eigenvalues and orthonormal eigenvectors (columns).

    Raises
    ------
    ValidationError
        If ``A`` is not square or not Hermitian.
    """
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {A.shape}")
    asym = _max_asymmetry(A)
    if asym > HERMITIAN_RTOL:
        raise ValidationError(f"matrix is not Hermitian: max relative asymmetry {asym:.3e}")
    values, vectors = np.linalg.eigh(hermitize(A))
    return HermitianEigen(values, vectors)


def inv_sqrt(A):
    """Hermitian inverse square root ``U diag(lambda^-1/2) U^H`` of a PSD matrix.

    Eigenvalues down to ``-1e-10 * ||A||`` are treated as numerical noise and
    clamped to zero; the result is rejected if the clamped spectrum has a
    condition number above 1e12.
    """
    values, vectors = hermitian_eig(A)
    top = np.max(np.abs(values)) if values.size else 0.0
    if values.size and values[0] < -PSD_CLAMP_RTOL * top:
        raise ValidationError(f"matrix is not PSD: min eigenvalue {values[0]:.3e}")
    values = np.clip(values, 0.0, None)
    if top == 0.0 or values[0] <= COND_RTOL * top:
        cond = np.inf if values[0] == 0.0 else top / values[0]
        raise ValidationError(f"matrix is near-singular: condition number {cond:.3e}")
    return (vectors * values ** -0.5) @ vectors.conj().T


def pinv(A):
    """Moore-Penrose pseudo-inverse."""
    return np.linalg.pinv(np.asarray(A, dtype=complex))


def kron(A, B):
    """Kronecker product ``A (x) B``."""
    return np.kron(np.asarray(A), np.asarray(B))


def sample_complex_gaussian(rng, shape, variance=1.0):
    """Draw i.i.d. circularly-symmetric CN(0, variance) entries.

    Real and imaginary parts each carry ``variance / 2``. A zero variance
    yields exact zeros (the generator is still advanced, so streams stay
    aligned across configurations).
    """
    if variance < 0:
        raise ValidationError(f"variance must be >= 0, got {variance}")
    if np.isscalar(shape):
        shape = (int(shape),)
    draw = rng.standard_normal((*shape, 2))
    return np.sqrt(variance / 2.0) * (draw[..., 0] + 1j * draw[..., 1])
