"""Small dense linear algebra used by the Nystrom pipeline.

Everything here works on m x m or k x k matrices with m, k << d, so plain
LAPACK through numpy/scipy is the right tool.  The functions are pure.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import SingularMatrixError

SYMMETRY_RTOL = 1e-10


@dataclass(frozen=True)
class EigenPair:
    """Truncated symmetric eigendecomposition ``M_k = U diag(values) U^T``.

    ``vectors`` is m x k with orthonormal columns, ``values`` is descending.
    ``k`` may be zero, in which case ``vectors`` has shape (m, 0).
    """

    vectors: np.ndarray
    values: np.ndarray

    @property
    def k(self):
        return self.values.shape[0]

    @property
    def m(self):
        return self.vectors.shape[0]


def _check_finite(a, name):
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")


def symmetrize(M):
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def sym_eig_truncated(M, k_max=None, clamp=0.0):
    """Top eigenpairs of a symmetric matrix, dropping the numerically null part.

    Eigenvalues at or below ``clamp * max(lambda_max, 1)`` are discarded, so
    the returned rank can be smaller than ``k_max``.  The input is symmetrized
    before decomposition; an asymmetry larger than 1e-10 (relative to the
    largest entry) is rejected.

    Args:
        M: symmetric m x m array.
        k_max: keep at most this many eigenpairs (default m).
        clamp: relative eigenvalue threshold, >= 0.

    Returns:
        EigenPair with values in descending order.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise ValueError(f"expected a nonempty square matrix, got shape {M.shape}")
    if clamp < 0:
        raise ValueError("clamp must be nonnegative")
    _check_finite(M, "M")
    m = M.shape[0]
    scale = max(np.abs(M).max(), 1.0)
    if np.abs(M - M.T).max() > SYMMETRY_RTOL * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    if k_max is None:
        k_max = m
    if k_max < 0:
        raise ValueError("k_max must be nonnegative")

    values, vectors = np.linalg.eigh(symmetrize(M))
    values, vectors = values[::-1], vectors[:, ::-1]
    threshold = clamp * max(values[0], 1.0)
    keep = int(np.count_nonzero(values > threshold))
    keep = min(keep, k_max)
    return EigenPair(vectors=vectors[:, :keep].copy(), values=values[:keep].copy())


def pinv_from_eig(e):
    """Pseudo-inverse ``U diag(1/values) U^T``; the zero matrix when k = 0."""
    if e.k == 0:
        return np.zeros((e.m, e.m))
    if np.any(e.values <= 0):
        raise ValueError("pseudo-inverse needs strictly positive eigenvalues")
    P = (e.vectors / e.values) @ e.vectors.T
    return symmetrize(P)


def spd_solve(A, b):
    """Solve ``A x = b`` for symmetric positive definite A via Cholesky.

    ``b`` may be a vector or a matrix of right-hand sides.
    Raises SingularMatrixError when the factorization hits a nonpositive pivot.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    try:
        factor = scipy.linalg.cho_factor(A, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"matrix is not positive definite: {exc}") from exc
    x = scipy.linalg.cho_solve(factor, b)
    # one step of refinement; cheap at k x k and tightens the residual
    r = b - A @ x
    return x + scipy.linalg.cho_solve(factor, r)
