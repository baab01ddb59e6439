"""Rank-k Nystrom factor of a Hessian and the Woodbury inverse-apply.

Given m sampled Hessian columns ``C`` (d x m) at index set ``omega``, the
approximation is ``N = C M_k^+ C^T = Z Z^T`` with ``M = C[omega]`` and
``Z = C U_k S_k^{-1/2}``.  The regularized inverse ``(N + rho I)^{-1}`` is
never formed; it is applied as ``v / rho - Q (Z^T v)`` with the d x k matrix
``Q = Z (I_k + Z^T Z / rho)^{-1} / rho^2`` precomputed once per factor.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .linalg import spd_solve, sym_eig_truncated, symmetrize
from .losses import DENSE_CAP, check_omega

DEFAULT_CLAMP = 1e-10


@dataclass(frozen=True)
class NystromFactor:
    Z: np.ndarray
    Q: np.ndarray
    omega: np.ndarray
    rho: float
    epoch: int = 0

    @property
    def k(self):
        return self.Z.shape[1]

    @property
    def d(self):
        return self.Z.shape[0]

    @property
    def m(self):
        return self.omega.shape[0]

    def gamma(self):
        """Largest eigenvalue of ``Z Z^T``, read off the k x k Gram matrix."""
        if self.k == 0:
            return 0.0
        return float(np.linalg.eigvalsh(symmetrize(self.Z.T @ self.Z))[-1])


def woodbury_q(Z, rho):
    k = Z.shape[1]
    if k == 0:
        return np.zeros_like(Z)
    S = np.eye(k) + (Z.T @ Z) / rho
    # eigenvalues of S are >= 1, so its explicit inverse is accurate; one
    # d x k product beats d triangular solves
    return Z @ spd_solve(symmetrize(S), np.eye(k)) / rho**2


def factor_from_z(Z, rho, omega=None, epoch=0):
    """Wrap an explicit d x k factor ``Z`` (e.g. for tests or warm starts)."""
    if not rho > 0:
        raise ConfigError("rho must be > 0")
    Z = np.asarray(Z, dtype=float)
    if not np.all(np.isfinite(Z)):
        raise ValueError("Z contains non-finite entries")
    if omega is None:
        omega = np.arange(Z.shape[1])
    return NystromFactor(Z=Z, Q=woodbury_q(Z, rho), omega=np.asarray(omega), rho=float(rho), epoch=epoch)


def sample_columns(d, m, rng):
    """m distinct column indices drawn uniformly without replacement, sorted."""
    if not 1 <= m <= d:
        raise ConfigError(f"need 1 <= m <= d, got m={m}, d={d}")
    return np.sort(rng.choice(d, size=m, replace=False))


def build_factor(C, omega, rho, k_max=None, clamp=None, epoch=0):
    """Nystrom factor from sampled columns ``C`` (d x m) at indices ``omega``.

    ``clamp`` defaults to ``1e-10 * m``; eigenvalues of the intersection block
    below ``clamp * max(lambda_max, 1)`` are dropped, so the effective rank k
    can be smaller than m.  If nothing survives the result is the k = 0 factor
    and ``apply_inverse`` reduces to ``v / rho``.
    """
    C = np.asarray(C, dtype=float)
    if not rho > 0:
        raise ConfigError("rho must be > 0")
    if not np.all(np.isfinite(C)):
        raise ValueError("C contains non-finite entries")
    d, m = C.shape
    omega = check_omega(omega, d)
    if omega.size != m:
        raise ConfigError(f"omega has {omega.size} entries, C has {m} columns")
    if clamp is None:
        clamp = DEFAULT_CLAMP * m

    M = symmetrize(C[omega, :])
    eig = sym_eig_truncated(M, k_max=m if k_max is None else k_max, clamp=clamp)
    Z = (C @ eig.vectors) / np.sqrt(eig.values)
    return NystromFactor(Z=Z, Q=woodbury_q(Z, rho), omega=omega, rho=float(rho), epoch=epoch)


def apply_inverse(factor, v):
    """``(Z Z^T + rho I)^{-1} v`` in O(dk)."""
    if factor.k == 0:
        return v / factor.rho
    return v / factor.rho - factor.Q @ (factor.Z.T @ v)


def dense_reconstruct(factor, cap=DENSE_CAP):
    """``Z Z^T`` as a dense, exactly symmetric d x d array (diagnostics only)."""
    if factor.d > cap:
        raise ConfigError(f"d={factor.d} exceeds dense cap {cap}")
    return symmetrize(factor.Z @ factor.Z.T)
