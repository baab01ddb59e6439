"""Hessian-approximation quality: errors, spectra, effective dimension.

Everything here is dense and meant for d up to a couple of thousand.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .linalg import symmetrize
from .nystrom import build_factor, dense_reconstruct, sample_columns

log = logging.getLogger(__name__)

NORMS = ("fro", "spec")


def _spec_norm(A):
    ev = np.linalg.eigvalsh(symmetrize(A))
    return float(max(abs(ev[0]), abs(ev[-1])))


def matrix_norm(A, norm="fro"):
    if norm == "fro":
        return float(np.linalg.norm(A, "fro"))
    if norm == "spec":
        return _spec_norm(A)
    raise ValueError(f"unknown norm {norm!r}, expected one of {NORMS}")


def rel_error(H, N, norm="fro"):
    """``||H - N|| / ||H||`` in the Frobenius or spectral norm."""
    H, N = np.asarray(H, dtype=float), np.asarray(N, dtype=float)
    if H.shape != N.shape:
        raise ValueError(f"shape mismatch {H.shape} vs {N.shape}")
    denom = matrix_norm(H, norm)
    if denom == 0:
        raise ZeroDivisionError("relative error undefined for H = 0")
    return matrix_norm(H - N, norm) / denom


def effective_dimension(H, lam):
    """``trace(H (H + lam I)^{-1}) = sum_i s_i / (s_i + lam)``."""
    if not lam > 0:
        raise ValueError("lam must be > 0")
    s = np.linalg.eigvalsh(symmetrize(H))
    s = np.clip(s, 0.0, None)
    return float(np.sum(s / (s + lam)))


def newton_closeness(H, N, lam):
    """Distance between regularized inverses and its closed-form bound.

    Returns ``(lhs, rhs)`` with ``lhs = ||(N + lam I)^{-1} - (H + lam I)^{-1}||_2``
    and ``rhs = ||J|| / (lam (||J|| + lam))``, ``J = H - N``.
    """
    if not lam > 0:
        raise ValueError("lam must be > 0")
    H, N = symmetrize(H), symmetrize(N)
    if H.shape != N.shape:
        raise ValueError(f"shape mismatch {H.shape} vs {N.shape}")
    eye = np.eye(H.shape[0])
    lhs = _spec_norm(np.linalg.inv(N + lam * eye) - np.linalg.inv(H + lam * eye))
    J = _spec_norm(H - N)
    rhs = J / (lam * (J + lam))
    if lhs > rhs + 1e-8:
        log.warning("closeness bound violated: lhs=%.3e rhs=%.3e", lhs, rhs)
    return lhs, rhs


@dataclass
class ApproxQualityReport:
    m: int
    seed: int
    k: int
    rel_error_fro: float
    rel_error_spec: float
    rank_N: int
    lambda_min_N: float
    lambda_max_N: float
    newton_closeness_lhs: float
    newton_closeness_rhs: float
    effective_dim: float
    lam: float


def approx_quality(H, N, m, k, lam, seed=0):
    ev = np.linalg.eigvalsh(N)
    tol = max(abs(ev[-1]), 1.0) * N.shape[0] * np.finfo(float).eps
    lhs, rhs = newton_closeness(H, N, lam)
    return ApproxQualityReport(
        m=m,
        seed=seed,
        k=k,
        rel_error_fro=rel_error(H, N, "fro"),
        rel_error_spec=rel_error(H, N, "spec"),
        rank_N=int(np.count_nonzero(ev > tol)),
        lambda_min_N=float(ev[0]),
        lambda_max_N=float(ev[-1]),
        newton_closeness_lhs=lhs,
        newton_closeness_rhs=rhs,
        effective_dim=effective_dimension(H, lam),
        lam=lam,
    )


def quality_sweep(model, data, w, m_grid, lam, seeds, base_seed=0, clamp=None):
    """Nystrom approximation quality of the unregularized Hessian at ``w``.

    For each m and each seed, m columns are sampled and ``N = Z Z^T`` is
    compared against the dense Hessian (computed with the model's l2 term
    removed).  ``lam`` only enters the closeness bound and the effective
    dimension.  Seed s for grid value m draws its columns from
    ``SeedSequence([base_seed, m, s])``, so each cell is reproducible alone.
    """
    m_grid = list(m_grid)
    if not m_grid:
        raise ConfigError("m_grid must not be empty")
    if seeds < 1:
        raise ConfigError("seeds must be >= 1")
    bare = model.with_lam(0.0)
    H = symmetrize(bare.full_hessian(data, w))
    reports = []
    for m in m_grid:
        if not 1 <= m <= data.d:
            raise ConfigError(f"m={m} outside [1, d={data.d}]")
        for s in range(seeds):
            rng = np.random.default_rng(np.random.SeedSequence([base_seed, m, s]))
            omega = sample_columns(data.d, m, rng)
            C = H[:, omega]
            # rho is irrelevant for N itself
            factor = build_factor(C, omega, rho=1.0, clamp=clamp)
            N = dense_reconstruct(factor)
            reports.append(approx_quality(H, N, m, factor.k, lam, seed=s))
    return reports
