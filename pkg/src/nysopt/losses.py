"""Objective families ``f(w) = mean_i f_i(w) + (lam/2) ||w||^2``.

All three kinds are linear models, so every oracle reduces to a per-sample
scalar (margin derivative) pushed through the sparse data matrix.  Sums run
through scipy's sequential sparse kernels, hence results are reproducible
bit-for-bit.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import ConfigError

KINDS = ("logistic", "l2svm", "quadratic")
DENSE_CAP = 2000


def _rows(data, batch):
    if batch is None:
        return data.X, data.y
    batch = np.asarray(batch, dtype=np.intp)
    if batch.size and (batch.min() < 0 or batch.max() >= data.n):
        raise IndexError("batch index out of range")
    return data.X[batch], data.y[batch]


def check_omega(omega, d):
    omega = np.asarray(omega, dtype=np.intp)
    if omega.ndim != 1:
        raise ConfigError("omega must be one-dimensional")
    if omega.size and (omega.min() < 0 or omega.max() >= d):
        raise ConfigError(f"omega indices must lie in [0, {d})")
    if np.unique(omega).size != omega.size:
        raise ConfigError("omega contains duplicate indices")
    return omega


@dataclass(frozen=True)
class LossModel:
    """Loss, gradient and Hessian oracles for one objective family.

    ``kind`` is one of ``logistic``, ``l2svm`` (squared hinge) or
    ``quadratic`` (least squares, ``(1/2n)||Xw - y||^2``).  ``lam`` is the
    l2 regularization weight, and the Hessian carries ``+lam * I``.
    """

    kind: str
    lam: float = 0.0
    dense_cap: int = DENSE_CAP

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if not self.lam >= 0:
            raise ConfigError("lam must be >= 0")

    def with_lam(self, lam):
        return LossModel(self.kind, lam, self.dense_cap)

    def loss(self, data, w, batch=None):
        X, y = _rows(data, batch)
        if X.shape[0] == 0:
            raise ValueError("empty batch")
        z = X @ w
        if self.kind == "logistic":
            per = np.logaddexp(0.0, -y * z)
        elif self.kind == "l2svm":
            per = np.maximum(0.0, 1.0 - y * z) ** 2
        else:
            per = 0.5 * (z - y) ** 2
        return float(per.mean() + 0.5 * self.lam * (w @ w))

    def _margin_grad(self, z, y):
        """d f_i / d (x_i^T w) for each sample."""
        if self.kind == "logistic":
            return -y * expit(-y * z)
        if self.kind == "l2svm":
            return -2.0 * y * np.maximum(0.0, 1.0 - y * z)
        return z - y

    def _curvature(self, z, y):
        """Second derivative of f_i along x_i (generalized for l2svm)."""
        if self.kind == "logistic":
            s = expit(z)
            return s * (1.0 - s)
        if self.kind == "l2svm":
            # generalized Hessian: samples sitting exactly on the kink are excluded
            return np.where(y * z < 1.0, 2.0, 0.0)
        return np.ones_like(z)

    def grad(self, data, w, batch=None):
        X, y = _rows(data, batch)
        g = X.T @ self._margin_grad(X @ w, y)
        return g / X.shape[0] + self.lam * w

    def hvp(self, data, w, v, batch=None):
        """Hessian-vector product without forming any d x d matrix."""
        X, y = _rows(data, batch)
        D = self._curvature(X @ w, y)
        return X.T @ (D * (X @ v)) / X.shape[0] + self.lam * v

    def hessian_columns(self, data, w, omega, sample=None):
        """Columns ``omega`` of the Hessian at w, computed over ``sample`` rows.

        Returns a dense d x m array; column j is the derivative of the gradient
        with respect to ``w[omega[j]]``.
        """
        omega = check_omega(omega, data.d)
        X, y = _rows(data, sample)
        D = self._curvature(X @ w, y)
        XO = sp.diags(D / X.shape[0]) @ X[:, omega]
        C = (X.T @ XO).toarray()
        if self.lam:
            C[omega, np.arange(omega.size)] += self.lam
        return C

    def full_hessian(self, data, w, sample=None):
        """Dense d x d Hessian; refused above ``dense_cap`` features.

        Built through the same kernel as :meth:`hessian_columns`, so every
        column agrees with it bit-for-bit.  Symmetric to rounding only.
        """
        if data.d > self.dense_cap:
            raise ConfigError(f"d={data.d} exceeds dense cap {self.dense_cap}")
        return self.hessian_columns(data, w, np.arange(data.d), sample=sample)

    def extreme_eigenvalues(self, data, w, sample=None):
        """(lambda_min, lambda_max) of the Hessian at w.

        Dense eigendecomposition up to the cap, Lanczos on Hessian-vector
        products above it.  These are local estimates of the curvature bounds,
        not global constants.
        """
        if data.d <= self.dense_cap:
            H = self.full_hessian(data, w, sample)
            ev = np.linalg.eigvalsh(0.5 * (H + H.T))
            return float(ev[0]), float(ev[-1])
        from scipy.sparse.linalg import LinearOperator, eigsh

        op = LinearOperator((data.d, data.d), matvec=lambda v: self.hvp(data, w, v, sample), dtype=float)
        hi = eigsh(op, k=1, which="LA", return_eigenvectors=False)[0]
        lo = eigsh(op, k=1, which="SA", return_eigenvectors=False)[0]
        return float(lo), float(hi)
