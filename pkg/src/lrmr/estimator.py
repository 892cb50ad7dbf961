"""Generalized least squares estimation and reconstruction-error metrics."""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .affine_map import NoiseModel
from .map_design import SubspaceBasis

__all__ = ["GlsProblem", "gls_estimate", "project_onto_subspace", "reconstruct", "nmse"]

GRAM_COND_ERROR = 1e12
GRAM_COND_WARN = 1e8


@dataclass(frozen=True)
class GlsProblem:
    """Linear observation y = A x + n with n ~ N(0, C)."""

    a: np.ndarray  # p x q design
    c: NoiseModel
    y: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)
        if a.ndim != 2:
            raise ValueError("design must be a matrix")
        if y.shape != (a.shape[0],):
            raise ValueError(f"observation length {y.shape} != design rows {a.shape[0]}")
        if self.c.dim != a.shape[0]:
            raise ValueError(f"noise dimension {self.c.dim} != design rows {a.shape[0]}")


def _whiten(problem: GlsProblem):
    """Left-multiply design and observations by C^{-1/2} (Cholesky based).

    For i.i.d. noise the whitening is a uniform scale that cancels out of the
    estimate, so it is skipped; this also covers the noiseless sigma2 = 0 case.
    """
    a, y, noise = problem.a, problem.y, problem.c
    if noise.kind == "iid":
        return a, y
    if noise.kind == "diagonal":
        if np.any(noise.variances <= 0):
            raise ValueError("diagonal covariance must be positive for GLS")
        w = 1.0 / np.sqrt(noise.variances)
        return a * w[:, None], y * w
    chol = np.linalg.cholesky(noise.covariance())
    aw = sla.solve_triangular(chol, a, lower=True, check_finite=False)
    yw = sla.solve_triangular(chol, y, lower=True, check_finite=False)
    return aw, yw


def gls_estimate(problem: GlsProblem):
    """Efficient (minimum-variance unbiased) estimate (A^T C^-1 A)^-1 A^T C^-1 y.

    Implemented as whitening followed by a QR least-squares solve; C^-1 is
    never formed.  The Gram condition number is estimated from the triangular
    factor: above 1e12 the problem is rejected, above 1e8 a warning is issued.
    """
    aw, yw = _whiten(problem)
    q, r_fac = sla.qr(aw, mode="economic", check_finite=False)
    diag = np.abs(np.diag(r_fac))
    if np.any(diag == 0):
        raise np.linalg.LinAlgError("singular Gram matrix: design is rank deficient")
    rcond, _ = sla.lapack.dtrcon(r_fac, norm="1")
    cond_gram = (1.0 / max(rcond, np.finfo(float).tiny)) ** 2
    if cond_gram > GRAM_COND_ERROR:
        raise np.linalg.LinAlgError(
            f"Gram matrix condition {cond_gram:.3g} exceeds {GRAM_COND_ERROR:.0e}"
        )
    if cond_gram > GRAM_COND_WARN:
        warnings.warn(f"ill-conditioned Gram matrix: condition {cond_gram:.3g}", stacklevel=2)
    return sla.solve_triangular(r_fac, q.T @ yw, lower=False, check_finite=False)


def project_onto_subspace(l_tilde, basis: SubspaceBasis):
    """Orthogonal projection F F^T L of an estimate onto a column subspace.

    Projecting never increases the distance to any matrix whose columns lie in
    the subspace; the operation is idempotent.
    """
    l_tilde = np.asarray(l_tilde, dtype=float)
    f = basis.basis
    if l_tilde.shape[0] != f.shape[0]:
        raise ValueError(f"matrix has {l_tilde.shape[0]} rows, basis has {f.shape[0]}")
    return f @ (f.T @ l_tilde)


def reconstruct(basis: SubspaceBasis, q_hat):
    """Assemble the estimate L = F Q from a basis and coefficient matrix."""
    q_hat = np.asarray(q_hat, dtype=float)
    if q_hat.shape[0] != basis.dim:
        raise ValueError(f"coefficients have {q_hat.shape[0]} rows, basis dim is {basis.dim}")
    return basis.basis @ q_hat


def nmse(l_hat, l_ref):
    """Squared Frobenius error of l_hat normalized by the reference energy."""
    l_hat = np.asarray(l_hat, dtype=float)
    l_ref = np.asarray(l_ref, dtype=float)
    if l_hat.shape != l_ref.shape:
        raise ValueError(f"shape mismatch: {l_hat.shape} vs {l_ref.shape}")
    denom = float(np.sum(l_ref * l_ref))
    if denom == 0:
        raise ValueError("reference matrix is zero; NMSE undefined")
    return float(np.sum((l_hat - l_ref) ** 2)) / denom
