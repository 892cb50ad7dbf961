"""Power-constrained MSE-optimal measurement design under a known column subspace.

Given a noise covariance C and a power budget P, the design that minimizes the
estimation MSE tr((A^T C^-1 A)^-1) subject to ||A||_F^2 <= P aligns the left
singular vectors of A with the eigenvectors of the smallest eigenvalues of C
and allocates singular values by an inverse fourth-root power rule.  The full
operator over the original matrix space is recovered by lifting with the
subspace basis, which preserves both the power and the objective value.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from ._util import fix_signs, top_left_singvecs
from .affine_map import NoiseModel

__all__ = [
    "SubspaceBasis",
    "DesignResult",
    "restrict_to_subspace",
    "solve_power_constrained_design",
    "lift_design",
    "mse_profile",
    "optimal_rank",
    "optimal_subspace",
]

SEMI_UNITARY_TOL = 1e-8


@dataclass(frozen=True)
class SubspaceBasis:
    """Semi-unitary basis F (M x d) of a column subspace."""

    basis: np.ndarray
    dim: int

    def __post_init__(self):
        f = np.asarray(self.basis, dtype=float)
        object.__setattr__(self, "basis", f)
        if f.ndim != 2 or f.shape[1] != self.dim:
            raise ValueError(f"basis shape {f.shape} inconsistent with dim {self.dim}")
        if not 1 <= self.dim <= f.shape[0]:
            raise ValueError(f"need 1 <= d <= M, got d={self.dim}, M={f.shape[0]}")
        gram = f.T @ f
        if np.max(np.abs(gram - np.eye(self.dim))) > SEMI_UNITARY_TOL:
            raise ValueError("basis is not semi-unitary (F^T F != I)")

    @classmethod
    def from_columns(cls, f):
        f = np.asarray(f, dtype=float)
        return cls(basis=f, dim=f.shape[1])


@dataclass(frozen=True)
class DesignResult:
    """Optimal restricted design A-hat plus the KKT multiplier and achieved MSE."""

    a_hat: np.ndarray  # p x n_cols
    mu: float  # KKT multiplier of the power constraint
    theoretical_mse: float
    kkt_residual: float
    s_hat: np.ndarray | None = None  # lifted p x (M*N) operator, filled by lift_design


def restrict_to_subspace(s, basis: SubspaceBasis, n_blocks=None):
    """Compress a stacked operator onto a column subspace: A = S (I_N (x) F).

    Computed blockwise (one M-column block per matrix column) without
    materializing the Kronecker product.
    """
    s = np.asarray(s, dtype=float)
    f = basis.basis
    m = f.shape[0]
    p, mn = s.shape
    if mn % m != 0:
        raise ValueError(f"stacked operator has {mn} columns, not a multiple of M={m}")
    n = mn // m
    if n_blocks is not None and n_blocks != n:
        raise ValueError(f"expected {n_blocks} column blocks, operator implies {n}")
    return (s.reshape(p * n, m) @ f).reshape(p, n * basis.dim)


def lift_design(a_hat, basis: SubspaceBasis):
    """Expand a restricted design back to the full space: S-hat = A-hat (I_N (x) F)^T.

    Right-multiplication by a semi-unitary block matrix, so Frobenius norm (and
    hence power) is preserved, and restricting the result recovers A-hat exactly.
    """
    a_hat = np.asarray(a_hat, dtype=float)
    f = basis.basis
    d = basis.dim
    p, nd = a_hat.shape
    if nd % d != 0:
        raise ValueError(f"restricted design has {nd} columns, not a multiple of d={d}")
    n = nd // d
    return (a_hat.reshape(p * n, d) @ f.T).reshape(p, n * f.shape[0])


def solve_power_constrained_design(noise: NoiseModel, p, n_cols, power, rotation=None):
    """Minimize tr((A^T C^-1 A)^-1) over p x n_cols designs with ||A||_F^2 <= P.

    The minimizer pairs A's left singular vectors with the eigenvectors of the
    n_cols smallest eigenvalues of C, takes squared singular values
    mu^{-1/2} D^{1/2} with multiplier mu = tr(D^{1/2})^2 / P^2, and admits any
    orthonormal right factor (identity unless a rotation is supplied).  The
    achieved MSE is (1/P) (sum of the square roots of those eigenvalues)^2.
    """
    if n_cols < 1:
        raise ValueError("n_cols must be positive")
    if p < n_cols:
        raise ValueError(
            f"design infeasible: p={p} < n_cols={n_cols} makes the estimator Gram singular"
        )
    if power <= 0:
        raise ValueError("power budget must be positive")
    if noise.dim != p:
        raise ValueError(f"noise dimension {noise.dim} != p={p}")

    c = noise.covariance()
    eigvals, eigvecs = np.linalg.eigh(c)  # ascending
    if eigvals[0] <= 0:
        raise ValueError("noise covariance must be positive definite")
    # descending order overall; the design keeps the n_cols smallest eigenpairs
    eigvals = eigvals[::-1]
    eigvecs = eigvecs[:, ::-1]
    d_vals = eigvals[p - n_cols :]
    u_a = fix_signs(eigvecs[:, p - n_cols :])

    sqrt_d = np.sqrt(d_vals)
    mu = float(np.sum(sqrt_d)) ** 2 / power**2
    sig_a = np.sqrt(sqrt_d / np.sqrt(mu))  # singular values of A
    a_hat = u_a * sig_a
    if rotation is not None:
        rotation = np.asarray(rotation, dtype=float)
        if np.max(np.abs(rotation.T @ rotation - np.eye(n_cols))) > SEMI_UNITARY_TOL:
            raise ValueError("rotation must be orthonormal")
        a_hat = a_hat @ rotation.T
    mse = float(np.sum(sqrt_d)) ** 2 / power

    gram = a_hat.T @ a_hat
    if noise.kind == "iid":
        cinv_a = a_hat / noise.sigma2
    elif noise.kind == "diagonal":
        cinv_a = a_hat / noise.variances[:, None]
    else:
        cinv_a = np.linalg.solve(c, a_hat)
    stationarity = np.linalg.inv(a_hat.T @ cinv_a) / mu
    kkt = float(np.linalg.norm(gram - stationarity) / np.linalg.norm(gram))
    return DesignResult(a_hat=a_hat, mu=mu, theoretical_mse=mse, kkt_residual=kkt)


def mse_profile(singvals, noise, n_cols, power, p):
    """MSE as a function of the retained rank d, for d = 0..r.

    singvals are the descending singular values of the target matrix; entry d
    of the result is the estimation-noise term of the optimal design at rank d
    plus the energy of the discarded spectrum.  noise is either a scalar
    sigma^2 (i.i.d. observations, giving d^2 N^2 sigma^2 / P) or a descending
    vector of covariance eigenvalues of length p (general case, giving
    (1/P)(sum of sqrt of the N*d smallest eigenvalues)^2).
    """
    lam = np.asarray(singvals, dtype=float)
    if np.any(lam < 0):
        raise ValueError("singular values must be nonnegative")
    if np.any(np.diff(lam) > 0):
        raise ValueError("singular values must be sorted in descending order")
    r = lam.size
    tails = np.concatenate([np.cumsum((lam**2)[::-1])[::-1], [0.0]])  # tails[d] = sum_{k>d} lam_k^2

    if np.ndim(noise) == 0:
        sigma2 = float(noise)
        if sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        d = np.arange(r + 1)
        noise_term = d**2 * n_cols**2 * sigma2 / power
    else:
        cov_eigs = np.asarray(noise, dtype=float)
        if cov_eigs.size != p:
            raise ValueError(f"expected {p} covariance eigenvalues, got {cov_eigs.size}")
        if np.any(np.diff(cov_eigs) > 0):
            raise ValueError("covariance eigenvalues must be sorted in descending order")
        if p < n_cols * r:
            raise ValueError(f"need p >= N*r = {n_cols * r} for the general design, got p={p}")
        sqrt_tail = np.concatenate([[0.0], np.cumsum(np.sqrt(cov_eigs[::-1]))])
        noise_term = np.array([sqrt_tail[n_cols * d] ** 2 / power for d in range(r + 1)])
    return noise_term + tails


def optimal_rank(singvals, noise, n_cols, power, p):
    """Rank minimizing the MSE profile; ties break toward the smaller rank."""
    profile = mse_profile(singvals, noise, n_cols, power, p)
    return int(np.argmin(profile))


def optimal_subspace(l_mat, d):
    """Basis of the dominant-d left singular subspace of a matrix.

    If d exceeds the numerical rank the basis is truncated with a warning.
    """
    l_mat = np.asarray(l_mat, dtype=float)
    if d < 1:
        raise ValueError("d must be at least 1")
    u, s = top_left_singvecs(l_mat, min(d, min(l_mat.shape)))
    num_rank = int(np.sum(s > 1e-9 * s[0])) if s.size and s[0] > 0 else 0
    if num_rank == 0:
        raise ValueError("matrix is numerically zero; no subspace to extract")
    if d > num_rank:
        warnings.warn(
            f"requested d={d} exceeds numerical rank {num_rank}; truncating", stacklevel=2
        )
        d = num_rank
    return SubspaceBasis(basis=u[:, :d], dim=d)
