"""Affine measurement operators on matrices.

A measurement operator takes an M x N matrix L to a length-p vector whose
i-th entry is trace(X_i^T L) for a measurement matrix X_i.  Internally the
operator is stored in stacked form: a p x (M*N) matrix S whose i-th row is
vec(X_i)^T, so that applying the operator is S @ vec(L).
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._util import unvec, vec

__all__ = [
    "AffineMap",
    "NoiseModel",
    "apply",
    "observe",
    "gaussian_random",
    "averaged_mutual_coherence",
]

POWER_SLACK = 1e-9


@dataclass(frozen=True)
class AffineMap:
    """Stack of p measurement matrices over M x N inputs, with a power budget.

    Immutable after construction; safe to share across threads.
    """

    p: int
    m_rows: int
    n_cols: int
    stacked: np.ndarray  # p x (M*N), row i = vec(X_i)^T
    power: float

    def __post_init__(self):
        s = np.asarray(self.stacked, dtype=float)
        object.__setattr__(self, "stacked", s)
        if s.shape != (self.p, self.m_rows * self.n_cols):
            raise ValueError(
                f"stacked has shape {s.shape}, expected ({self.p}, {self.m_rows * self.n_cols})"
            )
        if self.power < 0:
            raise ValueError("power must be nonnegative")
        fro2 = float(np.sum(s * s))
        if fro2 > self.power + POWER_SLACK:
            raise ValueError(
                f"power infeasible: ||S||_F^2 = {fro2:.6g} exceeds budget {self.power:.6g}"
            )

    def measurement_matrix(self, i):
        """The i-th measurement matrix X_i (M x N)."""
        return unvec(self.stacked[i], self.m_rows, self.n_cols)


@dataclass(frozen=True)
class NoiseModel:
    """Additive Gaussian observation noise with covariance C.

    kind is one of "iid" (C = sigma2 * I), "diagonal" (C = diag(variances)),
    or "full" (arbitrary SPD C).
    """

    kind: str
    dim: int
    sigma2: float = 0.0
    variances: np.ndarray | None = None
    cov: np.ndarray | None = None
    _chol: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def iid(cls, sigma2, dim):
        if sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        return cls(kind="iid", dim=dim, sigma2=float(sigma2))

    @classmethod
    def diagonal(cls, variances):
        v = np.asarray(variances, dtype=float)
        if v.ndim != 1:
            raise ValueError("variances must be a vector")
        if np.any(v < 0):
            raise ValueError("diagonal variances must be nonnegative")
        return cls(kind="diagonal", dim=v.size, variances=v)

    @classmethod
    def full(cls, cov):
        c = np.asarray(cov, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("full covariance must be square")
        if np.max(np.abs(c - c.T)) > 1e-10:
            raise ValueError("full covariance must be symmetric to 1e-10")
        eigvals = np.linalg.eigvalsh(c)
        if eigvals[0] <= 0:
            raise ValueError(f"full covariance must be positive definite (min eig {eigvals[0]:.3g})")
        obj = cls(kind="full", dim=c.shape[0], cov=c)
        object.__setattr__(obj, "_chol", np.linalg.cholesky(c))
        return obj

    def covariance(self):
        """Dense covariance matrix C."""
        if self.kind == "iid":
            return self.sigma2 * np.eye(self.dim)
        if self.kind == "diagonal":
            return np.diag(self.variances)
        return self.cov

    def sample(self, rng):
        """One noise draw n ~ N(0, C)."""
        z = rng.standard_normal(self.dim)
        if self.kind == "iid":
            return np.sqrt(self.sigma2) * z
        if self.kind == "diagonal":
            return np.sqrt(self.variances) * z
        return self._chol @ z


def apply(amap: AffineMap, l_mat):
    """Apply the operator: output[i] = trace(X_i^T L) = row_i(S) . vec(L)."""
    l_mat = np.asarray(l_mat, dtype=float)
    if l_mat.shape != (amap.m_rows, amap.n_cols):
        raise ValueError(f"input has shape {l_mat.shape}, map expects ({amap.m_rows}, {amap.n_cols})")
    return amap.stacked @ vec(l_mat)


def observe(amap: AffineMap, l_mat, noise: NoiseModel, rng):
    """Noisy observation y = A(L) + n with n ~ N(0, C); deterministic given rng state."""
    if noise.dim != amap.p:
        raise ValueError(f"noise dimension {noise.dim} != observation count {amap.p}")
    return apply(amap, l_mat) + noise.sample(rng)


def gaussian_random(p, m_rows, n_cols, rng, scale=1.0):
    """Random map with i.i.d. N(0, scale^2) entries; power set to the realized norm."""
    if p < 1:
        raise ValueError("p must be at least 1")
    s = scale * rng.standard_normal((p, m_rows * n_cols))
    return AffineMap(p=p, m_rows=m_rows, n_cols=n_cols, stacked=s, power=float(np.sum(s * s)))


def averaged_mutual_coherence(amap: AffineMap, absolute=True, return_zero_count=False):
    """Averaged mutual coherence of the stacked operator's columns.

    Columns of S are unit-normalized; the pairwise (absolute) inner products
    over all ordered pairs i != j are summed and divided by (M*N)^2 - p.
    Exactly-zero columns are skipped (designed maps contain structural zeros);
    their count is emitted as a warning and, with return_zero_count, returned
    alongside the coherence.  Set absolute=False to sum signed inner products
    instead.
    """
    s = amap.stacked
    mn = amap.m_rows * amap.n_cols
    norms = np.linalg.norm(s, axis=0)
    nonzero = norms > 0
    n_zero = int(mn - np.count_nonzero(nonzero))
    if n_zero == mn:
        raise ValueError("all columns of the stacked map are zero")
    if n_zero:
        warnings.warn(f"averaged_mutual_coherence: skipped {n_zero} zero columns", stacklevel=2)
    sbar = s[:, nonzero] / norms[nonzero]
    gram = sbar.T @ sbar
    np.fill_diagonal(gram, 0.0)
    total = float(np.sum(np.abs(gram))) if absolute else float(np.sum(gram))
    mu = total / (mn * mn - amap.p)
    if return_zero_count:
        return mu, n_zero
    return mu
