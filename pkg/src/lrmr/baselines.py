"""Reference reconstruction methods: nuclear-norm minimization by proximal
gradient and matrix factorization by alternating least squares."""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ._util import spawn_rng, unvec, vec
from .affine_map import AffineMap

__all__ = ["SolverOptions", "svt", "nnm_solve", "mf_solve"]

MONOTONE_SLACK = 1e-9
_POWER_ITER_STREAM = 104729  # keeps the step-size probe off the caller's streams


@dataclass(frozen=True)
class SolverOptions:
    """Iteration budget plus the knobs of the two solvers.

    tau weights the data-fit term of the nuclear-norm objective (larger means
    tighter fit); step is the proximal step size; rank is the factorization
    target rank; init_refine is the number of gradient-projection passes that
    polish the factorization's spectral initializer.
    """

    max_iters: int = 1000
    tol: float = 1e-6
    tau: float | None = None
    step: float | None = None
    rank: int | None = None
    seed: int = 0
    init_refine: int = 60

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.step is not None and self.step <= 0:
            raise ValueError("step must be positive")


def svt(mtx, threshold):
    """Singular value soft thresholding: shrink each singular value by threshold.

    This is the proximal operator of threshold * nuclear norm.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    mtx = np.asarray(mtx, dtype=float)
    u, s, vt = np.linalg.svd(mtx, full_matrices=False)
    s = np.maximum(s - threshold, 0.0)
    return (u * s) @ vt


def _operator_norm_sq(stacked, seed, iters=50):
    """lambda_max(S^T S) by power iteration, padded 2% against underestimation."""
    rng = spawn_rng(seed, _POWER_ITER_STREAM)
    v = rng.standard_normal(stacked.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = stacked.T @ (stacked @ v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return 1.02 * lam


def nnm_solve(amap: AffineMap, y, opts: SolverOptions, sigma2=None):
    """Nuclear-norm regularized fit min ||L||_* + tau ||y - A(L)||_F^2.

    Proximal gradient with step 1/(2 tau ||S||_2^2); each iteration takes a
    gradient step on the data term and soft-thresholds the singular values.
    The objective must be nonincreasing; an increase beyond slack aborts with
    the offending step size.  Stops when the relative iterate change drops
    below opts.tol or after opts.max_iters iterations.
    """
    y = np.asarray(y, dtype=float)
    m, n = amap.m_rows, amap.n_cols
    s = amap.stacked

    if opts.tau is not None:
        tau = opts.tau
    elif sigma2 is not None and sigma2 > 0:
        tau = 1.0 / (2.0 * np.sqrt(sigma2 * max(m, n)))
    else:
        tau = 1.0

    lam_max = _operator_norm_sq(s, opts.seed)
    if lam_max == 0.0:
        return np.zeros((m, n))
    step_cap = 1.0 / (2.0 * tau * lam_max)
    step = opts.step if opts.step is not None else step_cap
    if step > step_cap:
        raise ValueError(f"step {step:.3g} exceeds stability cap {step_cap:.3g}")

    x = np.zeros((m, n))
    resid = y.copy()
    obj = tau * float(resid @ resid)
    for k in range(opts.max_iters):
        grad = -2.0 * tau * unvec(s.T @ resid, m, n)
        u, sv, vt = np.linalg.svd(x - step * grad, full_matrices=False)
        sv = np.maximum(sv - step, 0.0)
        x_new = (u * sv) @ vt
        resid = y - s @ vec(x_new)
        obj_new = float(np.sum(sv)) + tau * float(resid @ resid)
        if obj_new > obj + MONOTONE_SLACK * (1.0 + abs(obj)):
            raise RuntimeError(
                f"nuclear-norm objective increased at iteration {k} with step {step:.3g}"
            )
        rel = np.linalg.norm(x_new - x) / max(1e-30, np.linalg.norm(x_new))
        x = x_new
        obj = obj_new
        if rel < opts.tol:
            break
    return x


def _half_step(gram, rhs, iteration):
    """Solve one exact least-squares half step from its normal equations."""
    try:
        cf = sla.cho_factor(gram, check_finite=False)
        return sla.cho_solve(cf, rhs, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    # tiny ridge rescue for a numerically semidefinite Gram
    ridge = 1e-10 * max(np.trace(gram) / gram.shape[0], 1.0)
    try:
        cf = sla.cho_factor(gram + ridge * np.eye(gram.shape[0]), check_finite=False)
        return sla.cho_solve(cf, rhs, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"singular least-squares half step at iteration {iteration}") from exc


def _refined_spectral_init(stacked, y, m, n, r, refine_iters):
    """Rank-r initializer: adjoint-image spectral start plus hard-threshold passes.

    Plain spectral initialization (top singular vectors of unvec(S^T y))
    frequently lands alternating LS in poor stationary points at thin
    oversampling, so the start point is sharpened by gradient steps with an
    exact line search followed by rank-r truncation.
    """
    x = np.zeros((m, n))
    for _ in range(max(refine_iters, 0)):
        grad = unvec(stacked.T @ (y - stacked @ vec(x)), m, n)
        image = stacked @ vec(grad)
        denom = float(image @ image)
        eta = float(np.sum(grad * grad)) / denom if denom > 0 else 0.0
        u, sv, vt = np.linalg.svd(x + eta * grad, full_matrices=False)
        x = (u[:, :r] * sv[:r]) @ vt[:r]
    if refine_iters <= 0:
        x = unvec(stacked.T @ y, m, n)
    u, sv, _ = np.linalg.svd(x, full_matrices=False)
    return u[:, :r] * np.sqrt(np.maximum(sv[:r], np.finfo(float).eps))


def mf_solve(amap: AffineMap, y, opts: SolverOptions):
    """Rank-r factorization fit min_{B,R} ||y - A(B R^T)||_2^2 by alternating LS.

    Each half step fixes one factor and solves the induced linear least-squares
    problem exactly, so the residual is nonincreasing (asserted).  Stops on
    relative iterate change below opts.tol or at opts.max_iters.
    """
    if opts.rank is None or opts.rank < 1:
        raise ValueError("mf_solve requires a positive target rank in opts.rank")
    r = opts.rank
    y = np.asarray(y, dtype=float)
    m, n = amap.m_rows, amap.n_cols
    s = amap.stacked
    p = s.shape[0]
    dof = r * (m + n - r)
    if p < dof:
        warnings.warn(f"p={p} observations below the rank-{r} degree count {dof}", stacklevel=2)

    b = _refined_spectral_init(s, y, m, n, r, opts.init_refine)

    # half-step designs: columns of S are vec-ordered (row index fast), so the
    # two reshapes below give S with its column blocks exposed per matrix
    # column (s_cols) and per matrix row (s_rows)
    s_cols = s.reshape(p * n, m)
    s_rows = np.ascontiguousarray(s.reshape(p, n, m).transpose(0, 2, 1)).reshape(p * m, n)
    res_prev = float(y @ y)

    x = np.zeros((m, n))
    for k in range(opts.max_iters):
        # fix B, solve for R: design column (j, l) is sum_i S[:, (j,i)] B[i,l]
        d1 = (s_cols @ b).reshape(p, n * r)
        rt_vec = _half_step(d1.T @ d1, d1.T @ y, k)
        rmat = rt_vec.reshape(n, r)

        # fix R, solve for vec(B): design column (l, i) is sum_j S[:, (j,i)] R[j,l]
        d2 = np.ascontiguousarray((s_rows @ rmat).reshape(p, m, r).transpose(0, 2, 1)).reshape(p, r * m)
        b_vec = _half_step(d2.T @ d2, d2.T @ y, k)
        b = b_vec.reshape(r, m).T

        resid = y - d2 @ b_vec
        res = float(resid @ resid)
        if res > res_prev + MONOTONE_SLACK * (1.0 + abs(res_prev)):
            raise RuntimeError(f"factorization residual increased at iteration {k}")
        res_prev = res

        x_new = b @ rmat.T
        rel = np.linalg.norm(x_new - x) / max(1e-30, np.linalg.norm(x_new))
        x = x_new
        if rel < opts.tol:
            break
    return x
