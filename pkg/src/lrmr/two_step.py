"""Two-step reconstruction: learn the column subspace from sampled columns, then
measure the remaining coefficients through a subspace-adapted design.

Stage one spends p1 = m*M scalar observations sampling m columns of the target;
the top singular vectors of the noisy sample estimate the column subspace (and,
when the rank is unknown, a singular-value threshold estimates it).  Stage two
measures the unsampled columns with the power-optimal design built from the
estimated basis, which reduces the coefficient estimate to a scaled reshape of
the observations.  Oracle (benchmark) mode additionally evaluates the realized
error, the subspace perturbation bound, and the total error bound.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from ._util import fix_signs, unvec, vec
from .affine_map import AffineMap, NoiseModel
from .estimator import GlsProblem, gls_estimate
from .map_design import SubspaceBasis, lift_design, restrict_to_subspace

__all__ = [
    "ColumnSample",
    "SubspaceEstimate",
    "TwoStepConfig",
    "TwoStepResult",
    "sample_columns",
    "estimate_subspace",
    "estimate_rank",
    "coefficient_q1",
    "design_second_map",
    "coefficient_q2",
    "assemble",
    "subspace_distance",
    "wedin_bound",
    "error_bound",
    "first_stage_map",
    "designed_full_map",
    "run",
]


@dataclass(frozen=True)
class ColumnSample:
    """Stage-one observations: m sampled columns plus scaled noise.

    y1 = L[:, z1] + scale * w1 with scale = sqrt(m*M/P1); w1 is retained only
    in benchmark mode where the realized noise is needed for the bounds.
    """

    z1: np.ndarray  # sampled column indices, sampling order
    y1: np.ndarray  # M x m observed matrix
    scale: float
    w1: np.ndarray | None = None

    def __post_init__(self):
        z1 = np.asarray(self.z1, dtype=int)
        object.__setattr__(self, "z1", z1)
        if z1.size != np.unique(z1).size:
            raise ValueError("sampled column indices must be distinct")
        if self.y1.shape[1] != z1.size:
            raise ValueError("y1 column count must match the number of sampled indices")


@dataclass(frozen=True)
class SubspaceEstimate:
    """Estimated column-subspace basis with the singular values it came from."""

    u_hat: np.ndarray  # M x r_hat, semi-unitary
    r_hat: int
    singvals: np.ndarray  # all singular values of y1, descending

    def __post_init__(self):
        u = np.asarray(self.u_hat, dtype=float)
        s = np.asarray(self.singvals, dtype=float)
        object.__setattr__(self, "u_hat", u)
        object.__setattr__(self, "singvals", s)
        if u.shape[1] != self.r_hat:
            raise ValueError("basis width must equal r_hat")
        if self.r_hat > 0 and np.max(np.abs(u.T @ u - np.eye(self.r_hat))) > 1e-8:
            raise ValueError("estimated basis is not semi-unitary")
        if np.any(np.diff(s) > 1e-12) or np.any(s < 0):
            raise ValueError("singular values must be nonnegative and nonincreasing")


@dataclass(frozen=True)
class TwoStepConfig:
    """Per-run knobs: stage-one column count, power split, noise, rank handling.

    rank=None estimates the rank from the stage-one singular values.
    """

    m: int
    p1_power: float
    p2_power: float
    sigma2: float
    rank: int | None = None

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be positive")
        if self.p1_power <= 0 or self.p2_power <= 0:
            raise ValueError("both stage powers must be positive")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        if self.rank is not None and self.rank < 1:
            raise ValueError("supplied rank must be positive")


@dataclass(frozen=True)
class TwoStepResult:
    l_hat: np.ndarray
    q1_hat: np.ndarray
    q2_hat: np.ndarray
    perm: np.ndarray  # original column index of each [Q1, Q2] column
    r_hat: int
    sample_count: int
    realized_error: float | None = None  # ||L_hat - L||_F, oracle mode
    wedin_bound: float | None = None
    total_bound: float | None = None
    eta: float | None = None  # realized subspace distance, oracle mode
    gap: float | None = None  # singular value gap delta used in the bounds
    rank_collapsed: bool = False  # r_hat = 0: stage two skipped, estimate is zero


def sample_columns(l_mat, m, p1_power, sigma2, rng, keep_noise=True):
    """Observe m distinct uniformly chosen columns under the stage-one power budget."""
    l_mat = np.asarray(l_mat, dtype=float)
    big_m, big_n = l_mat.shape
    if m > big_n:
        raise ValueError(f"cannot sample m={m} of {big_n} columns")
    if p1_power <= 0:
        raise ValueError("stage-one power must be positive")
    z1 = rng.choice(big_n, size=m, replace=False)
    scale = float(np.sqrt(m * big_m / p1_power))
    w1 = np.sqrt(sigma2) * rng.standard_normal((big_m, m))
    y1 = l_mat[:, z1] + scale * w1
    return ColumnSample(z1=z1, y1=y1, scale=scale, w1=w1 if keep_noise else None)


def estimate_subspace(y1, r):
    """Top-r left singular vectors of the stage-one observation (sign-fixed)."""
    y1 = np.asarray(y1, dtype=float)
    if not 1 <= r <= min(y1.shape):
        raise ValueError(f"rank {r} outside 1..min{y1.shape}")
    u, s, _ = np.linalg.svd(y1, full_matrices=False)
    return SubspaceEstimate(u_hat=fix_signs(u[:, :r]), r_hat=r, singvals=s)


def estimate_rank(singvals, sigma, m, big_m):
    """Count singular values above the pure-noise support edge.

    The threshold sigma*sqrt(M)*(1+sqrt(m/M)) is the upper edge of the singular
    value distribution of an M x m noise matrix with entry std sigma; anything
    above it is attributed to signal.  With sigma = 0 the threshold degenerates,
    so the count falls back to the numerical rank.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    s = np.asarray(singvals, dtype=float)
    if np.any(np.diff(s) > 1e-12):
        raise ValueError("singular values must be sorted descending")
    tau = sigma * np.sqrt(big_m) * (1.0 + np.sqrt(m / big_m))
    if tau == 0.0:
        if s.size == 0 or s[0] == 0.0:
            return 0
        tau = max(big_m, m) * np.finfo(float).eps * s[0]
    return int(np.sum(s >= tau))


def coefficient_q1(u_hat, y1):
    """Stage-one coefficients: Q1 = U^T Y1."""
    u_hat = np.asarray(u_hat, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    if u_hat.shape[0] != y1.shape[0]:
        raise ValueError("basis and observation row counts differ")
    return u_hat.T @ y1


def design_second_map(u_hat, p2_power, big_n, m, r_hat):
    """Power-optimal stage-two operator over the unsampled M x (N-m) block.

    Each of the r_hat*(N-m) rows measures one basis-direction coefficient of
    one unsampled column: the scaled identity core lifted through the basis.
    With r_hat = 0 there is nothing to measure and an empty map is returned.
    """
    u_hat = np.asarray(u_hat, dtype=float)
    big_m = u_hat.shape[0]
    n2 = big_n - m
    if n2 < 0:
        raise ValueError("m exceeds the total column count")
    if p2_power <= 0:
        raise ValueError("stage-two power must be positive")
    p2 = r_hat * n2
    if p2 == 0:
        return AffineMap(p=0, m_rows=big_m, n_cols=n2, stacked=np.zeros((0, big_m * n2)), power=0.0)
    core = np.sqrt(p2_power / p2) * np.eye(p2)
    stacked = lift_design(core, SubspaceBasis(basis=u_hat, dim=r_hat))
    return AffineMap(p=p2, m_rows=big_m, n_cols=n2, stacked=stacked, power=float(p2_power))


def coefficient_q2(u_hat, map2: AffineMap, y2, noise: NoiseModel):
    """Stage-two coefficients via the efficient estimator.

    For the optimal stage-two design the restricted operator is a scaled
    identity, so the estimate reduces to a scaled reshape of y2; the general
    GLS path is used so the reduction is a property, not an assumption.
    """
    u_hat = np.asarray(u_hat, dtype=float)
    r_hat = u_hat.shape[1]
    n2 = map2.n_cols
    a2 = restrict_to_subspace(map2.stacked, SubspaceBasis(basis=u_hat, dim=r_hat))
    q2v = gls_estimate(GlsProblem(a=a2, c=noise, y=np.asarray(y2, dtype=float)))
    return unvec(q2v, r_hat, n2)


def assemble(u_hat, q1_hat, q2_hat, perm):
    """Place the reconstructed columns back at their original indices."""
    u_hat = np.asarray(u_hat, dtype=float)
    q = np.hstack([np.asarray(q1_hat, dtype=float), np.asarray(q2_hat, dtype=float)])
    perm = np.asarray(perm, dtype=int)
    n = q.shape[1]
    if perm.size != n or np.any(np.sort(perm) != np.arange(n)):
        raise ValueError("perm must be a permutation of 0..N-1 covering all columns")
    l_hat = np.empty((u_hat.shape[0], n))
    l_hat[:, perm] = u_hat @ q
    return l_hat


def subspace_distance(u_hat, u_true):
    """Largest principal-angle sine between two column subspaces (0 to 1)."""
    u_hat = np.asarray(u_hat, dtype=float)
    u_true = np.asarray(u_true, dtype=float)
    if u_hat.shape[0] != u_true.shape[0]:
        raise ValueError("bases must live in the same ambient dimension")
    resid = u_true - u_hat @ (u_hat.T @ u_true)
    if resid.size == 0:
        return 0.0
    return float(np.linalg.norm(resid, 2))


def wedin_bound(w1, gap, m, big_m, p1_power):
    """Perturbation bound on the subspace distance: sqrt(mM/P1) ||W1||_2 / delta.

    A closed gap (delta <= 0) leaves the bound undefined; NaN is returned with
    a diagnostic warning.
    """
    if gap <= 0:
        warnings.warn(f"singular value gap {gap:.3g} <= 0; Wedin bound undefined", stacklevel=2)
        return float("nan")
    w1 = np.asarray(w1, dtype=float)
    return float(np.sqrt(m * big_m / p1_power) * np.linalg.norm(w1, 2) / gap)


def error_bound(w1, w2, l_mat, gap, m, big_m, r, big_n, p1_power, p2_power):
    """Deterministic bound on ||L - L_hat||_F given the realized noise matrices."""
    if gap <= 0:
        warnings.warn(f"singular value gap {gap:.3g} <= 0; error bound undefined", stacklevel=2)
        return float("nan")
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    l_mat = np.asarray(l_mat, dtype=float)
    stage1 = np.sqrt(m * big_m / p1_power) * (
        np.linalg.norm(w1) + np.linalg.norm(w1, 2) * np.linalg.norm(l_mat) / gap
    )
    stage2 = np.sqrt(r * (big_n - m) / p2_power) * np.linalg.norm(w2)
    return float(stage1 + stage2)


def first_stage_map(z1, big_m, big_n, p1_power):
    """Stacked operator equivalent of stage-one column sampling.

    One row per sampled entry: a scaled single-entry selector, amplitude
    sqrt(P1/(mM)) so the stage consumes exactly its power budget.
    """
    z1 = np.asarray(z1, dtype=int)
    m = z1.size
    amp = np.sqrt(p1_power / (m * big_m))
    stacked = np.zeros((m * big_m, big_m * big_n))
    rows = np.arange(m * big_m)
    cols = np.repeat(z1 * big_m, big_m) + np.tile(np.arange(big_m), m)
    stacked[rows, cols] = amp
    return AffineMap(p=m * big_m, m_rows=big_m, n_cols=big_n, stacked=stacked, power=float(p1_power))


def designed_full_map(z1, u_hat, p1_power, p2_power, big_n):
    """Full p x (M*N) operator of the two-step scheme: selector rows for the
    sampled columns stacked with the lifted stage-two rows embedded at the
    unsampled column blocks."""
    z1 = np.asarray(z1, dtype=int)
    u_hat = np.asarray(u_hat, dtype=float)
    big_m, r_hat = u_hat.shape
    m = z1.size
    z2 = np.setdiff1d(np.arange(big_n), z1)
    stage1 = first_stage_map(z1, big_m, big_n, p1_power)
    map2 = design_second_map(u_hat, p2_power, big_n, m, r_hat)
    p2 = map2.p
    embedded = np.zeros((p2, big_m * big_n))
    for j, col in enumerate(z2):
        embedded[:, col * big_m : (col + 1) * big_m] = map2.stacked[:, j * big_m : (j + 1) * big_m]
    stacked = np.vstack([stage1.stacked, embedded])
    return AffineMap(
        p=stage1.p + p2,
        m_rows=big_m,
        n_cols=big_n,
        stacked=stacked,
        power=float(p1_power + p2_power),
    )


def run(l_mat, config: TwoStepConfig, rng, oracle=True):
    """Execute the full two-step pipeline on a target matrix.

    Stage one samples columns and learns the subspace (estimating the rank when
    none is supplied); stage two designs the optimal map for the remaining
    columns, observes through it, and estimates the coefficients; the sampled
    and reconstructed columns are then reassembled in the original order.  In
    oracle mode the realized error, subspace distance, and both bounds are
    evaluated against the true matrix.
    """
    l_mat = np.asarray(l_mat, dtype=float)
    big_m, big_n = l_mat.shape
    if config.m > big_n:
        raise ValueError("config.m exceeds the column count")

    sample = sample_columns(l_mat, config.m, config.p1_power, config.sigma2, rng)
    singvals = np.linalg.svd(sample.y1, compute_uv=False)
    if config.rank is None:
        r_hat = estimate_rank(singvals, np.sqrt(config.sigma2), config.m, big_m)
        r_hat = min(r_hat, min(sample.y1.shape))
    else:
        r_hat = config.rank
    z2 = np.setdiff1d(np.arange(big_n), sample.z1)
    perm = np.concatenate([sample.z1, z2])
    n2 = big_n - config.m

    if r_hat == 0:
        l_hat = np.zeros_like(l_mat)
        realized = float(np.linalg.norm(l_hat - l_mat)) if oracle else None
        return TwoStepResult(
            l_hat=l_hat,
            q1_hat=np.zeros((0, config.m)),
            q2_hat=np.zeros((0, n2)),
            perm=perm,
            r_hat=0,
            sample_count=config.m * big_m,
            realized_error=realized,
            rank_collapsed=True,
        )

    est = estimate_subspace(sample.y1, r_hat)
    q1 = coefficient_q1(est.u_hat, sample.y1)
    map2 = design_second_map(est.u_hat, config.p2_power, big_n, config.m, r_hat)
    if map2.p > 0:
        noise2 = NoiseModel.iid(config.sigma2, map2.p)
        n2_draw = noise2.sample(rng)
        y2 = map2.stacked @ vec(l_mat[:, z2]) + n2_draw
        q2 = coefficient_q2(est.u_hat, map2, y2, noise2)
    else:
        n2_draw = np.zeros(0)
        q2 = np.zeros((r_hat, n2))
    l_hat = assemble(est.u_hat, q1, q2, perm)
    sample_count = config.m * big_m + r_hat * n2

    realized = wedin = total = eta = gap = None
    if oracle:
        realized = float(np.linalg.norm(l_hat - l_mat))
        u_l, s_l = np.linalg.svd(l_mat, full_matrices=False)[:2]
        r_true = int(np.sum(s_l > 1e-9 * s_l[0])) if s_l[0] > 0 else 0
        if r_true > 0:
            # gap between the r-th singular value of the sampled block and the
            # (r+1)-th of its noisy observation; zero lam_r when the sample
            # fails to span (the bound is then reported undefined)
            s_l1 = np.linalg.svd(l_mat[:, sample.z1], compute_uv=False)
            lam_r = float(s_l1[r_true - 1]) if r_true <= s_l1.size else 0.0
            lam_next = float(singvals[r_true]) if r_true < singvals.size else 0.0
            gap = lam_r - lam_next
            eta = subspace_distance(est.u_hat, u_l[:, :r_true])
            w2 = unvec(n2_draw, r_hat, n2)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                wedin = wedin_bound(sample.w1, gap, config.m, big_m, config.p1_power)
                total = error_bound(
                    sample.w1, w2, l_mat, gap, config.m, big_m, r_hat, big_n,
                    config.p1_power, config.p2_power,
                )

    return TwoStepResult(
        l_hat=l_hat,
        q1_hat=q1,
        q2_hat=q2,
        perm=perm,
        r_hat=r_hat,
        sample_count=sample_count,
        realized_error=realized,
        wedin_bound=wedin,
        total_bound=total,
        eta=eta,
        gap=gap,
    )
