"""Shared linear-algebra helpers: vectorisation convention, sign fixing, RNG streams."""

import numpy as np

__all__ = ["vec", "unvec", "fix_signs", "top_left_singvecs", "spawn_rng"]


def vec(a):
    """Stack the columns of a matrix into one long vector (column-major)."""
    return np.asarray(a).ravel(order="F")


def unvec(v, rows, cols):
    """Inverse of :func:`vec`: reshape a vector back into a rows x cols matrix."""
    v = np.asarray(v)
    if v.size != rows * cols:
        raise ValueError(f"cannot unvec length-{v.size} vector into {rows}x{cols}")
    return v.reshape((rows, cols), order="F")


def fix_signs(u):
    """Flip column signs so the largest-magnitude entry of each column is positive.

    Makes SVD bases reproducible across LAPACK builds.
    """
    u = np.array(u, copy=True)
    if u.size == 0:
        return u
    idx = np.argmax(np.abs(u), axis=0)
    flip = u[idx, np.arange(u.shape[1])] < 0
    u[:, flip] *= -1.0
    return u


def top_left_singvecs(a, k):
    """Top-k left singular vectors (sign-fixed) and the full singular value list."""
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    if k > s.size:
        raise ValueError(f"requested {k} singular vectors from a matrix with at most {s.size}")
    return fix_signs(u[:, :k]), s


def spawn_rng(seed, *indices):
    """Independent counter-based RNG stream for (seed, index...) tuples.

    Philox is counter-based, so streams derived from distinct index tuples are
    statistically independent and reproducible regardless of execution order.
    """
    ss = np.random.SeedSequence((int(seed),) + tuple(int(i) for i in indices))
    return np.random.Generator(np.random.Philox(ss))
