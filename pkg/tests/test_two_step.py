import numpy as np
import pytest

from lrmr._util import spawn_rng, unvec, vec
from lrmr.affine_map import NoiseModel
from lrmr.estimator import nmse
from lrmr.map_design import SubspaceBasis, restrict_to_subspace
from lrmr.two_step import (
    TwoStepConfig,
    assemble,
    coefficient_q1,
    coefficient_q2,
    design_second_map,
    designed_full_map,
    error_bound,
    estimate_rank,
    estimate_subspace,
    first_stage_map,
    run,
    sample_columns,
    subspace_distance,
    wedin_bound,
)

M, N, R = 20, 50, 6


def low_rank(rng, m=M, n=N, r=R):
    return rng.standard_normal((m, r)) @ rng.standard_normal((n, r)).T


def test_sample_columns_noiseless_reads_columns():
    rng = spawn_rng(0)
    l_mat = low_rank(rng)
    sample = sample_columns(l_mat, 7, 1000.0, 0.0, rng)
    assert np.array_equal(sample.y1, l_mat[:, sample.z1])


def test_sample_columns_all_is_permutation():
    rng = spawn_rng(1)
    l_mat = low_rank(rng)
    sample = sample_columns(l_mat, N, 1000.0, 0.0, rng)
    assert sorted(sample.z1.tolist()) == list(range(N))


def test_sample_columns_noise_scale():
    # pooled entrywise std within 3% of sqrt(m M / P1) * sigma
    rng = spawn_rng(2)
    l_mat = np.zeros((M, N))
    m, p1, sigma2 = 9, 1000.0, 1.0
    target = np.sqrt(m * M / p1)
    acc = 0.0
    count = 0
    resamples = 600  # 600 * 180 entries ~ 1e5 noise draws
    for _ in range(resamples):
        sample = sample_columns(l_mat, m, p1, sigma2, rng)
        acc += float(np.sum(sample.y1**2))
        count += sample.y1.size
    assert np.sqrt(acc / count) == pytest.approx(target, rel=0.03)


def test_sample_columns_rejects_oversampling():
    with pytest.raises(ValueError):
        sample_columns(np.zeros((3, 4)), 5, 1.0, 0.0, spawn_rng(3))


def test_estimate_subspace_exact_on_noiseless():
    rng = spawn_rng(4)
    l_mat = low_rank(rng)
    sample = sample_columns(l_mat, 9, 1000.0, 0.0, rng)
    est = estimate_subspace(sample.y1, R)
    u_true = np.linalg.svd(l_mat, full_matrices=False)[0][:, :R]
    assert subspace_distance(est.u_hat, u_true) < 1e-8


def test_estimate_subspace_identity_observation():
    est = estimate_subspace(np.eye(M), M)
    assert np.max(np.abs(est.u_hat.T @ est.u_hat - np.eye(M))) < 1e-12


def test_estimate_subspace_rejects_excess_rank():
    with pytest.raises(ValueError):
        estimate_subspace(np.zeros((4, 3)), 4)


def test_estimate_rank_noiseless_exact():
    rng = spawn_rng(5)
    l1 = low_rank(rng, M, 9)
    s = np.linalg.svd(l1, compute_uv=False)
    assert estimate_rank(s, 0.0, 9, M) == R


def test_estimate_rank_zero_matrix():
    s = np.zeros(5)
    assert estimate_rank(s, 0.0, 5, M) == 0
    assert estimate_rank(s, 1.0, 5, M) == 0


def test_estimate_rank_planted_spectrum():
    # singular values 10x above the threshold recover the rank on most draws
    m, sigma = 9, 0.1
    tau = sigma * np.sqrt(M) * (1.0 + np.sqrt(m / M))
    hits = 0
    for t in range(100):
        rng = spawn_rng(6, t)
        u, _ = np.linalg.qr(rng.standard_normal((M, R)))
        v, _ = np.linalg.qr(rng.standard_normal((m, R)))
        planted = u @ np.diag(10.0 * tau * (1.0 + np.arange(R))) @ v.T
        y1 = planted + sigma * rng.standard_normal((M, m))
        s = np.linalg.svd(y1, compute_uv=False)
        hits += estimate_rank(s, sigma, m, M) == R
    assert hits >= 99


def test_pure_noise_rank_mostly_zero():
    # through the sampling pipeline at the default power split
    zeros = np.zeros((M, N))
    hits = 0
    for t in range(200):
        rng = spawn_rng(7, t)
        out = run(zeros + 0.0, TwoStepConfig(m=9, p1_power=1000.0, p2_power=1000.0,
                                             sigma2=0.5, rank=None), rng, oracle=False)
        hits += out.r_hat == 0
    assert hits >= 190


def test_coefficient_q1_matches_direct_product():
    rng = spawn_rng(8)
    u, _ = np.linalg.qr(rng.standard_normal((M, R)))
    y1 = rng.standard_normal((M, 9))
    assert np.max(np.abs(coefficient_q1(u, y1) - u.T @ y1)) < 1e-12
    ortho = y1 - u @ (u.T @ y1)
    assert np.max(np.abs(coefficient_q1(u, ortho))) < 1e-12


def test_design_second_map_hand_expansion():
    # one retained direction, one remaining column: y2 = 2 * L2[0, 0] + n
    u_hat = np.array([[1.0], [0.0]])
    amap = design_second_map(u_hat, 4.0, big_n=2, m=1, r_hat=1)
    assert amap.p == 1
    assert np.allclose(amap.stacked, [[2.0, 0.0]])


def test_design_second_map_power_and_core():
    rng = spawn_rng(9)
    u, _ = np.linalg.qr(rng.standard_normal((M, R)))
    amap = design_second_map(u, 1000.0, N, 9, R)
    assert np.sum(amap.stacked**2) == pytest.approx(1000.0, abs=1e-8)
    core = restrict_to_subspace(amap.stacked, SubspaceBasis(basis=u, dim=R))
    scale = np.sqrt(1000.0 / (R * (N - 9)))
    assert np.max(np.abs(core - scale * np.eye(R * (N - 9)))) < 1e-10


def test_design_second_map_empty_when_rank_zero():
    amap = design_second_map(np.zeros((M, 0)), 10.0, N, 9, 0)
    assert amap.p == 0


def test_coefficient_q2_reduces_to_scaled_reshape():
    rng = spawn_rng(10)
    u, _ = np.linalg.qr(rng.standard_normal((M, R)))
    n2 = N - 9
    amap = design_second_map(u, 1000.0, N, 9, R)
    l2 = low_rank(rng, M, n2)
    noise = NoiseModel.iid(0.04, amap.p)
    draw = noise.sample(rng)
    y2 = amap.stacked @ vec(l2) + draw
    q2 = coefficient_q2(u, amap, y2, noise)
    scale = np.sqrt(R * (N - 9) / 1000.0)
    direct = unvec(y2, R, n2) / np.sqrt(1000.0 / (R * (N - 9)))
    assert np.max(np.abs(q2 - direct)) < 1e-10
    assert np.max(np.abs(q2 - (u.T @ l2 + scale * unvec(draw, R, n2)))) < 1e-10


def test_coefficient_q2_noiseless():
    rng = spawn_rng(11)
    u, _ = np.linalg.qr(rng.standard_normal((M, R)))
    n2 = N - 9
    amap = design_second_map(u, 500.0, N, 9, R)
    l2 = low_rank(rng, M, n2)
    y2 = amap.stacked @ vec(l2)
    q2 = coefficient_q2(u, amap, y2, NoiseModel.iid(0.0, amap.p))
    assert np.max(np.abs(q2 - u.T @ l2)) < 1e-10


def test_coefficient_q2_noise_variance():
    # entrywise noise variance ~ (r (N - m) / P2) sigma^2 over 1e5 draws;
    # the estimator equals the scaled reshape of y2 (pinned at 1e-10 above),
    # so the Monte-Carlo sweep runs through that identity, anchored by one
    # estimator call per batch
    rng = spawn_rng(12)
    u, _ = np.linalg.qr(rng.standard_normal((4, 2)))
    big_n, m = 4, 2
    amap = design_second_map(u, 8.0, big_n, m, 2)
    sigma2 = 0.5
    noise = NoiseModel.iid(sigma2, amap.p)
    l2 = np.zeros((4, big_n - m))
    base = amap.stacked @ vec(l2)
    amp = np.sqrt(8.0 / (2 * (big_n - m)))
    draws = 25_000  # 25000 * 4 entries = 1e5 scalar draws
    samples = base + np.sqrt(sigma2) * rng.standard_normal((draws, amap.p))
    anchor = coefficient_q2(u, amap, samples[0], noise)
    assert np.max(np.abs(anchor - unvec(samples[0], 2, big_n - m) / amp)) < 1e-10
    emp = float(np.mean(samples**2)) / amp**2
    expected = 2 * (big_n - m) / 8.0 * sigma2
    assert emp == pytest.approx(expected, rel=0.05)


def test_assemble_identity_permutation():
    rng = spawn_rng(13)
    u, _ = np.linalg.qr(rng.standard_normal((M, R)))
    q1 = rng.standard_normal((R, 9))
    q2 = rng.standard_normal((R, N - 9))
    l_hat = assemble(u, q1, q2, np.arange(N))
    assert np.max(np.abs(l_hat - u @ np.hstack([q1, q2]))) < 1e-12


def test_assemble_restores_sampled_columns():
    rng = spawn_rng(14)
    u, _ = np.linalg.qr(rng.standard_normal((M, R)))
    q1 = rng.standard_normal((R, 9))
    q2 = rng.standard_normal((R, N - 9))
    z1 = rng.choice(N, size=9, replace=False)
    z2 = np.setdiff1d(np.arange(N), z1)
    perm = np.concatenate([z1, z2])
    l_hat = assemble(u, q1, q2, perm)
    assert np.max(np.abs(l_hat[:, z1] - u @ q1)) < 1e-12
    assert np.max(np.abs(l_hat[:, z2] - u @ q2)) < 1e-12


def test_assemble_rejects_non_permutation():
    with pytest.raises(ValueError):
        assemble(np.eye(2), np.zeros((2, 1)), np.zeros((2, 1)), np.array([0, 0]))


def test_subspace_distance_limits():
    assert subspace_distance(np.eye(3)[:, :2], np.eye(3)[:, :2]) < 1e-12
    assert subspace_distance(np.eye(3)[:, :1], np.eye(3)[:, 2:]) == pytest.approx(1.0)


def test_subspace_distance_rotation_closed_form():
    for theta in (0.1, 0.4, 1.2):
        u_hat = np.array([[1.0], [0.0], [0.0]])
        u_true = np.array([[np.cos(theta)], [np.sin(theta)], [0.0]])
        assert subspace_distance(u_hat, u_true) == pytest.approx(abs(np.sin(theta)), abs=1e-10)


def test_wedin_bound_zero_noise():
    assert wedin_bound(np.zeros((4, 3)), 1.0, 3, 4, 1.0) == 0.0


def test_wedin_bound_power_scaling():
    rng = spawn_rng(15)
    w1 = rng.standard_normal((5, 4))
    b1 = wedin_bound(w1, 0.7, 4, 5, 100.0)
    b2 = wedin_bound(w1, 0.7, 4, 5, 200.0)
    assert b2 == pytest.approx(b1 / np.sqrt(2.0), rel=1e-12)


def test_wedin_bound_closed_gap_is_nan():
    with pytest.warns(UserWarning, match="gap"):
        assert np.isnan(wedin_bound(np.ones((2, 2)), 0.0, 2, 2, 1.0))


def test_error_bound_zero_noise_and_additivity():
    rng = spawn_rng(16)
    l_mat = low_rank(rng)
    w1 = rng.standard_normal((M, 9))
    w2 = rng.standard_normal((R, N - 9))
    assert error_bound(np.zeros((M, 9)), np.zeros((R, N - 9)), l_mat, 1.0, 9, M, R, N, 1e3, 1e3) == 0.0
    full = error_bound(w1, w2, l_mat, 1.0, 9, M, R, N, 1e3, 1e3)
    stage1 = error_bound(w1, np.zeros_like(w2), l_mat, 1.0, 9, M, R, N, 1e3, 1e3)
    stage2_term = np.sqrt(R * (N - 9) / 1e3) * np.linalg.norm(w2)
    assert full == pytest.approx(stage1 + stage2_term, rel=1e-12)


def test_bounds_hold_on_seeded_noisy_trials():
    # Wedin and total error bounds are deterministic given the realized noise
    violations = 0
    for t in range(100):
        rng = spawn_rng(17, t)
        l_mat = low_rank(rng)
        cfg = TwoStepConfig(m=9, p1_power=1000.0, p2_power=1000.0, sigma2=0.1, rank=R)
        out = run(l_mat, cfg, rng)
        if out.gap is None or out.gap <= 0:
            continue
        if out.eta > out.wedin_bound * (1 + 1e-9):
            violations += 1
        if out.realized_error > out.total_bound * (1 + 1e-9):
            violations += 1
    assert violations == 0


def test_run_noiseless_exact_recovery_at_dof():
    rng = spawn_rng(18)
    l_mat = low_rank(rng)
    cfg = TwoStepConfig(m=R, p1_power=1000.0, p2_power=1000.0, sigma2=0.0, rank=R)
    out = run(l_mat, cfg, rng)
    assert nmse(out.l_hat, l_mat) < 1e-16
    assert out.sample_count == (N + M - R) * R == 384


def test_run_sample_count_formula():
    rng = spawn_rng(19)
    l_mat = low_rank(rng)
    for m in (6, 9, 12, 15):
        cfg = TwoStepConfig(m=m, p1_power=1000.0, p2_power=1000.0, sigma2=0.01, rank=R)
        out = run(l_mat, cfg, spawn_rng(19, m))
        assert out.sample_count == m * M + out.r_hat * (N - m)


def test_run_nmse_improves_with_less_noise():
    sigmas = [1.0, 0.3, 0.1, 0.03, 0.01, 0.003]
    means = []
    for s2 in sigmas:
        vals = []
        for t in range(60):
            rng = spawn_rng(20, t)
            l_mat = low_rank(rng)
            cfg = TwoStepConfig(m=9, p1_power=1000.0, p2_power=1000.0, sigma2=s2, rank=R)
            out = run(l_mat, cfg, spawn_rng(21, t))
            vals.append(nmse(out.l_hat, l_mat))
        means.append(np.mean(vals))
    for noisier, cleaner in zip(means, means[1:]):
        assert cleaner <= noisier * 1.1


def test_run_zero_matrix_estimated_rank_collapses():
    out = run(np.zeros((M, N)),
              TwoStepConfig(m=9, p1_power=1000.0, p2_power=1000.0, sigma2=0.2, rank=None),
              spawn_rng(22))
    if out.rank_collapsed:
        assert np.all(out.l_hat == 0)
        assert out.sample_count == 9 * M


def test_run_rank_modes_agree_without_noise():
    rng = spawn_rng(23)
    l_mat = low_rank(rng)
    out_true = run(l_mat, TwoStepConfig(m=9, p1_power=1e3, p2_power=1e3, sigma2=0.0, rank=R),
                   spawn_rng(24))
    out_est = run(l_mat, TwoStepConfig(m=9, p1_power=1e3, p2_power=1e3, sigma2=0.0, rank=None),
                  spawn_rng(24))
    assert out_est.r_hat == R
    assert np.max(np.abs(out_true.l_hat - out_est.l_hat)) < 1e-12


def test_run_with_all_columns_sampled_skips_stage_two():
    rng = spawn_rng(27)
    l_mat = low_rank(rng)
    cfg = TwoStepConfig(m=N, p1_power=1000.0, p2_power=1000.0, sigma2=0.0, rank=R)
    out = run(l_mat, cfg, spawn_rng(28))
    assert out.q2_hat.shape == (R, 0)
    assert out.sample_count == N * M
    assert nmse(out.l_hat, l_mat) < 1e-16


def test_first_stage_map_is_scaled_selectors():
    rng = spawn_rng(25)
    l_mat = low_rank(rng)
    z1 = np.array([4, 0, 7])
    amap = first_stage_map(z1, M, N, p1_power=60.0)
    assert np.sum(amap.stacked**2) == pytest.approx(60.0)
    y = amap.stacked @ vec(l_mat)
    amp = np.sqrt(60.0 / (3 * M))
    expected = amp * l_mat[:, z1].T.reshape(-1)
    assert np.max(np.abs(y - expected)) < 1e-12


def test_designed_full_map_power_and_shape():
    rng = spawn_rng(26)
    l_mat = low_rank(rng)
    sample = sample_columns(l_mat, 9, 1000.0, 0.0, rng)
    est = estimate_subspace(sample.y1, R)
    amap = designed_full_map(sample.z1, est.u_hat, 1000.0, 1000.0, N)
    assert amap.p == 9 * M + R * (N - 9)
    assert np.sum(amap.stacked**2) == pytest.approx(2000.0, rel=1e-10)
