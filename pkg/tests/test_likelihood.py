import math

import numpy as np
import pytest

from kis.features import phi2_design
from kis.kernels import PriorDiag, kernel_matrix
from kis.likelihood import (
    Dataset,
    FactorizationError,
    JITTER_LADDER,
    benchmark_marginal,
    chol_with_jitter,
    fit_loglog_slope,
    gp_log_marginal,
    naive_log_marginal,
    woodbury_log_marginal,
)
from kis.skim import to_kernel

from oracles import random_two_way_spec, random_valid_state


def test_gp_single_observation_standard_normal():
    res = gp_log_marginal(np.array([[0.0]]), 1.0, np.array([0.0]))
    assert res.log_density == pytest.approx(-0.9189385, abs=1e-7)
    assert res.cholesky_ok and res.jitter_used == 0.0


def test_gp_two_iid_standard_normals():
    res = gp_log_marginal(np.zeros((2, 2)), 1.0, np.array([1.0, 0.0]))
    assert res.log_density == pytest.approx(-0.5 - math.log(2 * math.pi), abs=1e-7)
    assert res.log_density == pytest.approx(-2.3378771, abs=1e-6)


def test_gp_rejects_bad_inputs():
    with pytest.raises(ValueError, match="symmetric"):
        gp_log_marginal(np.array([[0.0, 1.0], [0.0, 0.0]]), 1.0, np.zeros(2))
    with pytest.raises(ValueError, match="sigma2"):
        gp_log_marginal(np.zeros((1, 1)), 0.0, np.zeros(1))
    with pytest.raises(ValueError, match="2 x 2"):
        gp_log_marginal(np.zeros((3, 3)), 1.0, np.zeros(2))


def test_gp_matches_naive_on_skim_kernel():
    rng = np.random.default_rng(0)
    state = random_valid_state(rng, p=4, N=8)
    X = rng.normal(size=(8, 4))
    Y = rng.normal(size=8)
    ds = Dataset(X, Y)
    K = kernel_matrix(to_kernel(state), X)
    a = gp_log_marginal(K, state.sigma2, Y).log_density
    b = naive_log_marginal(state, ds, state.sigma2).log_density
    assert a == pytest.approx(b, rel=1e-8)


def test_naive_single_point_matches_gp():
    p = 1
    diag = PriorDiag.build(p, intercept=1.0, mains=1.0, pairs=1.0, quads=1.0)
    ds = Dataset(np.zeros((1, 1)), np.zeros(1))
    # k(0, 0) = intercept variance
    a = gp_log_marginal(np.array([[diag.intercept]]), 1.0, ds.Y).log_density
    b = naive_log_marginal(diag, ds, 1.0).log_density
    assert a == pytest.approx(b, rel=1e-10)


def test_three_way_equivalence_sweep():
    rng = np.random.default_rng(1)
    for trial in range(50):
        p = int(rng.integers(1, 7))
        n = int(rng.integers(1, 11))
        X = rng.normal(0.0, rng.uniform(0.3, 2.0), size=(n, p))
        Y = rng.normal(size=n)
        ds = Dataset(X, Y)
        sigma2 = float(rng.uniform(0.2, 4.0))
        if trial % 2 == 0:
            prior = random_two_way_spec(rng, p=p, positive=True)
        else:
            prior = random_valid_state(rng, p=p, N=n, s=max(1, p - 1) if p > 1 else None) \
                if p > 1 else random_two_way_spec(rng, p=p, positive=True)
        K = kernel_matrix(
            prior.kernel() if hasattr(prior, "kernel") else to_kernel(prior), X
        )
        a = gp_log_marginal(K, sigma2, Y).log_density
        b = naive_log_marginal(prior, ds, sigma2).log_density
        c = woodbury_log_marginal(prior, ds, sigma2).log_density
        assert b == pytest.approx(a, rel=1e-8, abs=1e-8)
        assert c == pytest.approx(a, rel=1e-8, abs=1e-8)


def test_woodbury_identity_on_random_instance():
    rng = np.random.default_rng(2)
    p, n = 3, 5
    spec = random_two_way_spec(rng, p=p, positive=True)
    X = rng.normal(size=(n, p))
    sigma2 = 0.7
    Phi = phi2_design(X)
    s = spec.induced_diag().variances
    lhs = np.eye(n) + (Phi * s) @ Phi.T / sigma2
    K = kernel_matrix(spec.kernel(), X)
    np.testing.assert_allclose(lhs, np.eye(n) + K / sigma2, rtol=1e-9)


def test_woodbury_zero_response_leaves_determinant_terms():
    rng = np.random.default_rng(3)
    p, n = 2, 4
    spec = random_two_way_spec(rng, p=p, positive=True)
    X = rng.normal(size=(n, p))
    ds = Dataset(X, np.zeros(n))
    sigma2 = 1.3
    got = woodbury_log_marginal(spec, ds, sigma2).log_density
    K = kernel_matrix(spec.kernel(), X)
    sign, logdet = np.linalg.slogdet(K + sigma2 * np.eye(n))
    assert sign > 0
    assert got == pytest.approx(-0.5 * logdet - 0.5 * n * math.log(2 * math.pi), rel=1e-10)


def test_gp_permutation_invariance():
    rng = np.random.default_rng(4)
    n = 6
    M = rng.normal(size=(n, n))
    K = M @ M.T
    Y = rng.normal(size=n)
    perm = rng.permutation(n)
    a = gp_log_marginal(K, 0.5, Y).log_density
    b = gp_log_marginal(K[np.ix_(perm, perm)], 0.5, Y[perm]).log_density
    assert a == pytest.approx(b, rel=1e-12)


def test_logdet_eigenvalue_identity():
    rng = np.random.default_rng(5)
    n = 5
    M = rng.normal(size=(n, n))
    K = M @ M.T
    sigma2 = 0.9
    eig = np.linalg.eigvalsh(K)
    sign, logdet = np.linalg.slogdet(K + sigma2 * np.eye(n))
    assert logdet == pytest.approx(float(np.sum(np.log(eig + sigma2))), rel=1e-10)


def test_naive_rejects_zero_prior_variance():
    diag = PriorDiag.build(2, intercept=0.0, mains=1.0, pairs=1.0, quads=1.0)
    ds = Dataset(np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(ValueError, match="positive prior variances"):
        naive_log_marginal(diag, ds, 1.0)
    with pytest.raises(ValueError, match="positive prior variances"):
        woodbury_log_marginal(diag, ds, 1.0)


def test_feature_cap_guard():
    rng = np.random.default_rng(6)
    p = 40  # phi2_dim = 861
    state = random_valid_state(rng, p=p, N=4, s=5)
    ds = Dataset(rng.normal(size=(4, p)), rng.normal(size=4))
    with pytest.raises(ValueError, match="cap"):
        naive_log_marginal(state, ds, 1.0, feature_cap=500)
    assert np.isfinite(naive_log_marginal(state, ds, 1.0, feature_cap=1000).log_density)


def test_jitter_ladder_recovers_semidefinite_matrix():
    # rank-1 PSD matrix: plain Cholesky fails, a ladder rung succeeds
    v = np.array([1.0, 1.0, 1.0])
    A = np.outer(v, v)
    L, jitter = chol_with_jitter(A)
    assert jitter > 0.0
    assert jitter in {d * float(np.mean(np.diag(A))) for d in JITTER_LADDER}
    np.testing.assert_allclose(L @ L.T, A, atol=1e-5)


def test_jitter_ladder_exhaustion_raises():
    with pytest.raises(FactorizationError) as err:
        chol_with_jitter(-np.eye(3))
    assert err.value.ladder == JITTER_LADDER


def test_gp_records_jitter():
    v = np.ones(4)
    res = gp_log_marginal(np.outer(v, v) * 1e8, 1e-6, np.zeros(4))
    assert np.isfinite(res.log_density)


def test_dataset_validation():
    with pytest.raises(ValueError, match="finite"):
        Dataset(np.array([[np.nan]]), np.array([1.0]))
    with pytest.raises(ValueError, match="length"):
        Dataset(np.ones((3, 2)), np.ones(2))
    ds = Dataset(np.ones((3, 2)), np.ones(3))
    assert ds.n == 3 and ds.p == 2
    assert not ds.standardized.any()


def test_benchmark_smoke_and_skip_markers():
    cells = benchmark_marginal("kis", N=10, p_grid=[4, 8], repetitions=2, seed=0)
    assert len(cells) == 4
    assert all(np.isfinite(c.seconds) for c in cells)
    assert any(c.bytes_peak_estimate > 0 for c in cells)
    # naive skips cells beyond its feature cap
    cells = benchmark_marginal("naive", N=5, p_grid=[4, 500], repetitions=1, seed=0)
    assert not cells[0].skipped
    assert cells[-1].skipped
    with pytest.raises(ValueError, match="unknown method"):
        benchmark_marginal("bogus", N=5, p_grid=[4], repetitions=1)


def test_kernel_path_time_grows_with_n():
    # doubling N multiplies the O(N^2 p + N^3) cost by roughly 4-8;
    # two interleaved measurement rounds blunt transient host noise
    times = {300: [], 600: []}
    for _ in range(2):
        for n in times:
            cells = benchmark_marginal("kis", N=n, p_grid=[50], repetitions=7, seed=3)
            times[n] += [c.seconds for c in cells]
    ratio = float(np.median(times[600])) / float(np.median(times[300]))
    assert 3.5 <= ratio <= 9.0, ratio


def test_fit_loglog_slope_recovers_power_law():
    cells = benchmark_marginal("kis", N=8, p_grid=[4, 8, 16], repetitions=1, seed=0)
    # fabricate an exact quadratic law to check the fit itself
    from kis.likelihood import BenchmarkCell

    fake = [BenchmarkCell("kis", 8, p, 0, 1e-3 * p**2, 0) for p in (10, 20, 40)]
    assert fit_loglog_slope(fake) == pytest.approx(2.0, abs=1e-9)
    with pytest.raises(ValueError, match="two feasible"):
        fit_loglog_slope([BenchmarkCell("kis", 8, 10, 0, float("nan"), 0)])
