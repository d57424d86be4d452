import json

import numpy as np
import pytest

from kis.features import effect_ids, phi2_map
from kis.kernels import (
    PROBE_ORIGIN,
    InfeasibleTargetError,
    KernelConstraintError,
    PriorDiag,
    RWaySpec,
    TwoWayKernelSpec,
    block_kernel,
    block_kernel_eval,
    cross_kernel_at_probes,
    induced_prior_diag,
    kernel_matrix,
    poly_induced_prior,
    poly_kernel,
    probe_dense,
    probe_neg,
    probe_sum,
    probe_unit,
    r_way_eval,
    skim_kernel,
    skim_kernel_eval,
    solve_spec_from_diag,
    two_way_eval,
)
from kis.trick import CombinationMatrix, ProbeSet

from oracles import (
    monomial_diag,
    monomial_quadratic_form,
    phi2_quadratic_form,
    random_two_way_spec,
    random_valid_state,
)


# -- poly_kernel -------------------------------------------------------------


def test_poly_kernel_values():
    assert poly_kernel([1, 2], [1, 0], c=1, d=2) == 4.0
    assert poly_kernel([0, 0, 0], [5, -1, 2], c=1, d=2) == 1.0
    assert poly_kernel([1, 1, 1], [2, 2, 2], c=0, d=3) == 216.0


def test_poly_kernel_length_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        poly_kernel([1, 2], [1, 2, 3], c=1, d=2)


# -- two_way_eval and the feature-map oracle ----------------------------------


def test_two_way_zero_spec_is_zero():
    p = 3
    spec = TwoWayKernelSpec(lambdas=np.zeros((0, p)), alpha=np.zeros(p),
                            psi=np.zeros(p), a_const=0.0)
    rng = np.random.default_rng(0)
    for _ in range(5):
        assert two_way_eval(spec, rng.normal(size=p), rng.normal(size=p)) == 0.0


def test_two_way_at_origin_is_m1_plus_a():
    rng = np.random.default_rng(1)
    spec = random_two_way_spec(rng, p=4, m1=3, m2=1)
    z = np.zeros(4)
    assert two_way_eval(spec, z, z) == pytest.approx(spec.m1 + spec.a_const, rel=1e-12)


def test_two_way_matches_feature_map_oracle():
    rng = np.random.default_rng(2)
    spec = random_two_way_spec(rng, p=4, m1=2, m2=1)
    S = induced_prior_diag(spec)
    for _ in range(10):
        x, y = rng.normal(size=4), rng.normal(size=4)
        k = two_way_eval(spec, x, y)
        assert k == pytest.approx(phi2_quadratic_form(S, x, y), rel=1e-10, abs=1e-10)


def test_engine_matches_two_way_eval():
    rng = np.random.default_rng(3)
    spec = random_two_way_spec(rng, p=5, m1=2, m2=3)
    k = spec.kernel()
    for _ in range(5):
        x, y = rng.normal(size=5), rng.normal(size=5)
        assert k(x, y) == pytest.approx(two_way_eval(spec, x, y), rel=1e-12)


# -- induced prior diagonal ----------------------------------------------------


def test_induced_diag_closed_form_example():
    spec = TwoWayKernelSpec(lambdas=np.ones((1, 2)), alpha=np.zeros(2),
                            psi=np.zeros(2), a_const=0.0)
    d = induced_prior_diag(spec)
    np.testing.assert_allclose(d.mains, [2.0, 2.0])
    np.testing.assert_allclose(d.pairs, [2.0])
    np.testing.assert_allclose(d.quads, [1.0, 1.0])
    assert d.intercept == 1.0


def test_induced_diag_all_zero_spec():
    p = 3
    spec = TwoWayKernelSpec(lambdas=np.zeros((0, p)), alpha=np.zeros(p),
                            psi=np.zeros(p), a_const=0.0)
    assert np.all(induced_prior_diag(spec).variances == 0.0)


def test_induced_diag_unit_probe_reconstruction():
    """Every variance recovered from kernel evaluations at unit probes."""
    rng = np.random.default_rng(4)
    p = 5
    spec = random_two_way_spec(rng, p=p, m1=2, m2=2)
    diag = induced_prior_diag(spec)
    effects = effect_ids(p)
    probes = ProbeSet.for_subset(range(1, p + 1))
    comb = CombinationMatrix.build(effects, probes)
    G = spec.kernel().probe_gram(probes.probes)
    recon = np.einsum("ij,jk,ik->i", comb.matrix, G, comb.matrix)
    np.testing.assert_allclose(recon, diag.variances, rtol=1e-10, atol=1e-12)


def test_sum_rule_for_concatenated_specs():
    rng = np.random.default_rng(5)
    p = 4
    a = random_two_way_spec(rng, p=p, m1=1, m2=1)
    b = random_two_way_spec(rng, p=p, m1=2, m2=1)
    combined = TwoWayKernelSpec(
        lambdas=np.vstack([a.lambdas, b.lambdas]),
        alpha=np.sqrt(a.alpha**2 + b.alpha**2),
        psi=np.sqrt(a.psi**2 + b.psi**2),
        a_const=a.a_const + b.a_const,
        pair_terms=a.pair_terms + b.pair_terms,
    )
    lhs = induced_prior_diag(combined).variances
    rhs = (induced_prior_diag(a) + induced_prior_diag(b)).variances
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12)
    x, y = rng.normal(size=p), rng.normal(size=p)
    assert two_way_eval(combined, x, y) == pytest.approx(
        two_way_eval(a, x, y) + two_way_eval(b, x, y), rel=1e-12
    )


# -- solving for a spec from a target diagonal ---------------------------------


def test_solve_block_family_construction_and_roundtrip():
    eta1, eta2, eta3, c = 2.0, 1.0, 1.0, 1.0
    p = 3
    target = PriorDiag.build(p, intercept=c**2, mains=eta1**2, pairs=eta2**2,
                             quads=eta3**2)
    spec = solve_spec_from_diag(target, family="block")
    assert spec.m1 == 1 and spec.m2 == 0
    np.testing.assert_allclose(spec.lambdas, 2.0 ** -0.25)
    np.testing.assert_allclose(spec.psi**2, 0.5)
    # alpha^2 and A follow from the closed forms main = alpha^2 + 2 lambda^2
    # and intercept = M1 + A
    np.testing.assert_allclose(spec.alpha**2, eta1**2 - np.sqrt(2.0) * eta2)
    assert spec.a_const == pytest.approx(c**2 - 1.0)
    np.testing.assert_allclose(
        induced_prior_diag(spec).variances, target.variances, rtol=1e-12
    )


def test_solve_zero_target_gives_zero_spec():
    target = PriorDiag.build(3, intercept=0.0, mains=0.0, pairs=0.0, quads=0.0)
    spec = solve_spec_from_diag(target, family="block")
    assert spec.m1 == 0 and spec.a_const == 0.0
    assert np.all(induced_prior_diag(spec).variances == 0.0)


def test_solve_general_family_roundtrip():
    rng = np.random.default_rng(6)
    p = 3
    target = PriorDiag(p, rng.uniform(0.0, 3.0, 1 + 2 * p + p * (p - 1) // 2))
    spec = solve_spec_from_diag(target, family="general")
    assert spec.m1 == 0
    np.testing.assert_allclose(
        induced_prior_diag(spec).variances, target.variances, rtol=1e-12, atol=1e-15
    )


def test_solve_skim_like_roundtrip():
    rng = np.random.default_rng(7)
    p = 4
    kappa2 = rng.uniform(0.1, 2.0, p)
    eta1sq, eta2sq, eta3sq, c2 = 1.5, 0.4, 0.9, 1.1
    ii, jj = np.triu_indices(p, 1)
    target = PriorDiag.build(
        p,
        intercept=c2,
        mains=eta1sq * kappa2,
        pairs=eta2sq * kappa2[ii] * kappa2[jj],
        quads=eta3sq * kappa2 * kappa2,
    )
    spec = solve_spec_from_diag(target, family="skim-like")
    assert spec.m1 == 1 and spec.m2 == 0
    np.testing.assert_allclose(
        induced_prior_diag(spec).variances, target.variances, rtol=1e-9, atol=1e-12
    )


def test_solve_infeasible_targets_name_the_equation():
    p = 3
    # pair variances force 2*sum(lambda^2) beyond the main variance
    target = PriorDiag.build(p, intercept=1.0, mains=0.1, pairs=4.0, quads=3.0)
    with pytest.raises(InfeasibleTargetError) as err:
        solve_spec_from_diag(target, family="block")
    assert err.value.equation == "main"
    target = PriorDiag.build(p, intercept=1.0, mains=9.0, pairs=4.0, quads=0.5)
    with pytest.raises(InfeasibleTargetError) as err:
        solve_spec_from_diag(target, family="block")
    assert err.value.equation == "quad"
    # positive pair variance over a zero-variance main breaks the structure
    v = np.zeros(1 + 2 * p + p * (p - 1) // 2)
    v[0] = 1.0
    v[1 + p] = 0.5  # pair (1,2)
    with pytest.raises(InfeasibleTargetError):
        solve_spec_from_diag(PriorDiag(p, v), family="skim-like")


def test_solve_unknown_family():
    target = poly_induced_prior(1.0, 2)
    with pytest.raises(ValueError, match="family"):
        solve_spec_from_diag(target, family="bogus")


# -- block and shrinkage kernels ------------------------------------------------


def test_block_kernel_zero_etas_is_constant():
    rng = np.random.default_rng(8)
    for _ in range(5):
        x, y = rng.normal(size=3), rng.normal(size=3)
        assert block_kernel_eval((0.0, 0.0, 0.0), 1.7, x, y) == pytest.approx(1.7)


def test_block_kernel_unit_vector_variance_identity():
    # k(e1, e1) sums the induced variances of the features active at e1
    e1 = np.array([1.0, 0.0])
    assert block_kernel_eval((1.0, 1.0, 1.0), 1.0, e1, e1) == pytest.approx(3.0)


def test_block_kernel_matches_oracle():
    rng = np.random.default_rng(9)
    p = 2
    k = block_kernel(2.0, 1.0, 1.0, 1.0, p)
    diag = k.induced_diag()
    np.testing.assert_allclose(diag.mains, 4.0)
    np.testing.assert_allclose(diag.pairs, 1.0)
    np.testing.assert_allclose(diag.quads, 1.0)
    assert diag.intercept == pytest.approx(1.0)
    for _ in range(10):
        x, y = rng.normal(size=p), rng.normal(size=p)
        assert block_kernel_eval((2.0, 1.0, 1.0), 1.0, x, y) == pytest.approx(
            phi2_quadratic_form(diag, x, y), rel=1e-10
        )


def test_block_kernel_weight_violation():
    with pytest.raises(KernelConstraintError, match="eta1"):
        block_kernel_eval((0.5, 1.0, 1.0), 1.0, np.zeros(2), np.zeros(2))
    with pytest.raises(KernelConstraintError, match="eta3"):
        block_kernel(2.0, 1.0, 0.1, 1.0, 3)
    with pytest.raises(KernelConstraintError, match="c\\^2"):
        block_kernel(2.0, 1.0, 1.0, 0.1, 3)


def test_skim_kernel_zero_kappa_is_constant_c2():
    rng = np.random.default_rng(10)
    k = skim_kernel(1.0, 0.7, 0.8, 1.3, np.zeros(4))
    for _ in range(5):
        x, y = rng.normal(size=4), rng.normal(size=4)
        assert k(x, y) == pytest.approx(1.3, rel=1e-12)


def test_skim_kernel_origin_is_c2():
    rng = np.random.default_rng(11)
    state = random_valid_state(rng, p=4)
    z = np.zeros(4)
    assert skim_kernel_eval(state, z, z) == pytest.approx(state.c2, rel=1e-12)


def test_skim_kernel_matches_feature_map_oracle():
    rng = np.random.default_rng(12)
    state = random_valid_state(rng, p=4)
    diag = state.induced_diag()
    for _ in range(10):
        x, y = rng.normal(size=4), rng.normal(size=4)
        val = skim_kernel_eval(state, x, y)
        ref = phi2_quadratic_form(diag, x, y)
        assert val == pytest.approx(ref, rel=1e-10, abs=1e-10)


def test_skim_kernel_with_unit_kappa_reduces_to_block():
    rng = np.random.default_rng(13)
    p = 3
    k = skim_kernel(1.2, 0.5, 0.9, 2.0, np.ones(p))
    for _ in range(5):
        x, y = rng.normal(size=p), rng.normal(size=p)
        assert k(x, y) == pytest.approx(
            block_kernel_eval((1.2, 0.5, 0.9), 2.0, x, y), rel=1e-12
        )


def test_skim_kernel_eta2_zero_drops_pair_variance():
    k = skim_kernel(1.0, 0.0, 1.0, 1.0, np.ones(3))
    diag = k.induced_diag()
    np.testing.assert_array_equal(diag.pairs, 0.0)


def test_skim_kernel_nonfinite_rejected():
    with pytest.raises(ValueError):
        skim_kernel(np.nan, 0.1, 0.5, 1.0, np.ones(2))


# -- kernel matrices --------------------------------------------------------------


def test_kernel_matrix_single_point():
    rng = np.random.default_rng(14)
    spec = random_two_way_spec(rng, p=3)
    x = rng.normal(size=3)
    K = kernel_matrix(spec.kernel(), x.reshape(1, -1))
    assert K.shape == (1, 1)
    assert K[0, 0] == pytest.approx(two_way_eval(spec, x, x), rel=1e-12)


def test_kernel_matrix_constant_kernel_callable():
    K = kernel_matrix(lambda x, y: 2.5, np.zeros((4, 2)))
    np.testing.assert_array_equal(K, np.full((4, 4), 2.5))


def test_kernel_matrix_matches_feature_oracle():
    rng = np.random.default_rng(15)
    state = random_valid_state(rng, p=4)
    X = rng.normal(size=(6, 4))
    from kis.skim import to_kernel

    K = kernel_matrix(to_kernel(state), X)
    S = state.induced_diag().variances
    Phi = np.vstack([phi2_map(row) for row in X])
    ref = (Phi * S) @ Phi.T
    np.testing.assert_allclose(K, ref, rtol=1e-10, atol=1e-10)


def test_kernel_matrix_psd_up_to_roundoff():
    rng = np.random.default_rng(16)
    for trial in range(10):
        p = int(rng.integers(1, 6))
        spec = random_two_way_spec(rng, p=p, m1=int(rng.integers(0, 3)),
                                   m2=int(rng.integers(0, 3)))
        X = rng.normal(size=(int(rng.integers(1, 8)), p))
        K = kernel_matrix(spec.kernel(), X)
        np.testing.assert_allclose(K, K.T)
        mineig = float(np.linalg.eigvalsh(K).min())
        assert mineig >= -1e-8 * max(np.trace(K), 1.0)


def test_kernel_matrix_rejects_nonfinite():
    with pytest.raises(ValueError, match="non-finite"):
        kernel_matrix(lambda x, y: np.inf, np.zeros((2, 1)))


# -- O(1) probe evaluations ---------------------------------------------------------


def test_probe_cross_origin_column():
    rng = np.random.default_rng(17)
    spec = random_two_way_spec(rng, p=4, m1=2, m2=1)
    X = rng.normal(size=(5, 4))
    row = cross_kernel_at_probes(spec.kernel(), [PROBE_ORIGIN], X)
    np.testing.assert_allclose(row[0], spec.m1 + spec.a_const, rtol=1e-12)


def test_probe_cross_matches_dense_evaluation():
    rng = np.random.default_rng(18)
    p = 5
    spec = random_two_way_spec(rng, p=p, m1=2, m2=3)
    k = spec.kernel()
    X = rng.normal(size=(6, p))
    probes = [probe_unit(2), probe_neg(2), probe_sum(1, 4), probe_sum(2, 3), PROBE_ORIGIN]
    rows = cross_kernel_at_probes(k, probes, X)
    for r, probe in enumerate(probes):
        dense = probe_dense(probe, p)
        for n in range(X.shape[0]):
            assert abs(rows[r, n] - two_way_eval(spec, dense, X[n])) < 1e-12 * (
                1.0 + abs(rows[r, n])
            )


def test_probe_cross_rejects_out_of_range():
    rng = np.random.default_rng(19)
    spec = random_two_way_spec(rng, p=3)
    with pytest.raises(ValueError, match="out of range"):
        cross_kernel_at_probes(spec.kernel(), [probe_unit(4)], np.zeros((2, 3)))


def test_probe_gram_symmetric_and_exact():
    rng = np.random.default_rng(20)
    p = 4
    spec = random_two_way_spec(rng, p=p, m1=1, m2=2)
    k = spec.kernel()
    probes = ProbeSet.for_pair(1, 3).probes
    G = k.probe_gram(probes)
    assert np.array_equal(G, G.T)
    for a in range(len(probes)):
        for b in range(len(probes)):
            ref = two_way_eval(spec, probe_dense(probes[a], p), probe_dense(probes[b], p))
            assert G[a, b] == pytest.approx(ref, rel=1e-12, abs=1e-12)


# -- higher-order kernels -------------------------------------------------------------


def test_r_way_base_case_is_two_way():
    rng = np.random.default_rng(21)
    spec = random_two_way_spec(rng, p=3)
    x, y = rng.normal(size=3), rng.normal(size=3)
    assert r_way_eval(spec, x, y) == two_way_eval(spec, x, y)


def test_r_way_zero_weights_keeps_base_constants():
    p = 3
    base = TwoWayKernelSpec(lambdas=np.zeros((0, p)), alpha=np.zeros(p),
                            psi=np.zeros(p), a_const=2.0)
    spec = RWaySpec(degree=3, lambdas=np.zeros((0, p)),
                    children=((np.zeros(p), base),))
    x = np.ones(p)
    assert r_way_eval(spec, x, x) == pytest.approx(2.0)


def test_r_way_matches_monomial_oracle():
    rng = np.random.default_rng(22)
    p = 3
    base = random_two_way_spec(rng, p=p, m1=1, m2=1)
    spec = RWaySpec(
        degree=3,
        lambdas=rng.uniform(0.0, 1.0, (2, p)),
        products=(((1, 2, 3), 0.8), ((2, 2, 3), 0.5)),
        children=((rng.uniform(0.0, 1.0, p), base),),
    )
    diag = monomial_diag(spec)
    for _ in range(8):
        x, y = rng.normal(size=p), rng.normal(size=p)
        val = r_way_eval(spec, x, y)
        ref = monomial_quadratic_form(diag, x, y)
        assert val == pytest.approx(ref, rel=1e-9, abs=1e-9)


def test_r_way_validation():
    with pytest.raises(ValueError, match="degree"):
        RWaySpec(degree=2, lambdas=np.zeros((1, 2)))
    base = TwoWayKernelSpec(lambdas=np.zeros((0, 2)), alpha=np.zeros(2), psi=np.zeros(2))
    with pytest.raises(ValueError, match="degree r-1"):
        RWaySpec(degree=4, lambdas=np.zeros((1, 2)), children=((np.ones(2), base),))
    with pytest.raises(TypeError):
        r_way_eval(object(), np.zeros(2), np.zeros(2))


# -- standard polynomial kernel prior ---------------------------------------------------


def test_poly_induced_prior_values():
    d = poly_induced_prior(1.0, 2)
    np.testing.assert_array_equal(d.mains, 2.0)
    np.testing.assert_array_equal(d.pairs, 2.0)
    np.testing.assert_array_equal(d.quads, 1.0)
    assert d.intercept == 1.0
    d0 = poly_induced_prior(0.0, 3)
    np.testing.assert_array_equal(d0.mains, 0.0)
    assert d0.intercept == 0.0


def test_poly_induced_prior_reconstructs_poly_kernel():
    rng = np.random.default_rng(23)
    c, p = 3.0, 4
    d = poly_induced_prior(c, p)
    for _ in range(10):
        x, y = rng.normal(size=p), rng.normal(size=p)
        assert phi2_quadratic_form(d, x, y) == pytest.approx(
            poly_kernel(x, y, c=c, d=2), rel=1e-10
        )


# -- serialization -----------------------------------------------------------------------


def test_spec_json_roundtrip():
    rng = np.random.default_rng(24)
    spec = random_two_way_spec(rng, p=4, m1=2, m2=2)
    blob = spec.to_json()
    d = json.loads(blob)
    assert set(d) == {"m1", "lambdas", "pair_terms", "alpha", "psi", "a_const"}
    back = TwoWayKernelSpec.from_json(blob)
    np.testing.assert_array_equal(back.lambdas, spec.lambdas)
    np.testing.assert_array_equal(back.alpha, spec.alpha)
    np.testing.assert_array_equal(back.psi, spec.psi)
    assert back.pair_terms == spec.pair_terms
    assert back.a_const == spec.a_const


def test_prior_diag_validation():
    with pytest.raises(ValueError, match="nonneg"):
        PriorDiag.build(2, intercept=-1.0, mains=1.0, pairs=1.0, quads=1.0)
    with pytest.raises(ValueError, match="length"):
        PriorDiag(2, np.ones(4))
