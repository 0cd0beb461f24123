import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from corrdiff.core import (DegenerateDependenceError, FisherDomainError, PairedDataset, PairIndexSet,
                           compute_differences, correlation_blocks, fisher_transform,
                           pearson_correlations, psi12_diagonal, psi_cross, standardized_differences)


def random_corr(k, rng, strength=1.0):
    a = rng.normal(size=(k, k + 2)) * strength
    c = a @ a.T + np.eye(k)
    s = np.sqrt(np.diag(c))
    return c / np.outer(s, s)


def test_fisher_transform_values():
    assert fisher_transform(0.0) == 0.0
    assert fisher_transform(0.5) == pytest.approx(math.log(3.0) / 2, abs=1e-15)
    assert fisher_transform(0.5) == pytest.approx(0.5493061, abs=1e-7)
    assert fisher_transform(-0.5) == -fisher_transform(0.5)


@pytest.mark.parametrize("z", [1.0, -1.0, 1.5, np.nan])
def test_fisher_transform_domain(z):
    with pytest.raises(FisherDomainError, match="Fisher"):
        fisher_transform(z)


def test_fisher_transform_inverts_tanh():
    x = np.linspace(-5, 5, 201)
    np.testing.assert_allclose(fisher_transform(np.tanh(x)), x, atol=1e-12, rtol=0)


def test_fisher_transform_vector_error_names_value():
    with pytest.raises(FisherDomainError, match="1.2"):
        fisher_transform(np.array([0.1, 1.2]))


def test_dataset_validation():
    with pytest.raises(ValueError, match="identical shape"):
        PairedDataset(np.zeros((5, 3)), np.zeros((5, 4)))
    with pytest.raises(ValueError, match="at least 4"):
        PairedDataset(np.zeros((3, 2)), np.zeros((3, 2)))
    d = PairedDataset(np.ones((5, 3)), np.ones((5, 3)))
    assert d.gene_ids == ["g0", "g1", "g2"]
    assert (d.n, d.p) == (5, 3)


def test_pair_index_lexicographic():
    idx = PairIndexSet.for_dimension(4)
    assert idx.pairs == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    assert idx.m == 6


def test_pearson_small_instance():
    x = np.array([[1.0, 2.0], [2.0, 4.0], [4.0, 5.0]])
    r1, r2, r12 = correlation_blocks(x, x)
    a, b = x[:, 0], x[:, 1]
    num = np.sum((a - a.mean()) * (b - b.mean()))
    den = math.sqrt(np.sum((a - a.mean()) ** 2) * np.sum((b - b.mean()) ** 2))
    assert r1[0, 1] == pytest.approx(num / den, abs=1e-14)
    assert r12[0, 1] == pytest.approx(num / den, abs=1e-14)


def test_pearson_perfect_correlations():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(20, 3))
    x[:, 2] = x[:, 0]
    y = rng.normal(size=(20, 3))
    y[:, 1] = -y[:, 0]
    est = pearson_correlations(PairedDataset(x, y))
    assert est.r1[0, 2] == 1.0
    assert est.r2[0, 1] == -1.0
    np.testing.assert_allclose(est.r1, np.corrcoef(x, rowvar=False), atol=1e-12)
    np.testing.assert_allclose(est.r12, np.corrcoef(x, y, rowvar=False)[:3, 3:], atol=1e-12)


def test_pearson_zero_variance_names_gene():
    x = np.random.default_rng(1).normal(size=(10, 3))
    x[:, 1] = 2.0
    with pytest.raises(ValueError, match="BRCA1"):
        pearson_correlations(PairedDataset(x, x + 1, ["A", "BRCA1", "C"]))


def test_pearson_affine_invariance():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(30, 4)), rng.normal(size=(30, 4))
    scale = np.array([0.5, 3.0, 10.0, 1e-3])
    a = pearson_correlations(PairedDataset(x, y))
    b = pearson_correlations(PairedDataset(x * scale + 7.0, y * scale[::-1] - 2.0))
    for u, v in ((a.r1, b.r1), (a.r2, b.r2), (a.r12, b.r12)):
        np.testing.assert_allclose(u, v, atol=1e-12)


def test_psi_identity_and_self():
    eye = np.eye(4)
    assert psi_cross(eye, (0, 1), (2, 3)) == 0.0
    r = random_corr(4, np.random.default_rng(3))
    for s in [(0, 1), (2, 3), (1, 3)]:
        assert psi_cross(r, s, s) == pytest.approx(1.0, abs=1e-12)


def test_psi_symmetric_in_pairs():
    rng = np.random.default_rng(4)
    for _ in range(20):
        r = random_corr(6, rng)
        s, t = tuple(rng.choice(6, 2, replace=False)), tuple(rng.choice(6, 2, replace=False))
        assert psi_cross(r, s, t) == pytest.approx(psi_cross(r, t, s), abs=1e-12)


def test_psi_degenerate():
    r = np.ones((4, 4))
    with pytest.raises(DegenerateDependenceError):
        psi_cross(r, (0, 1), (2, 3))


def test_psi_monte_carlo_oracle():
    # corr(g(r_s), g(r_t)) over synthetic datasets, n = 500
    rng = np.random.default_rng(5)
    r = random_corr(4, rng, 0.6)
    expected = psi_cross(r, (0, 1), (2, 3))
    reps, n = 40000, 500
    chol = np.linalg.cholesky(r)
    z = rng.standard_normal((reps, n, 4)) @ chol.T
    z -= z.mean(axis=1, keepdims=True)
    z /= np.sqrt((z * z).sum(axis=1, keepdims=True))
    g1 = np.arctanh(np.einsum("bn,bn->b", z[:, :, 0], z[:, :, 1]))
    g2 = np.arctanh(np.einsum("bn,bn->b", z[:, :, 2], z[:, :, 3]))
    assert np.corrcoef(g1, g2)[0, 1] == pytest.approx(expected, abs=0.02)


def test_psi_diagonal_matches_general_formula():
    rng = np.random.default_rng(6)
    p = 5
    full = random_corr(2 * p, rng)
    r1, r2, r12 = full[:p, :p], full[p:, p:], full[:p, p:]
    idx = PairIndexSet.for_dimension(p)
    vec = psi12_diagonal(r1, r2, r12, idx.rows, idx.cols)
    for k, (i, j) in enumerate(idx.pairs):
        assert vec[k] == pytest.approx(psi_cross(full, (i, j), (p + i, p + j)), abs=1e-12)


def test_identical_conditions_give_zero():
    x = np.random.default_rng(7).normal(size=(15, 4))
    sd = compute_differences(PairedDataset(x, x.copy()))
    assert np.all(sd.d == 0.0)
    assert np.all(sd.psi12_diag < 1.0)


def test_independent_conditions_formula():
    rng = np.random.default_rng(8)
    data = PairedDataset(rng.normal(size=(40, 4)), rng.normal(size=(40, 4)))
    sd = compute_differences(data)
    np.testing.assert_allclose(sd.d, (sd.u2 - sd.u1) / np.sqrt(2 * (1 - sd.psi12_diag)))
    est = pearson_correlations(data)
    est.r12[:] = 0.0
    sd0 = standardized_differences(est)
    np.testing.assert_allclose(sd0.d, (sd0.u2 - sd0.u1) / math.sqrt(2), atol=1e-14)


def test_fisher_scaling():
    rng = np.random.default_rng(9)
    data = PairedDataset(rng.normal(size=(30, 3)), rng.normal(size=(30, 3)))
    est = pearson_correlations(data)
    sd = compute_differences(data)
    assert sd.u1[0] == pytest.approx(math.atanh(est.r1[0, 1]) * math.sqrt(27), abs=1e-12)


def test_perfect_correlation_pair_raises():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(20, 3))
    x[:, 1] = 2 * x[:, 0]
    with pytest.raises(FisherDomainError, match="g0, g1"):
        compute_differences(PairedDataset(x, rng.normal(size=(20, 3))))


def test_swap_negates():
    rng = np.random.default_rng(11)
    r = random_corr(8, rng, 0.5)
    z = rng.normal(size=(50, 8)) @ np.linalg.cholesky(r).T
    data = PairedDataset(z[:, :4], z[:, 4:])
    np.testing.assert_array_equal(compute_differences(data.swapped()).d, -compute_differences(data).d)


def test_batched_blocks_match_single():
    rng = np.random.default_rng(12)
    xs, ys = rng.normal(size=(3, 25, 5)), rng.normal(size=(3, 25, 5))
    batch = correlation_blocks(xs, ys)
    for b in range(3):
        single = correlation_blocks(xs[b], ys[b])
        for u, v in zip(batch, single):
            np.testing.assert_allclose(u[b], v, atol=1e-14)


def test_variance_of_d_under_h0():
    # known dependent R, n = 200, p = 10; each d_t should have variance near one
    rng = np.random.default_rng(13)
    p, n, reps = 10, 200, 3000
    r = np.kron(np.array([[1.0, 0.4], [0.4, 1.0]]), random_corr(p, rng, 0.35))
    chol = np.linalg.cholesky(r)
    z = rng.standard_normal((reps, n, 2 * p)) @ chol.T
    idx = PairIndexSet.for_dimension(p)
    from corrdiff.core import differences_from_blocks
    r1, r2, r12 = correlation_blocks(z[..., :p], z[..., p:])
    d, *_ = differences_from_blocks(r1, r2, r12, n, idx.rows, idx.cols)
    var = d.var(axis=0)
    assert np.all((var > 0.85) & (var < 1.15))
    assert 0.93 < var.mean() < 1.07


def test_identity_gives_uncorrelated_d():
    rng = np.random.default_rng(14)
    p, n, reps = 4, 100, 4000
    x, y = rng.standard_normal((reps, n, p)), rng.standard_normal((reps, n, p))
    idx = PairIndexSet.for_dimension(p)
    from corrdiff.core import differences_from_blocks
    d, *_ = differences_from_blocks(*correlation_blocks(x, y), n, idx.rows, idx.cols)
    c = np.corrcoef(d, rowvar=False)
    off = c[~np.eye(idx.m, dtype=bool)]
    assert np.max(np.abs(off)) < 4.5 / math.sqrt(reps)


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 30), st.integers(2, 6), st.integers(0, 2 ** 31))
def test_d_finite_and_psi_clamped(n, p, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    y = 0.7 * x + rng.normal(size=(n, p))
    sd = compute_differences(PairedDataset(x, y))
    assert np.all(np.isfinite(sd.d))
    assert np.all(sd.psi12_diag < 1.0)
