#!/usr/bin/env python3
"""
Tests for PCA whitening, IVA-G and PARAFAC2
"""

import os
import sys
import warnings

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.core.decomposition.iva import (
    IvaOptions,
    extract_scv,
    iva_decompose,
    joint_isi,
)
from src.core.decomposition.parafac2 import Parafac2Options, parafac2_als, parafac2_sources
from src.core.decomposition.pca import PcaReduction, feature_rank, pca_reduce, reconstruct_mixing
from src.core.errors import (
    ConvergenceWarning,
    DegenerateSlice,
    IndexOutOfRange,
    OrderExceedsRank,
    PreconditionViolation,
    RankTooLarge,
    ShapeMismatch,
)
from src.core.features.projection import FeatureMatrix


def _features(data, model_id="m", source_dim=None):
    return FeatureMatrix(model_id, np.asarray(data, dtype=np.float64), source_dim or data.shape[1])


def _scv_data(correlations, K, R, seed):
    """K datasets of len(correlations) sources; SCV n has equicorrelation correlations[n]"""
    rng = np.random.default_rng(seed)
    N = len(correlations)
    S = np.empty((K, N, R))
    for n, rho in enumerate(correlations):
        cov = np.full((K, K), rho) + (1.0 - rho) * np.eye(K)
        S[:, n, :] = np.linalg.cholesky(cov) @ rng.standard_normal((K, R))
    return S


# PCA

def test_exact_rank_two_keeps_all_variance():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((30, 2)) @ rng.standard_normal((2, 80))
    reduction = pca_reduce(_features(B), 2)
    assert reduction.explained_variance == pytest.approx(1.0, abs=1e-9)
    assert feature_rank(_features(B)) == 2


def test_zero_matrix_exceeds_rank():
    with pytest.raises(OrderExceedsRank):
        pca_reduce(_features(np.zeros((10, 40))), 1)


def test_order_outside_bounds():
    with pytest.raises(PreconditionViolation):
        pca_reduce(_features(np.ones((5, 8))), 6)


def test_reduced_rows_are_white():
    B = np.random.default_rng(1).standard_normal((100, 500))
    reduction = pca_reduce(_features(B), 10, min_variance=0.0)
    X = reduction.reduced
    assert X.shape == (10, 500)
    assert np.allclose(X @ X.T / 500, np.eye(10), atol=1e-8)
    assert reduction.reduction_matrix.shape == (10, 100)
    centered = B - B.mean(axis=1, keepdims=True)
    assert np.allclose(reduction.reduction_matrix @ centered, X, atol=1e-8)


def test_low_variance_is_only_a_warning(caplog):
    B = np.random.default_rng(2).standard_normal((40, 200))
    with caplog.at_level("WARNING"):
        reduction = pca_reduce(_features(B, "noisy"), 2, min_variance=0.9)
    assert reduction.explained_variance < 0.9
    assert "noisy" in caplog.text


def test_identity_reduction_leaves_mixing_unchanged():
    A_hat = np.random.default_rng(3).standard_normal((4, 4))
    reduction = PcaReduction("m", np.zeros((4, 10)), np.eye(4), 1.0, np.ones(4), np.zeros(4))
    assert np.allclose(reconstruct_mixing([A_hat], [reduction])[0], A_hat)


def test_mismatched_order_in_reconstruction():
    reduction = PcaReduction("m", np.zeros((3, 10)), np.eye(3, 6), 1.0, np.ones(3), np.zeros(6))
    with pytest.raises(ShapeMismatch):
        reconstruct_mixing([np.eye(4)], [reduction])
    with pytest.raises(ShapeMismatch):
        reconstruct_mixing([np.eye(3), np.eye(3)], [reduction])


def test_pipeline_reconstruction_is_consistent():
    rng = np.random.default_rng(4)
    S = _scv_data([0.9, 0.5, 0.1], K=3, R=600, seed=5)
    reductions, observations = [], []
    for k in range(3):
        B = rng.standard_normal((12, 3)) @ S[k] + 1e-3 * rng.standard_normal((12, 600))
        reductions.append(pca_reduce(_features(B, f"m{k}"), 3))
        observations.append(reductions[-1].reduced)
    result = iva_decompose(observations, IvaOptions(seed=0))
    for k, X in enumerate(observations):
        residual = X - result.mixing_est[k] @ result.sources[k]
        assert np.linalg.norm(residual) / np.linalg.norm(X) <= 1e-6
    mixing = reconstruct_mixing(result, reductions)
    assert [A.shape for A in mixing] == [(12, 3)] * 3


# IVA-G

def test_single_dataset_is_rejected():
    with pytest.raises(PreconditionViolation):
        iva_decompose([np.random.default_rng(0).standard_normal((3, 100))])


def test_identical_datasets_give_a_perfect_scv():
    X = np.random.default_rng(6).standard_normal((4, 800))
    result = iva_decompose([X, X.copy()], IvaOptions(seed=1))
    assert extract_scv(result, 1).mean_abs_corr >= 0.99


def test_planted_scvs_are_separated():
    K, N, R = 4, 5, 2000
    S = _scv_data([0.95, 0.75, 0.55, 0.35, 0.15], K, R, seed=7)
    rng = np.random.default_rng(8)
    mixing = []
    for _ in range(K):
        Q, _ = np.linalg.qr(rng.standard_normal((N, N)))
        mixing.append(Q @ np.diag(np.linspace(1.0, 2.0, N)))
    X = [mixing[k] @ S[k] for k in range(K)]
    result = iva_decompose(X, IvaOptions(seed=0))
    assert joint_isi(result.demixing, mixing) <= 0.05
    assert extract_scv(result, 1).mean_abs_corr >= 0.9


def test_extract_scv_returns_most_correlated_source():
    S = _scv_data([0.1, 0.9, 0.4], K=5, R=3000, seed=9)
    result = iva_decompose([S[k] for k in range(5)], IvaOptions(seed=0))
    top = extract_scv(result, 1)
    assert abs(np.corrcoef(top.rows[0], S[0, 1])[0, 1]) >= 0.9
    means = [extract_scv(result, n).mean_abs_corr for n in (1, 2, 3)]
    assert means == sorted(means, reverse=True)
    with pytest.raises(IndexOutOfRange):
        extract_scv(result, 4)
    with pytest.raises(IndexOutOfRange):
        extract_scv(result, 0)


def test_cost_is_monotone_and_sources_are_unit_variance():
    S = _scv_data([0.8, 0.4, 0.2], K=3, R=1000, seed=10)
    result = iva_decompose([S[k] for k in range(3)], IvaOptions(seed=2))
    trace = result.cost_trace
    assert np.all(np.diff(trace) <= 1e-10 * np.maximum(1.0, np.abs(trace[:-1])))
    assert np.allclose(result.sources.var(axis=2), 1.0, atol=1e-6)
    for k in range(3):
        assert np.allclose(result.demixing[k] @ result.mixing_est[k], np.eye(3), atol=1e-8)


def test_two_by_two_product_is_a_scaled_permutation():
    S = _scv_data([0.9, 0.2], K=2, R=4000, seed=11)
    rng = np.random.default_rng(12)
    mixing = [rng.standard_normal((2, 2)) + 2 * np.eye(2) for _ in range(2)]
    result = iva_decompose([mixing[k] @ S[k] for k in range(2)], IvaOptions(seed=0))
    for k in range(2):
        G = np.abs(result.demixing[k] @ mixing[k])
        dominant = G.max(axis=1, keepdims=True)
        assert np.all((G / dominant)[G < dominant] <= 0.1)


def test_scaling_a_dataset_keeps_scv_order():
    S = _scv_data([0.2, 0.9, 0.5], K=3, R=2000, seed=13)
    X = [S[k] for k in range(3)]
    base = iva_decompose(X, IvaOptions(seed=0))
    scaled = iva_decompose([X[0] * 7.5, X[1], X[2]], IvaOptions(seed=0))
    assert np.array_equal(base.scv_order, scaled.scv_order)


def test_non_convergence_warns():
    S = _scv_data([0.8, 0.3], K=3, R=500, seed=14)
    with pytest.warns(ConvergenceWarning):
        result = iva_decompose([S[k] for k in range(3)], IvaOptions(max_iter=1, tol=1e-15))
    assert not result.converged
    assert result.iterations == 1
    assert result.stop_reason == "max_iter"


def test_stalled_cost_is_not_convergence():
    X = np.random.default_rng(15).standard_normal((3, 600))
    with pytest.warns(ConvergenceWarning):
        result = iva_decompose([X, X.copy()], IvaOptions(tol=1e-15, max_iter=5000))
    assert result.stop_reason in ("cost_rise", "max_iter")
    assert not result.converged
    assert np.all(np.diff(result.cost_trace) <= 1e-10 * np.maximum(1.0, np.abs(result.cost_trace[:-1])))


def test_converged_run_reports_tolerance():
    S = _scv_data([0.9, 0.5, 0.1], K=3, R=1500, seed=16)
    result = iva_decompose([S[k] for k in range(3)], IvaOptions(tol=1e-4))
    assert result.converged == (result.stop_reason == "tol")


# PARAFAC2

def _exact_parafac2(K=6, I=80, R=120, rank=3, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((I, rank))
    H = np.eye(rank) + 0.3 * rng.standard_normal((rank, rank))
    sigma = rng.uniform(0.5, 1.5, size=(K, rank))
    slices = []
    for k in range(K):
        P, _ = np.linalg.qr(rng.standard_normal((R, rank)))
        slices.append(A @ np.diag(sigma[k]) @ (P @ H).T)
    return slices


def test_rank_one_data_is_fit_exactly():
    rng = np.random.default_rng(20)
    a, s = rng.standard_normal(30), rng.standard_normal(50)
    slices = [2.5 * np.outer(a, s) for _ in range(4)]
    result = parafac2_als(slices, 1)
    assert result.fit == pytest.approx(1.0, abs=1e-9)
    assert result.iterations <= 5
    sources = parafac2_sources(result, 1)
    r = np.corrcoef(np.vstack([sources, s]))
    assert np.allclose(np.abs(r), 1.0, atol=1e-9)


def test_exact_rank_three_recovery():
    slices = _exact_parafac2()
    result = parafac2_als(slices, 3, Parafac2Options(max_iter=500))
    assert result.fit >= 0.999
    phi = result.cross_product
    for S in result.sources:
        assert np.linalg.norm(S.T @ S - phi) / np.linalg.norm(phi) <= 1e-6
    assert np.all(np.diff(result.fit_trace) >= -1e-12)


def test_reported_fit_matches_the_residual():
    rng = np.random.default_rng(21)
    slices = [rng.standard_normal((12, 30)) + np.outer(rng.standard_normal(12), rng.standard_normal(30))
              for _ in range(5)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        result = parafac2_als(slices, 3, Parafac2Options(max_iter=25))
    residual = sum(np.sum((B - result.shared_factor @ np.diag(result.loadings[k]) @ result.sources[k].T) ** 2)
                   for k, B in enumerate(slices))
    total = sum(np.sum(B ** 2) for B in slices)
    assert result.fit == pytest.approx(1.0 - residual / total, abs=1e-9)


def test_factor_conventions():
    result = parafac2_als(_exact_parafac2(seed=1), 3, Parafac2Options(max_iter=300))
    A = result.shared_factor
    assert np.allclose(np.linalg.norm(A, axis=0), 1.0)
    assert np.all(A[np.argmax(np.abs(A), axis=0), np.arange(3)] > 0)
    norms = np.linalg.norm(result.loadings, axis=0)
    assert np.all(np.diff(norms) <= 1e-12)
    assert np.all(result.loadings.sum(axis=0) >= 0)


def test_scaling_a_slice_scales_its_loadings():
    slices = _exact_parafac2(seed=2)
    opts = Parafac2Options(max_iter=20000, tol=1e-12)
    base = parafac2_als(slices, 3, opts)
    scaled = parafac2_als([3.0 * slices[0]] + slices[1:], 3, opts)
    assert base.converged and scaled.converged
    # match components through the shared factor
    match = np.argmax(np.abs(base.shared_factor.T @ scaled.shared_factor), axis=1)
    ratio = np.abs(scaled.loadings[:, match]) / np.abs(base.loadings)
    assert np.allclose(ratio[0], 3.0, rtol=1e-3)
    assert np.allclose(ratio[1:], 1.0, rtol=1e-3)


def test_rank_too_large():
    slices = [np.random.default_rng(k).standard_normal((5, 8)) for k in range(3)]
    with pytest.raises(RankTooLarge):
        parafac2_als(slices, 6)


def test_degenerate_slice():
    slices = [np.random.default_rng(0).standard_normal((5, 8)), np.zeros((5, 8))]
    with pytest.raises(DegenerateSlice):
        parafac2_als(slices, 2)


def test_source_index_bounds():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        result = parafac2_als(_exact_parafac2(K=3, I=10, R=12, rank=2), 2, Parafac2Options(max_iter=20))
    assert parafac2_sources(result, 2).shape == (3, 12)
    with pytest.raises(IndexOutOfRange):
        parafac2_sources(result, 0)
    with pytest.raises(IndexOutOfRange):
        parafac2_sources(result, 3)
