import logging

import numpy as np
import pytest

from src.alignment import two_layer_design
from src.channel import PowerAllocation, SystemConfig, generate_channels, random_beamformers, reciprocal
from src.errors import ZeroDirection
from src.experiments import cluster_fixed_points, multi_start
from src.maxsinr import (
    MaxSinrOptions,
    composite_step,
    displacement,
    linearly_dependent_init,
    perturb_and_measure,
    run_max_sinr,
    vu_step,
    wmf,
)
from src.metrics import chordal_distance, interference_plus_noise_cov_stream, is_rank_deficient


@pytest.fixture(scope="module")
def refined42(ch42, cfg42, ia42):
    """Max-SINR fixed point polished from the two-layer design."""
    init = two_layer_design(ch42, ia42, cfg42.total_power, power="equal").composed
    return run_max_sinr(ch42, cfg42, init, MaxSinrOptions(max_iter=50, fp_tol=1e-9))


class TestWmf:

    def test_identity_covariance_returns_matched_filter(self):
        v = np.array([1.0, 0.0], dtype=complex)
        u = wmf(np.eye(2), np.eye(2), v)
        np.testing.assert_allclose(u, [1.0, 0.0])

    def test_whitening_favours_quiet_dimension(self):
        R = np.diag([4.0, 1.0])
        v = np.array([1.0, 1.0], dtype=complex) / np.sqrt(2.0)
        u = wmf(R, np.eye(2), v)
        np.testing.assert_allclose(np.abs(u), [0.2425, 0.9701], atol=1e-4)
        assert np.linalg.norm(u) == pytest.approx(1.0)

    def test_zero_direction_raises(self):
        with pytest.raises(ZeroDirection):
            wmf(np.eye(2), np.zeros((2, 2)), np.array([1.0, 0.0]))


class TestVuStep:

    def test_single_user_is_matched_filter(self, rng):
        cfg = SystemConfig.from_snr_db(1, 3, 1, 10.0)
        ch = generate_channels(cfg, 3)
        v = rng.standard_normal((1, 3, 1)) + 1j * rng.standard_normal((1, 3, 1))
        v /= np.linalg.norm(v)
        U = vu_step(ch, v, PowerAllocation.equal(cfg))
        h = ch.H[0, 0] @ v[0][:, 0]
        np.testing.assert_allclose(U[0][:, 0], h / np.linalg.norm(h), atol=1e-12)

    def test_shared_covariance_matches_per_stream_filter(self, ch42):
        cfg = SystemConfig.from_snr_db(3, 4, 2, 10.0)
        V = random_beamformers(cfg, np.random.default_rng(6), orthonormal=False).V
        P = PowerAllocation.equal(cfg)
        U = vu_step(ch42, V, P, orthogonalize=False)
        for k in range(cfg.K):
            for m in range(cfg.d):
                R = interference_plus_noise_cov_stream(ch42, V, P, k, m)
                np.testing.assert_allclose(U[k][:, m], wmf(R, ch42.H[k, k], V[k][:, m]), atol=1e-10)

    def test_repeated_columns_get_identical_filters(self, ch42, cfg42):
        V = linearly_dependent_init(cfg42, seed=2).V
        U = vu_step(ch42, V, PowerAllocation.equal(cfg42), orthogonalize=False)
        np.testing.assert_array_equal(U[:, :, 0], U[:, :, 1])

    def test_orthogonalized_blocks(self, ch42, cfg42, ia42):
        U = vu_step(ch42, ia42.V, PowerAllocation.equal(cfg42), orthogonalize=True)
        for k in range(cfg42.K):
            np.testing.assert_allclose(U[k].conj().T @ U[k], np.eye(cfg42.d), atol=1e-10)

    def test_unit_columns_without_orthogonalization(self, ch42, cfg42, ia42):
        U = vu_step(ch42, ia42.V, PowerAllocation.equal(cfg42), orthogonalize=False)
        np.testing.assert_allclose(np.linalg.norm(U, axis=1), 1.0, atol=1e-12)

    def test_receive_step_keeps_aligned_subspaces(self, ch42, cfg42, ia42):
        U = vu_step(ch42, ia42.V, PowerAllocation.equal(cfg42))
        for k in range(cfg42.K):
            assert chordal_distance(ia42.U[k], U[k]) < 1e-4

    def test_composite_step_keeps_aligned_subspaces(self, ch42, cfg42, ia42):
        P = PowerAllocation.equal(cfg42)
        U, V = composite_step(ch42, reciprocal(ch42), ia42.V, P, P)
        for k in range(cfg42.K):
            assert chordal_distance(ia42.U[k], U[k]) < 1e-4
            assert chordal_distance(ia42.V[k], V[k]) < 1e-4

    def test_scalar_streams_keep_aligned_subspaces(self, ch21, cfg21, ia21):
        U = vu_step(ch21, ia21.V, PowerAllocation.equal(cfg21))
        for k in range(cfg21.K):
            assert chordal_distance(ia21.U[k], U[k]) < 1e-4


class TestDisplacement:

    def test_ignores_column_phase(self, ia42):
        V = ia42.V * np.exp(0.3j)
        U = ia42.U * np.exp(-1.1j)
        assert displacement(ia42.V, ia42.U, V, U) < 1e-12

    def test_detects_column_move(self, ia42):
        V = np.array(ia42.V)
        V[0][:, [0, 1]] = V[0][:, [1, 0]]
        assert displacement(ia42.V, ia42.U, V, ia42.U) > 1.0

    def test_column_order_counts_for_orthonormal_blocks(self, ia42):
        V = np.array(ia42.V)
        V[1] = V[1][:, ::-1]
        moved = displacement(ia42.V, ia42.U, V, ia42.U, orthonormal=True)
        assert moved > 1.0
        assert chordal_distance(ia42.V[1], V[1]) < 1e-12


class TestFixedPoints:

    def test_two_layer_design_is_fixed_point(self, ch42, cfg42, ia42):
        init = two_layer_design(ch42, ia42, cfg42.total_power, power="equal").composed
        solution = run_max_sinr(ch42, cfg42, init, MaxSinrOptions(max_iter=1, fp_tol=1e-5))
        assert solution.final_displacement < 1e-5
        assert solution.converged
        assert solution.iterations == 1

    def test_high_snr_fixed_point_aligns_and_diagonalizes(self, ch42):
        cfg = SystemConfig.from_snr_db(3, 4, 2, 60.0)
        init = random_beamformers(cfg, np.random.default_rng(5))
        solution = run_max_sinr(ch42, cfg, init, MaxSinrOptions(max_iter=3000, fp_tol=1e-6))
        assert solution.converged
        assert solution.alignment.cross_terms < 1e-2
        B = solution.beamformers
        for k in range(cfg.K):
            Hbar = B.U[k].conj().T @ ch42.H[k, k] @ B.V[k]
            off = np.abs(Hbar - np.diag(np.diag(Hbar))).max()
            assert off < 1e-2 * np.abs(np.diag(Hbar)).min()

    def test_unperturbed_fixed_point_stays(self, ch42, cfg42, refined42):
        report = perturb_and_measure(ch42, cfg42, refined42, epsilon=0.0, trials=3, n_iter=3)
        assert report.distances.shape == (3, 4)
        assert report.distances.max() < 1e-6

    def test_small_perturbation_contracts(self, ch42, cfg42, refined42):
        report = perturb_and_measure(ch42, cfg42, refined42, epsilon=1e-3, trials=20, n_iter=5, seed=1)
        assert report.ratios.shape == (20, 5)
        assert report.contraction_rates().shape == (20,)
        assert report.median_ratio < 1.0
        assert np.median(report.distances[:, -1]) < np.median(report.distances[:, 1])

    def test_contraction_needs_two_iterations(self, ch42, cfg42, refined42):
        report = perturb_and_measure(ch42, cfg42, refined42, epsilon=1e-3, trials=2, n_iter=1)
        assert np.isnan(report.median_ratio)

    def test_only_precoders_are_perturbed(self, ch42, cfg42, refined42):
        report = perturb_and_measure(ch42, cfg42, refined42, epsilon=1e-3, trials=5, n_iter=1, seed=2)
        assert np.all(report.distances[:, 0] > 0)
        assert np.all(report.distances[:, 0] < 2e-3)

    def test_first_step_distance_scales_with_epsilon(self, ch42, cfg42, refined42):
        coarse = perturb_and_measure(ch42, cfg42, refined42, epsilon=1e-2, trials=20, n_iter=1, seed=4)
        fine = perturb_and_measure(ch42, cfg42, refined42, epsilon=5e-3, trials=20, n_iter=1, seed=4)
        assert fine.median_first_distance / coarse.median_first_distance <= 0.6


class TestRunMaxSinr:

    def test_linearly_dependent_init_stays_rank_deficient(self, ch42, cfg42):
        init = linearly_dependent_init(cfg42, seed=3)
        assert all(is_rank_deficient(init.V[k]) for k in range(cfg42.K))
        solution = run_max_sinr(ch42, cfg42, init, MaxSinrOptions(max_iter=20, orthogonalize=False))
        for k in range(cfg42.K):
            for block in (solution.beamformers.V[k], solution.beamformers.U[k]):
                s = np.linalg.svd(block, compute_uv=False)
                assert s[-1] < 1e-6 * s[0]

    def test_linearly_dependent_init_needs_two_streams(self, cfg21):
        with pytest.raises(ValueError):
            linearly_dependent_init(cfg21, seed=0)

    def test_trace_rows(self, ch42):
        cfg = SystemConfig.from_snr_db(3, 4, 2, 10.0)
        init = random_beamformers(cfg, np.random.default_rng(8))
        solution = run_max_sinr(ch42, cfg, init, MaxSinrOptions(max_iter=30, record_trace=True))
        assert len(solution.trace) == solution.iterations
        assert set(solution.trace[0]) == {"iter", "displacement", "sum_rate_bits", "leakage"}
        assert solution.trace[-1]["sum_rate_bits"] == pytest.approx(solution.sum_rate)

    def test_non_convergence_is_reported(self, ch42, caplog):
        cfg = SystemConfig.from_snr_db(3, 4, 2, 20.0)
        init = random_beamformers(cfg, np.random.default_rng(9))
        with caplog.at_level(logging.WARNING):
            solution = run_max_sinr(ch42, cfg, init, MaxSinrOptions(max_iter=2))
        assert not solution.converged
        assert solution.iterations == 2
        assert "did not reach a fixed point" in caplog.text

    def test_solution_fields(self, ch42):
        cfg = SystemConfig.from_snr_db(3, 4, 2, 10.0)
        init = random_beamformers(cfg, np.random.default_rng(10))
        solution = run_max_sinr(ch42, cfg, init)
        assert solution.algorithm == "max-sinr"
        assert solution.beamformers.orthonormal
        assert solution.rate.per_stream.shape == (3, 2)
        assert solution.powers.total == pytest.approx(cfg.total_power)

    def test_options_validation(self):
        with pytest.raises(ValueError):
            MaxSinrOptions(max_iter=0)
        with pytest.raises(ValueError):
            MaxSinrOptions(fp_tol=-1.0)


@pytest.mark.slow
class TestLowSnrModes:

    def test_single_fixed_point_at_zero_db(self):
        cfg = SystemConfig.from_snr_db(3, 4, 2, 0.0)
        ch = generate_channels(cfg, 7)
        solutions = multi_start(ch, cfg, "max-sinr", 200, seed=2024)
        clusters = cluster_fixed_points(solutions)
        assert len(clusters) == 1
        assert clusters[0].occupancy_percent(clusters[0].count) == pytest.approx(100.0)


class TestLowSnrEigenmode:

    def test_first_precoder_follows_top_eigenvector(self):
        cfg = SystemConfig.from_snr_db(3, 4, 2, -30.0)
        ch = generate_channels(cfg, 7)
        for seed in range(3):
            init = random_beamformers(cfg, np.random.default_rng(seed))
            solution = run_max_sinr(ch, cfg, init)
            for k in range(cfg.K):
                _, vectors = np.linalg.eigh(ch.H[k, k].conj().T @ ch.H[k, k])
                v = solution.beamformers.V[k][:, 0]
                assert abs(np.vdot(vectors[:, -1], v)) > 0.99
