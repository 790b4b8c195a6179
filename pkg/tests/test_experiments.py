import dataclasses

import numpy as np
import pandas as pd
import pytest

from src.alignment import two_layer_design
from src.channel import Beamformers, SystemConfig, generate_channels
from src.experiments import (
    UNCONVERGED,
    SweepRecord,
    cluster_fixed_points,
    cluster_labels,
    cluster_trajectories,
    convergence_failure_fraction,
    match_clusters,
    multi_start,
    occupancy_table,
    records_for,
    snr_sweep,
    task_seeds,
    theoretical_zf_gap,
    zf_gap_study,
)
from src.metrics import RateReport
from src.solvers import get_solver


@pytest.fixture(scope="module")
def cfg20():
    return SystemConfig.from_snr_db(3, 2, 1, 20.0)


@pytest.fixture(scope="module")
def ch20(cfg20):
    return generate_channels(cfg20, 5)


@pytest.fixture(scope="module")
def iia_runs(ch21, cfg21):
    return multi_start(ch21, cfg21, "iia", 6, seed=3)


def _with(solution, V=None, rate=None, converged=None):
    changes = {}
    if V is not None:
        changes["beamformers"] = Beamformers(V=V, U=solution.beamformers.U, orthonormal=True)
    if rate is not None:
        changes["rate"] = RateReport.from_users(np.full(solution.rate.per_user.shape, rate / len(solution.rate.per_user)))
    if converged is not None:
        changes["converged"] = converged
    return dataclasses.replace(solution, **changes)


def _record(snr_db, cluster_id, init_seed, rate=1.0):
    return SweepRecord(snr_db=snr_db, algorithm="max-sinr", cluster_id=cluster_id, rate_bits=rate,
                       occupancy_percent=50.0, channel_seed=7, init_seed=init_seed)


class TestMultiStart:

    def test_single_start_matches_direct_run(self, ch20, cfg20):
        solver = get_solver("max-sinr")
        seed = task_seeds(11, 1)[0]
        direct = solver.solve(ch20, cfg20, solver.initialize_from_seed(cfg20, seed))
        [solution] = multi_start(ch20, cfg20, "max-sinr", 1, seed=11)
        np.testing.assert_array_equal(solution.beamformers.V, direct.beamformers.V)
        assert solution.sum_rate == direct.sum_rate
        assert solution.details["init_seed"] == seed

    def test_deterministic(self, ch20, cfg20):
        first = multi_start(ch20, cfg20, "max-sinr", 4, seed=2)
        second = multi_start(ch20, cfg20, "max-sinr", 4, seed=2)
        assert [s.sum_rate for s in first] == [s.sum_rate for s in second]

    def test_worker_count_does_not_change_results(self, ch20, cfg20):
        serial = multi_start(ch20, cfg20, "max-sinr", 4, seed=2, workers=1)
        parallel = multi_start(ch20, cfg20, "max-sinr", 4, seed=2, workers=2)
        assert [s.details["init_seed"] for s in serial] == [s.details["init_seed"] for s in parallel]
        for a, b in zip(serial, parallel):
            np.testing.assert_allclose(a.beamformers.V, b.beamformers.V, atol=1e-12)

    def test_accepts_configured_solver(self, ch20, cfg20):
        solver = get_solver("max-sinr", {"max_iter": 2})
        solutions = multi_start(ch20, cfg20, solver, 2, seed=0)
        assert all(s.iterations <= 2 for s in solutions)

    def test_rejects_empty_run(self, ch20, cfg20):
        with pytest.raises(ValueError):
            multi_start(ch20, cfg20, "iia", 0, seed=0)

    def test_task_seeds_are_prefix_stable(self):
        assert task_seeds(5, 3) == task_seeds(5, 10)[:3]


class TestClustering:

    def test_identical_solutions_form_one_cluster(self, iia_runs):
        copies = [iia_runs[0]] * 5
        clusters = cluster_fixed_points(copies)
        assert len(clusters) == 1
        assert clusters[0].count == 5
        assert clusters[0].members == [0, 1, 2, 3, 4]
        assert clusters[0].label == "F1"

    def test_orthogonal_subspaces_split(self, iia_runs):
        base = iia_runs[0]
        V = np.array(base.beamformers.V)
        v = V[0][:, 0]
        V[0][:, 0] = np.array([-np.conj(v[1]), np.conj(v[0])])
        other = _with(base, V=V)
        clusters = cluster_fixed_points([base, other, base])
        assert len(clusters) == 2
        assert sorted(c.count for c in clusters) == [1, 2]

    def test_rate_gap_splits(self, iia_runs):
        base = _with(iia_runs[0], rate=10.0)
        richer = _with(iia_runs[0], rate=11.0)
        clusters = cluster_fixed_points([base, richer])
        assert [c.label for c in clusters] == ["F1", "F2"]
        assert clusters[0].mean_rate == pytest.approx(11.0)
        assert clusters[0].members == [1]

    def test_unconverged_runs_are_skipped(self, iia_runs):
        failed = _with(iia_runs[0], converged=False)
        clusters = cluster_fixed_points([failed, iia_runs[0]])
        assert sum(c.count for c in clusters) == 1
        assert cluster_labels(2, clusters) == [UNCONVERGED, "F1"]

    def test_occupancy_sums_to_hundred(self, iia_runs):
        clusters = cluster_fixed_points(iia_runs)
        n = sum(c.count for c in clusters)
        assert sum(c.occupancy_percent(n) for c in clusters) == pytest.approx(100.0)

    def test_clusters_match_themselves(self, iia_runs):
        clusters = cluster_fixed_points(iia_runs)
        for cluster, partner, distance in match_clusters(clusters, clusters):
            assert partner is cluster
            assert distance < 1e-8

    def test_records_carry_labels(self, iia_runs):
        clusters = cluster_fixed_points(iia_runs)
        records = records_for(iia_runs, clusters, 80.0, "iia", 7)
        assert len(records) == len(iia_runs)
        assert {r.cluster_id for r in records} <= {c.label for c in clusters} | {UNCONVERGED}
        assert [r.init_seed for r in records] == [s.details["init_seed"] for s in iia_runs]


class TestSnrSweep:

    def test_single_point(self, ch20, cfg20):
        records = snr_sweep(ch20, cfg20, "max-sinr", [20.0], n_inits=3, seed=1)
        assert len(records) == 3
        assert all(r.snr_db == 20.0 and r.algorithm == "max-sinr" for r in records)
        assert all(r.channel_seed == ch20.seed for r in records)

    def test_same_initializations_at_every_point(self, ch20, cfg20):
        records = snr_sweep(ch20, cfg20, "max-sinr", [0.0, 20.0], n_inits=3, seed=1)
        seeds = [[r.init_seed for r in records if r.snr_db == snr] for snr in (0.0, 20.0)]
        assert seeds[0] == seeds[1] == task_seeds(1, 3)

    def test_iia_modes_do_not_move_with_snr(self, ch21, cfg21):
        records = snr_sweep(ch21, cfg21, "iia", [60.0, 80.0], n_inits=4, seed=9)
        trajectories = cluster_trajectories(records)
        assert len(trajectories) == 4
        assert (trajectories["transitions"] == 0).all()

    def test_occupancy_per_point(self, ch20, cfg20):
        records = snr_sweep(ch20, cfg20, "max-sinr", [0.0, 20.0], n_inits=4, seed=1)
        table = occupancy_table(records)
        for _, rows in table.groupby("snr_db"):
            assert rows["occupancy_percent"].sum() == pytest.approx(100.0)
            assert rows["count"].sum() <= 4


class TestTrajectories:

    def test_crossing_is_counted(self):
        records = [
            _record(0.0, "F1", 1), _record(10.0, "F2", 1), _record(20.0, "F2", 1),
            _record(0.0, "F1", 2), _record(10.0, "F1", 2), _record(20.0, "F1", 2),
        ]
        trajectories = cluster_trajectories(records).set_index("init_seed")
        assert trajectories.loc[1, "labels"] == "F1>F2>F2"
        assert trajectories.loc[1, "transitions"] == 1
        assert trajectories.loc[2, "transitions"] == 0

    def test_orders_by_snr(self):
        records = [_record(20.0, "F2", 1), _record(0.0, "F1", 1)]
        assert cluster_trajectories(records)["labels"].tolist() == ["F1>F2"]

    def test_accepts_frame(self):
        frame = pd.DataFrame([r.__dict__ for r in [_record(0.0, "F1", 1), _record(10.0, UNCONVERGED, 1)]])
        trajectories = cluster_trajectories(frame)
        assert trajectories["labels"].tolist() == [f"F1>{UNCONVERGED}"]

    def test_empty(self):
        assert cluster_trajectories([]).empty


class TestZfGap:

    def test_theoretical_values(self):
        assert theoretical_zf_gap(3, 2) == pytest.approx(3.0 / np.log(2.0))
        assert theoretical_zf_gap(3, 2) == pytest.approx(4.328, abs=1e-3)
        assert theoretical_zf_gap(3, 1) == 0.0

    def test_small_study(self):
        cfg = SystemConfig.from_snr_db(3, 4, 2, 60.0)
        report = zf_gap_study(cfg, n_channels=3, snr_db=60.0, seed=5)
        assert report.n_used + report.skipped == 3
        assert np.all(report.gaps > 0)
        assert report.theoretical == pytest.approx(theoretical_zf_gap(3, 2))
        assert report.snr_db == 60.0

    def test_std_error_needs_two_channels(self):
        cfg = SystemConfig.from_snr_db(3, 2, 1, 60.0)
        report = zf_gap_study(cfg, n_channels=1, snr_db=60.0, seed=5)
        assert np.isnan(report.std_error)


class TestHighSnrSlope:

    def test_rate_grows_with_degrees_of_freedom(self, ch42, ia42):
        rates = [
            two_layer_design(ch42, ia42, SystemConfig.from_snr_db(3, 4, 2, snr).total_power).total_rate
            for snr in (70.0, 80.0)
        ]
        assert rates[1] - rates[0] == pytest.approx(3 * 2 * np.log2(10.0), abs=0.15)


class TestFailureFraction:

    def test_fraction(self, iia_runs):
        failed = _with(iia_runs[0], converged=False)
        assert convergence_failure_fraction([failed, iia_runs[0]]) == 0.5
        assert convergence_failure_fraction([]) == 0.0


@pytest.mark.slow
class TestReproduction:

    @pytest.mark.parametrize("channel_seed", [1, 2, 3, 4, 5])
    def test_scalar_streams_have_two_aligned_modes(self, cfg21, channel_seed):
        ch = generate_channels(cfg21, channel_seed)
        clusters = cluster_fixed_points(multi_start(ch, cfg21, "iia", 500, seed=2024))
        assert len(clusters) == 2

    def test_two_stream_modes_reach_six(self, cfg42):
        counts = []
        for channel_seed in (11, 12, 13, 14, 15):
            ch = generate_channels(cfg42, channel_seed)
            counts.append(len(cluster_fixed_points(multi_start(ch, cfg42, "iia", 500, seed=2024))))
        assert all(1 <= n <= 6 for n in counts)
        assert sum(n == 6 for n in counts) >= 3

    def test_every_aligned_mode_has_full_slope(self, ch42, cfg42):
        clusters = cluster_fixed_points(multi_start(ch42, cfg42, "iia", 200, seed=2024))
        for cluster in clusters:
            inner = cluster.representative.beamformers
            rates = [
                two_layer_design(ch42, inner, SystemConfig.from_snr_db(3, 4, 2, snr).total_power).total_rate
                for snr in (70.0, 80.0)
            ]
            assert rates[1] - rates[0] == pytest.approx(3 * 2 * np.log2(10.0), abs=0.15)

    def test_zf_gap_matches_theory(self):
        cfg = SystemConfig.from_snr_db(3, 4, 2, 60.0)
        report = zf_gap_study(cfg, n_channels=100, snr_db=60.0, seed=2024)
        assert report.mean == pytest.approx(theoretical_zf_gap(3, 2), abs=0.5)

    def test_max_sinr_modes_coincide_with_two_layer_modes(self, ch42):
        cfg = SystemConfig.from_snr_db(3, 4, 2, 40.0)
        sinr = cluster_fixed_points(multi_start(ch42, cfg, "max-sinr", 200, seed=2024))
        optimal = cluster_fixed_points(multi_start(ch42, cfg, "two-layer", 200, seed=2024))
        assert sinr
        for cluster, partner, distance in match_clusters(sinr, optimal):
            assert distance < 1e-2
            assert cluster.mean_rate == pytest.approx(partner.mean_rate, abs=0.2)
