import json

import numpy as np
import pandas as pd
import pytest

from src.alignment import two_layer_design
from src.channel import SystemConfig, generate_channels
from src.errors import PersistenceError, SchemaVersionError
from src.experiments import SweepRecord, cluster_fixed_points, multi_start
from src.persistence import (
    SCHEMA_VERSION,
    SWEEP_COLUMNS,
    decode_complex,
    encode_complex,
    load_channels,
    load_run,
    load_solution,
    load_two_layer,
    read_json,
    read_sweep_csv,
    save_channels,
    save_run,
    save_solution,
    save_two_layer,
    write_json,
    write_sweep_csv,
    write_trace_csv,
)


@pytest.fixture(scope="module")
def cfg10():
    return SystemConfig.from_snr_db(3, 4, 2, 10.0)


@pytest.fixture(scope="module")
def runs(ch42, cfg10):
    return multi_start(ch42, cfg10, "max-sinr", 3, seed=4)


def _records():
    return [
        SweepRecord(0.0, "max-sinr", "F1", 12.345678901234567, 66.66666666666667, 7, 101),
        SweepRecord(0.0, "max-sinr", "unconverged", 3.0, float("nan"), 7, 102),
        SweepRecord(10.0, "iia", "F2", 1e-3, 100.0, 7, 103),
    ]


def assert_solutions_equal(a, b):
    np.testing.assert_array_equal(a.beamformers.V, b.beamformers.V)
    np.testing.assert_array_equal(a.beamformers.U, b.beamformers.U)
    assert a.beamformers.orthonormal == b.beamformers.orthonormal
    np.testing.assert_array_equal(a.powers.powers, b.powers.powers)
    assert a.algorithm == b.algorithm
    assert a.iterations == b.iterations
    assert a.converged == b.converged
    assert a.final_displacement == b.final_displacement
    assert a.rate.total == b.rate.total
    np.testing.assert_array_equal(a.rate.per_user, b.rate.per_user)
    assert a.alignment.cross_terms == b.alignment.cross_terms
    np.testing.assert_array_equal(a.alignment.interference_rank, b.alignment.interference_rank)
    assert a.details == b.details


class TestComplexEncoding:

    def test_pairs(self):
        assert encode_complex(np.array([1 + 2j, -0.5j])) == [[1.0, 2.0], [0.0, -0.5]]

    def test_rejects_non_pairs(self):
        with pytest.raises(ValueError):
            decode_complex([[1.0, 2.0, 3.0]])


class TestChannels:

    def test_round_trip_is_bit_exact(self, tmp_path):
        ch = generate_channels(SystemConfig(K=3, M=2, d=1), 42)
        path = tmp_path / "ch.json"
        save_channels(ch, path)
        loaded = load_channels(path)
        assert loaded == ch
        assert loaded.seed == 42

    def test_document_layout(self, tmp_path):
        ch = generate_channels(SystemConfig(K=2, M=2, d=1), 3)
        path = tmp_path / "ch.json"
        save_channels(ch, path)
        document = json.loads(path.read_text())
        assert document["schema_version"] == SCHEMA_VERSION
        assert document["kind"] == "channels"
        assert (document["K"], document["M"], document["seed"]) == (2, 2, 3)
        assert np.asarray(document["H"]).shape == (2, 2, 2, 2, 2)
        assert document["H"][0][1][1][0] == [ch.H[0, 1, 1, 0].real, ch.H[0, 1, 1, 0].imag]

    def test_missing_file(self, tmp_path):
        with pytest.raises(PersistenceError) as info:
            load_channels(tmp_path / "nope.json")
        assert "nope.json" in info.value.path

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(PersistenceError):
            load_channels(path)

    def test_future_schema(self, tmp_path):
        path = tmp_path / "future.json"
        path.write_text(json.dumps({"schema_version": SCHEMA_VERSION + 1, "kind": "channels"}))
        with pytest.raises(SchemaVersionError):
            load_channels(path)

    def test_wrong_kind(self, tmp_path):
        path = tmp_path / "other.json"
        write_json({"x": 1}, path, "solution")
        with pytest.raises(PersistenceError):
            read_json(path, "channels")

    def test_incomplete_document(self, tmp_path):
        path = tmp_path / "partial.json"
        write_json({"seed": 1}, path, "channels")
        with pytest.raises(PersistenceError):
            load_channels(path)


class TestSolutions:

    def test_solution_round_trip(self, runs, tmp_path):
        path = tmp_path / "solution.json"
        save_solution(runs[0], path)
        assert_solutions_equal(load_solution(path), runs[0])

    def test_run_round_trip(self, runs, tmp_path):
        clusters = cluster_fixed_points(runs)
        path = tmp_path / "run.json"
        save_run(path, runs, clusters, {"snr_db": 10.0})
        solutions, loaded_clusters, meta = load_run(path)
        assert meta == {"snr_db": 10.0}
        assert len(solutions) == len(runs)
        for a, b in zip(solutions, runs):
            assert_solutions_equal(a, b)
        assert [c.label for c in loaded_clusters] == [c.label for c in clusters]
        assert [c.members for c in loaded_clusters] == [c.members for c in clusters]
        assert [c.mean_rate for c in loaded_clusters] == [c.mean_rate for c in clusters]

    def test_two_layer_round_trip(self, ch42, cfg42, ia42, tmp_path):
        design = two_layer_design(ch42, ia42, cfg42.total_power)
        path = tmp_path / "design.json"
        save_two_layer(design, path)
        loaded = load_two_layer(path)
        np.testing.assert_array_equal(loaded.outer_tx, design.outer_tx)
        np.testing.assert_array_equal(loaded.singular_values, design.singular_values)
        np.testing.assert_array_equal(loaded.composed.V, design.composed.V)
        assert loaded.water_level == design.water_level
        assert loaded.total_rate == design.total_rate
        assert loaded.kind == "optimal"

    def test_unwritable_path(self, runs, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(PersistenceError):
            save_solution(runs[0], blocker / "solution.json")


class TestSweepCsv:

    def test_fixed_header(self, tmp_path):
        path = tmp_path / "sweep.csv"
        write_sweep_csv(_records(), path)
        header = path.read_text().splitlines()[0]
        assert header == "snr_db,algorithm,cluster_id,rate_bits,occupancy_percent,channel_seed,init_seed"
        assert header.split(",") == SWEEP_COLUMNS

    def test_round_trip(self, tmp_path):
        path = tmp_path / "sweep.csv"
        write_sweep_csv(_records(), path)
        loaded = read_sweep_csv(path)
        assert len(loaded) == 3
        assert loaded[0] == _records()[0]
        assert np.isnan(loaded[1].occupancy_percent)
        assert loaded[1].cluster_id == "unconverged"
        assert loaded[2].rate_bits == 1e-3

    def test_append_keeps_one_header(self, tmp_path):
        path = tmp_path / "sweep.csv"
        write_sweep_csv(_records()[:1], path, append=True)
        write_sweep_csv(_records()[1:], path, append=True)
        lines = path.read_text().splitlines()
        assert len(lines) == 4
        assert sum(line.startswith("snr_db") for line in lines) == 1

    def test_foreign_csv_rejected(self, tmp_path):
        path = tmp_path / "other.csv"
        pd.DataFrame({"a": [1]}).to_csv(path, index=False)
        with pytest.raises(PersistenceError):
            read_sweep_csv(path)

    def test_trace_csv(self, tmp_path):
        path = tmp_path / "trace.csv"
        write_trace_csv([{"iter": 1, "displacement": 0.5}, {"iter": 2, "displacement": 0.25}], path)
        frame = pd.read_csv(path)
        assert frame["displacement"].tolist() == [0.5, 0.25]
