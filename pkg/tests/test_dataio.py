"""Serialization round-trips, standardization, grids, scatter and reports."""

from __future__ import annotations

import numpy as np
import pytest

from macrobottle import dataio, datagen
from macrobottle.errors import DataError, ParseError


class TestMatrixCsv:
    def test_small_round_trip_bit_exact(self, tmp_path):
        m = np.array([[1.0 / 3.0, 2.0], [-1.7976931348623157e308, 5e-324]])
        path = tmp_path / "m.csv"
        dataio.save_matrix_csv(path, m)
        loaded, header = dataio.load_matrix_csv(path)
        assert header == ["c0", "c1"]
        assert np.array_equal(loaded, m)

    def test_pair_round_trip(self, tmp_path):
        pair = datagen.gen_main_synthetic(50, seed=0)
        dataio.save_pair(tmp_path, pair)
        loaded = dataio.load_pair_csv(tmp_path / "X.csv", tmp_path / "Y.csv")
        assert np.array_equal(loaded.x, pair.x)
        assert np.array_equal(loaded.y, pair.y)

    def test_row_count_mismatch(self, tmp_path):
        dataio.save_matrix_csv(tmp_path / "a.csv", np.zeros((3, 2)))
        dataio.save_matrix_csv(tmp_path / "b.csv", np.zeros((2, 2)))
        with pytest.raises(DataError):
            dataio.load_pair_csv(tmp_path / "a.csv", tmp_path / "b.csv")

    def test_parse_error_carries_line_number(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1.0,2.0\n3.0,oops\n")
        with pytest.raises(ParseError) as exc:
            dataio.load_matrix_csv(path)
        assert exc.value.line == 3

    def test_wrong_column_count_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1.0,2.0\n3.0\n")
        with pytest.raises(ParseError) as exc:
            dataio.load_matrix_csv(path)
        assert exc.value.line == 3

    def test_non_finite_rejected_on_load(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a\nnan\n")
        with pytest.raises(ParseError):
            dataio.load_matrix_csv(path)

    def test_non_finite_rejected_on_save(self, tmp_path):
        with pytest.raises(DataError):
            dataio.save_matrix_csv(tmp_path / "m.csv", np.array([[np.inf]]))


class TestStandardize:
    def test_already_standardized_identity(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(500, 3))
        x = (x - x.mean(axis=0)) / x.std(axis=0)
        y = rng.normal(size=(500, 2))
        y = (y - y.mean(axis=0)) / y.std(axis=0)
        pair = datagen.DatasetPair(x, y)
        out, stats = dataio.standardize(pair)
        assert np.abs(out.x - x).max() < 1e-12
        assert np.abs(out.y - y).max() < 1e-12

    def test_constant_column_untouched_and_flagged(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(100, 2))
        x[:, 1] = 7.0
        pair = datagen.DatasetPair(x, rng.normal(size=(100, 2)))
        out, stats = dataio.standardize(pair)
        assert stats.constant_columns_x == [1]
        assert np.array_equal(out.x[:, 1], x[:, 1])

    def test_inverse_recovers_originals(self):
        pair = datagen.gen_main_synthetic(200, seed=2)
        out, stats = dataio.standardize(pair)
        rx, ry = stats.invert(out.x, out.y)
        assert np.abs(rx - pair.x).max() < 1e-12
        assert np.abs(ry - pair.y).max() < 1e-12

    def test_train_split_statistics_used(self):
        pair = datagen.gen_main_synthetic(1000, seed=3)
        out, stats = dataio.standardize(pair)
        tr = pair.rows(datagen.TRAIN)
        assert abs(out.x[tr].mean()) < 1e-12
        # non-train rows keep slight offsets
        assert abs(out.x.mean()) > 0


class _StubHalf:
    """Macrovariable = (left-half mean, right-half mean) of each sample."""

    def encode_mean(self, data):
        img = data.reshape(-1, 8, 8)
        return np.column_stack([img[:, :, :4].mean(axis=(1, 2)),
                                img[:, :, 4:].mean(axis=(1, 2))])


class _StubModel:
    net_x = _StubHalf()
    net_y = _StubHalf()


class TestAnomalyGrids:
    def test_k_equals_n_gives_zeros(self):
        pair = datagen.gen_main_synthetic(100, seed=4)
        layout = dataio.GridLayout(8, 8)
        hi, lo = dataio.anomaly_grids(_StubModel(), pair, layout, 0, k=100, side="x")
        assert np.abs(hi).max() < 1e-12
        assert np.abs(lo).max() < 1e-12

    def test_x1_neuron_localizes_left_half(self):
        pair = datagen.gen_main_synthetic(2000, seed=5)
        layout = dataio.GridLayout(8, 8)
        hi, lo = dataio.anomaly_grids(_StubModel(), pair, layout, 0, k=40, side="x")
        assert np.abs(hi[:, :4]).min() > np.abs(hi[:, 4:]).max()
        assert np.abs(lo[:, :4]).min() > np.abs(lo[:, 4:]).max()

    def test_shape_matches_layout(self, tmp_path):
        pair = datagen.gen_main_synthetic(60, seed=6)
        layout = dataio.GridLayout(8, 8)
        dataio.emit_anomaly_grid(tmp_path / "hi.csv", tmp_path / "lo.csv",
                                 _StubModel(), pair, layout, 1, k=5, side="y")
        hi, _ = dataio.load_matrix_csv(tmp_path / "hi.csv")
        assert hi.shape == (8, 8)

    def test_layout_mismatch(self):
        pair = datagen.gen_main_synthetic(10, seed=7)
        with pytest.raises(DataError):
            dataio.anomaly_grids(_StubModel(), pair, dataio.GridLayout(9, 55), 0, 5)

    def test_uninformative_neuron_warns(self):
        pair = datagen.gen_main_synthetic(50, seed=8)
        layout = dataio.GridLayout(8, 8)
        with pytest.warns(UserWarning):
            dataio.anomaly_grids(_StubModel(), pair, layout, 1, k=5, side="x",
                                 informative=False)

    def test_layout_json_round_trip(self, tmp_path):
        layout = dataio.GridLayout(9, 55, "zonal-wind", "sea-surface-temperature")
        layout.save(tmp_path / "layout.json")
        again = dataio.GridLayout.load(tmp_path / "layout.json")
        assert again == layout


class TestResidualScatter:
    def make_artifacts(self, n=50, seed=0):
        rng = np.random.default_rng(seed)
        groups = {}
        for g in ("fwd_raw", "rev_raw", "fwd_transformed", "rev_transformed"):
            value = rng.normal(size=n)
            pred = rng.normal(size=n)
            groups[g] = {"value": value, "prediction": pred,
                         "counterpart": rng.normal(size=n),
                         "residual": value - pred}
        return groups

    def test_row_count_and_residual_identity(self, tmp_path):
        art = self.make_artifacts(n=64)
        path = tmp_path / "scatter.csv"
        dataio.emit_residual_scatter(path, art)
        m, header = dataio.load_matrix_csv(path)
        assert m.shape[0] == 64
        iv = header.index("fwd_transformed_value")
        ip = header.index("fwd_transformed_prediction")
        ir = header.index("fwd_transformed_residual")
        assert np.abs((m[:, iv] - m[:, ip]) - m[:, ir]).max() < 1e-12

    def test_missing_group_rejected(self, tmp_path):
        art = self.make_artifacts()
        del art["rev_raw"]
        with pytest.raises(DataError):
            dataio.emit_residual_scatter(tmp_path / "s.csv", art)


class TestRunReport:
    def make_report(self):
        return dataio.RunReport(
            seed=3,
            config={"beta": 0.01},
            metrics={"informative_x": 2, "informative_y": 2,
                     "ev_y_from_x": 0.8, "ev_x_from_y": 0.79,
                     "cross_ev_y_from_x": 0.9, "cross_ev_x_from_y": float("nan"),
                     "kl_x": [0.0, 2.0], "kl_y": [1.0, np.inf],
                     "epochs_run": 10, "early_stopped": False},
            timing_seconds=1.25,
            loss_history={"recon_x": [1.0, 0.5]},
        )

    def test_round_trip_and_nan_to_null(self, tmp_path):
        path = tmp_path / "report.json"
        dataio.save_report(path, self.make_report())
        doc = dataio.load_report(path)
        assert doc["metrics"]["cross_ev_x_from_y"] is None
        assert doc["metrics"]["kl_y"][1] is None
        assert doc["metrics"]["ev_y_from_x"] == 0.8

    def test_schema_rejects_malformed(self):
        with pytest.raises(Exception):
            dataio.validate_report({"schema_version": 1, "kind": "run_report"})
