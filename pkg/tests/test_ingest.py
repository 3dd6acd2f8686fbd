"""CSV parsing, train-only scaling, window slicing, and the split layout."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phasecoh.ingest import (IngestError, Scaler, SensorWindow, SplitSpec,
                             TimeSeriesFrame, fit_scaler, load_csv,
                             make_splits, slice_windows)


def write_csv(path, header, rows):
    path.write_text("\n".join([",".join(header)]
                              + [",".join(str(c) for c in row) for row in rows])
                    + "\n")
    return path


def make_frame(values, labels=None):
    values = np.asarray(values, dtype=np.float64)
    labels = np.zeros(len(values), dtype=int) if labels is None else labels
    return TimeSeriesFrame(values=values, labels=labels,
                           channel_names=[f"s{i}" for i in range(values.shape[1])],
                           timestamps=np.arange(len(values)))


IDENTITY2 = Scaler(mean=np.zeros(2), std=np.ones(2))


class TestLoadCsv:
    def test_basic_parse(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", ["a", "b", "c", "label"],
                         [[1, 2, 3, 0], [4, 5, 6, 0], [7, 8, 9, 1], [1, 1, 1, 0]])
        frame = load_csv(path, label_column="label")
        assert frame.n_rows == 4 and frame.n_channels == 3
        np.testing.assert_array_equal(frame.labels, [0, 0, 1, 0])
        assert frame.channel_names == ["a", "b", "c"]
        np.testing.assert_array_equal(frame.timestamps, np.arange(4))

    def test_string_labels_mapped(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", ["x", "label"],
                         [[1.5, "Normal"], [2.5, "Attack"], [3.5, "normal"]])
        frame = load_csv(path, label_column="label")
        np.testing.assert_array_equal(frame.labels, [0, 1, 0])

    def test_unknown_label_is_error(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", ["x", "label"], [[1.0, "maybe"]])
        with pytest.raises(IngestError, match="row 1.*maybe"):
            load_csv(path, label_column="label")

    def test_non_numeric_cell_names_row_and_column(self, tmp_path):
        rows = [[float(i), 0] for i in range(10)]
        rows[6][0] = "oops"  # 7th data row
        path = write_csv(tmp_path / "d.csv", ["press", "label"], rows)
        with pytest.raises(IngestError, match="row 7.*'press'.*oops"):
            load_csv(path, label_column="label")

    def test_missing_label_column(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", ["a", "b"], [[1, 2]])
        with pytest.raises(IngestError, match="label column 'label' not found"):
            load_csv(path, label_column="label")

    def test_empty_file(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("")
        with pytest.raises(IngestError, match="empty"):
            load_csv(path, label_column="label")

    def test_header_only(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,label\n")
        with pytest.raises(IngestError, match="no data rows"):
            load_csv(path, label_column="label")

    def test_timestamp_column_and_drop(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", ["ts", "a", "junk", "label"],
                         [[10, 1.0, 9, 0], [20, 2.0, 9, 0]])
        frame = load_csv(path, label_column="label", drop_columns=["junk"],
                         timestamp_column="ts")
        assert frame.channel_names == ["a"]
        np.testing.assert_array_equal(frame.timestamps, [10, 20])

    def test_non_monotone_timestamps_rejected(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", ["ts", "a", "label"],
                         [[5, 1.0, 0], [5, 2.0, 0]])
        with pytest.raises(IngestError, match="strictly increasing"):
            load_csv(path, label_column="label", timestamp_column="ts")

    def test_header_whitespace_stripped(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", [" a ", " label"], [[1.0, 0]])
        frame = load_csv(path, label_column="label")
        assert frame.channel_names == ["a"]


class TestScaler:
    def test_constant_channel_floored(self):
        frame = make_frame(np.full((10, 2), 5.0))
        scaler = fit_scaler(frame, range(0, 10))
        np.testing.assert_array_equal(scaler.mean, [5.0, 5.0])
        np.testing.assert_array_equal(scaler.std, [1e-8, 1e-8])

    def test_two_point_population_convention(self):
        frame = make_frame([[1.0, 1.0], [3.0, 3.0]])
        scaler = fit_scaler(frame, range(0, 2))
        np.testing.assert_array_equal(scaler.mean, [2.0, 2.0])
        np.testing.assert_array_equal(scaler.std, [1.0, 1.0])  # divide-by-N

    def test_attack_rows_never_influence_statistics(self, rng):
        normal = rng.normal(size=(50, 3))
        attacked = np.vstack([normal, rng.normal(size=(20, 3)) * 100 + 7])
        labels = np.concatenate([np.zeros(50, int), np.ones(20, int)])
        f_normal = make_frame(normal)
        f_both = TimeSeriesFrame(values=attacked, labels=labels,
                                 channel_names=f_normal.channel_names,
                                 timestamps=np.arange(70))
        a = fit_scaler(f_normal, range(0, 50))
        b = fit_scaler(f_both, range(0, 50))
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.std, b.std)

    def test_empty_range_rejected(self):
        frame = make_frame(np.zeros((5, 1)))
        with pytest.raises(IngestError, match="empty"):
            fit_scaler(frame, range(3, 3))

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=30))
    def test_round_trip(self, column):
        frame = make_frame(np.array(column)[:, None])
        scaler = fit_scaler(frame, range(0, len(column)))
        x = frame.values
        back = scaler.inverse(scaler.apply(x))
        np.testing.assert_allclose(back, x, rtol=1e-9, atol=1e-9)


class TestSliceWindows:
    def test_non_overlapping_counts(self, rng):
        frame = make_frame(rng.normal(size=(100, 2)))
        windows = slice_windows(frame, IDENTITY2, 60, 60)
        assert len(windows) == 1 and windows[0].start_index == 0

    def test_strided_counts(self, rng):
        frame = make_frame(rng.normal(size=(100, 2)))
        windows = slice_windows(frame, IDENTITY2, 60, 5)
        assert [w.start_index for w in windows] == list(range(0, 45, 5))
        assert len(windows) == 9

    def test_attack_outside_window_not_labeled(self, rng):
        labels = np.zeros(100, int)
        labels[75] = 1
        frame = make_frame(rng.normal(size=(100, 2)), labels)
        windows = slice_windows(frame, IDENTITY2, 60, 60)
        assert len(windows) == 1 and windows[0].label == 0

    def test_too_short_frame_rejected(self, rng):
        frame = make_frame(rng.normal(size=(10, 2)))
        with pytest.raises(IngestError, match="10 rows"):
            slice_windows(frame, IDENTITY2, 60, 60)

    def test_scaling_applied(self, rng):
        frame = make_frame(rng.normal(size=(80, 2)) * 3 + 5)
        scaler = fit_scaler(frame, range(0, 80))
        windows = slice_windows(frame, scaler, 60, 60)
        np.testing.assert_allclose(windows[0].data,
                                   scaler.apply(frame.values[:60]), rtol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(t=st.integers(1, 200), w=st.integers(1, 50), stride=st.integers(1, 40))
    def test_count_formula_vs_enumeration(self, t, w, stride):
        if t < w:
            return
        frame = make_frame(np.zeros((t, 1)))
        scaler = Scaler(mean=np.zeros(1), std=np.ones(1))
        windows = slice_windows(frame, scaler, w, stride)
        brute = [s for s in range(0, t, stride) if s + w <= t]
        assert len(windows) == (t - w) // stride + 1 == len(brute)

    @settings(max_examples=100, deadline=None)
    @given(labels=st.lists(st.integers(0, 1), min_size=8, max_size=60),
           w=st.integers(2, 8), stride=st.integers(1, 5))
    def test_label_is_or_of_covered_steps(self, labels, w, stride):
        if len(labels) < w:
            return
        labels = np.array(labels)
        frame = make_frame(np.zeros((len(labels), 1)), labels)
        scaler = Scaler(mean=np.zeros(1), std=np.ones(1))
        for window in slice_windows(frame, scaler, w, stride):
            s = window.start_index
            assert window.label == int(labels[s:s + w].any())


class TestMakeSplits:
    def test_default_boundaries(self, rng):
        normal = make_frame(rng.normal(size=(1000, 2)))
        attack = make_frame(rng.normal(size=(200, 2)),
                            np.ones(200, int))
        splits = make_splits(normal, attack, SplitSpec(), 60)
        assert splits.boundaries["train_rows"] == [0, 750]
        assert splits.boundaries["val_rows"] == [750, 850]
        assert splits.boundaries["holdout_rows"] == [850, 1000]
        # 750 train rows, stride 5, W=60 -> starts 0..690
        assert len(splits.train) == 139
        assert len(splits.val) == 1 and len(splits.holdout) == 2
        assert all(w.label == 1 for w in splits.attack)

    def test_scaler_fitted_on_train_rows_only(self, rng):
        values = rng.normal(size=(1000, 2))
        normal = make_frame(values)
        attack = make_frame(rng.normal(size=(100, 2)) * 50)
        splits = make_splits(normal, attack, SplitSpec(), 60)
        expect = fit_scaler(normal, range(0, 750))
        np.testing.assert_array_equal(splits.scaler.mean, expect.mean)
        np.testing.assert_array_equal(splits.scaler.std, expect.std)

    def test_channel_mismatch_rejected(self, rng):
        normal = make_frame(rng.normal(size=(500, 2)))
        attack = TimeSeriesFrame(values=rng.normal(size=(100, 2)),
                                 labels=np.zeros(100, int),
                                 channel_names=["x", "y"],
                                 timestamps=np.arange(100))
        with pytest.raises(IngestError, match="do not match"):
            make_splits(normal, attack, SplitSpec(), 60)

    def test_attack_labels_in_normal_frame_rejected(self, rng):
        labels = np.zeros(500, int)
        labels[3] = 1
        normal = make_frame(rng.normal(size=(500, 2)), labels)
        attack = make_frame(rng.normal(size=(100, 2)))
        with pytest.raises(IngestError, match="attack labels"):
            make_splits(normal, attack, SplitSpec(), 60)

    def test_fraction_validation(self):
        with pytest.raises(IngestError, match="sum to 1"):
            SplitSpec(train_frac=0.5, val_frac=0.1, holdout_frac=0.1).validate()
        with pytest.raises(IngestError, match="positive"):
            SplitSpec(train_frac=0.9, val_frac=-0.1, holdout_frac=0.2).validate()
        with pytest.raises(IngestError, match="train_stride"):
            SplitSpec(train_stride=0).validate()


class TestFrameValidation:
    def test_bad_labels(self):
        with pytest.raises(IngestError, match="labels"):
            TimeSeriesFrame(values=np.zeros((3, 1)), labels=np.array([0, 2, 0]),
                            channel_names=["a"], timestamps=np.arange(3))

    def test_length_mismatch(self):
        with pytest.raises(IngestError, match="length"):
            TimeSeriesFrame(values=np.zeros((3, 1)), labels=np.zeros(2, int),
                            channel_names=["a"], timestamps=np.arange(3))

    def test_window_label_validation(self):
        with pytest.raises(IngestError, match="label"):
            SensorWindow(data=np.zeros((4, 2)), start_index=0, label=3)
