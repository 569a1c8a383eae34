import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from trendlab.timeseries import (
    AssetPanel,
    DataError,
    TimeSeries,
    align,
    cumulate,
    diff,
    load_csv,
    write_csv,
)


def _write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestTimeSeries:
    def test_rejects_unsorted_timestamps(self):
        with pytest.raises(DataError, match="increasing"):
            TimeSeries(np.array([0, 2, 1]), np.array([1.0, 2.0, 3.0]))

    def test_rejects_duplicate_timestamps(self):
        with pytest.raises(DataError):
            TimeSeries(np.array([0, 1, 1]), np.array([1.0, 2.0, 3.0]))

    def test_rejects_nonfinite(self):
        with pytest.raises(DataError):
            TimeSeries.from_values([1.0, np.nan, 2.0])

    def test_rejects_empty(self):
        with pytest.raises(DataError):
            TimeSeries.from_values([])

    def test_slicing_keeps_timestamps(self):
        ts = TimeSeries.from_values([1.0, 2.0, 4.0, 8.0], start=10)
        sub = ts[1:3]
        assert_array_equal(sub.timestamps, [11, 12])
        assert_array_equal(sub.values, [2.0, 4.0])

    def test_array_protocol(self):
        ts = TimeSeries.from_values([1.0, 2.0])
        assert_array_equal(np.asarray(ts), [1.0, 2.0])


class TestDiff:
    def test_arithmetic(self):
        assert_array_equal(diff(np.array([100.0, 101.0, 99.5])), [1.0, -1.5])

    def test_log(self):
        assert_allclose(diff(np.array([1.0, np.e]), log=True), [1.0])

    def test_log_rejects_nonpositive(self):
        with pytest.raises(DataError):
            diff(np.array([1.0, 0.0]), log=True)

    def test_cumulate_inverts_diff(self):
        s = np.array([5.0, 3.0, 4.0, 10.0])
        assert_allclose(cumulate(diff(s), s[0]), s)

    def test_timeseries_stamps_at_later_tick(self):
        ts = TimeSeries.from_values([1.0, 3.0, 6.0])
        d = diff(ts)
        assert_array_equal(d.timestamps, [1, 2])
        assert_array_equal(d.values, [2.0, 3.0])


class TestLoadCsv:
    def test_basic(self, tmp_path):
        p = _write(tmp_path, "date,A,B\n2020-01-01,1,10\n2020-01-02,2,11\n")
        panel = load_csv(p)
        assert panel.names == ["A", "B"]
        assert_array_equal(panel.series["B"].values, [10.0, 11.0])
        assert panel.timestamps.dtype.kind == "M"

    def test_reverse_chronological_rows_are_sorted(self, tmp_path):
        p = _write(tmp_path, "date,A\n2020-01-02,1\n2020-01-01,2\n")
        assert_array_equal(load_csv(p).series["A"].values, [2.0, 1.0])

    def test_duplicate_rows_rejected(self, tmp_path):
        p = _write(tmp_path, "date,A\n2020-01-01,1\n2020-01-01,2\n")
        with pytest.raises(DataError, match="row 3"):
            load_csv(p)

    def test_nan_rejected_by_default(self, tmp_path):
        p = _write(tmp_path, "date,A\n2020-01-01,1\n2020-01-02,\n")
        with pytest.raises(DataError, match="row 3"):
            load_csv(p)

    def test_missing_skip(self, tmp_path):
        p = _write(tmp_path, "date,A,B\n2020-01-01,1,5\n2020-01-02,,6\n2020-01-03,3,7\n")
        panel = load_csv(p, missing="skip")
        # inner join drops the row where A is missing
        assert len(panel.timestamps) == 2
        assert_array_equal(panel.series["B"].values, [5.0, 7.0])

    def test_header_only_rejected(self, tmp_path):
        p = _write(tmp_path, "date,A\n")
        with pytest.raises(DataError):
            load_csv(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_csv(tmp_path / "nope.csv")

    def test_three_rows_one_column(self, tmp_path):
        p = _write(tmp_path, "date,SPX\n2020-01-01,1\n2020-01-02,2\n2020-01-03,4\n")
        assert len(load_csv(p).series["SPX"]) == 3

    def test_disjoint_dates_inner_join(self, tmp_path):
        p = _write(tmp_path, "date,A,B\n2020-01-01,1,\n2020-01-02,2,5\n2020-01-03,,6\n")
        panel = load_csv(p, missing="skip")
        assert_array_equal(panel.timestamps, [np.datetime64("2020-01-02")])

    def test_column_spec(self, tmp_path):
        p = _write(tmp_path, "date,A,B\n2020-01-01,1,5\n2020-01-02,2,6\n")
        assert load_csv(p, ["B"]).names == ["B"]
        assert load_csv(p, {"A": "alpha"}).names == ["alpha"]
        with pytest.raises(DataError):
            load_csv(p, ["C"])

    def test_integer_ticks(self, tmp_path):
        p = _write(tmp_path, "tick,A\n0,1\n1,2\n5,3\n")
        panel = load_csv(p)
        assert_array_equal(panel.timestamps, [0, 1, 5])

    def test_write_round_trip(self, tmp_path):
        p = tmp_path / "out.csv"
        vals = np.array([0.1, 1 / 3, -2.5e-17])
        write_csv(p, ["tick", "A"], [np.arange(3), vals])
        back = load_csv(p)
        assert_array_equal(back.series["A"].values, vals)


class TestAlign:
    def _ragged(self):
        a = TimeSeries(np.array([0, 1, 2, 3]), np.array([1.0, 2.0, 3.0, 4.0]), "a")
        b = TimeSeries(np.array([1, 3, 4]), np.array([10.0, 30.0, 40.0]), "b")
        return AssetPanel({"a": a, "b": b})

    def test_inner(self):
        out = align(self._ragged(), "inner")
        assert_array_equal(out.timestamps, [1, 3])
        assert_array_equal(out.series["a"].values, [2.0, 4.0])

    def test_outer_forward_fills_and_marks(self):
        out = align(self._ragged(), "outer")
        assert_array_equal(out.timestamps, [1, 2, 3, 4])
        assert_array_equal(out.series["b"].values, [10.0, 10.0, 30.0, 40.0])
        assert out.fill_mask["b"].tolist() == [False, True, False, False]
        assert out.fill_mask["a"].tolist() == [False, False, False, True]

    @pytest.mark.parametrize("policy", ["inner", "outer"])
    def test_idempotent(self, policy):
        once = align(self._ragged(), policy)
        twice = align(once, policy)
        assert_array_equal(once.matrix(), twice.matrix())
        assert all((once.fill_mask[k] == twice.fill_mask[k]).all() for k in once.names)

    def test_unknown_policy(self):
        with pytest.raises(ValueError):
            align(self._ragged(), "left")

    def test_from_matrix(self):
        panel = AssetPanel.from_matrix(np.arange(6.0).reshape(3, 2), ["x", "y"])
        assert panel.is_aligned()
        assert_array_equal(panel.matrix()[:, 1], [1.0, 3.0, 5.0])
