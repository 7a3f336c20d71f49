import math

import numpy as np
import pytest

from fegan.errors import (
    DuplicateDate,
    EmptyFile,
    MissingColumn,
    NonPositivePrice,
    SeriesTooShort,
    UnparsableRow,
)
from fegan.ingest import (
    CleanSeries,
    RawSeries,
    clean,
    context_target_pairs,
    load_csv,
    pair_at,
    sample_windows,
)


def write(tmp_path, text, name="prices.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadCsv:
    def test_three_rows(self, tmp_path):
        path = write(tmp_path, "date,value\n2014-01-02,14.2\n2014-01-03,13.8\n2014-01-06,13.1\n")
        raw = load_csv(path)
        assert len(raw) == 3
        assert [d.isoformat() for d in raw.dates] == ["2014-01-02", "2014-01-03", "2014-01-06"]
        np.testing.assert_array_equal(raw.values, [14.2, 13.8, 13.1])

    def test_bad_value_line_4(self, tmp_path):
        path = write(tmp_path, "date,value\n2014-01-02,1\n2014-01-03,2\n2014-01-06,abc\n")
        with pytest.raises(UnparsableRow) as info:
            load_csv(path)
        assert info.value.line == 4

    def test_bad_date(self, tmp_path):
        path = write(tmp_path, "date,value\n2014-13-02,1\n")
        with pytest.raises(UnparsableRow) as info:
            load_csv(path)
        assert info.value.line == 2

    def test_descending_equals_ascending(self, tmp_path):
        rows = [("2014-01-02", "14.2"), ("2014-01-03", "13.8"), ("2014-01-06", "13.1"),
                ("2014-01-07", "12.9")]
        up = write(tmp_path, "date,value\n" + "".join(f"{d},{v}\n" for d, v in rows), "up.csv")
        down = write(tmp_path, "date,value\n" + "".join(f"{d},{v}\n" for d, v in rows[::-1]),
                     "down.csv")
        a, b = load_csv(up), load_csv(down)
        assert a.dates == b.dates
        np.testing.assert_array_equal(a.values, b.values)

    def test_custom_columns(self, tmp_path):
        path = write(tmp_path, "Date,Open,Close\n2014-01-02,1,14.2\n2014-01-03,1,13.8\n")
        raw = load_csv(path, "Date", "Close")
        np.testing.assert_array_equal(raw.values, [14.2, 13.8])

    def test_missing_column(self, tmp_path):
        path = write(tmp_path, "date,close\n2014-01-02,1\n")
        with pytest.raises(MissingColumn):
            load_csv(path)

    def test_duplicate_date(self, tmp_path):
        path = write(tmp_path, "date,value\n2014-01-02,1\n2014-01-03,2\n2014-01-02,3\n")
        with pytest.raises(DuplicateDate):
            load_csv(path)

    def test_empty_file(self, tmp_path):
        with pytest.raises(EmptyFile):
            load_csv(write(tmp_path, ""))

    def test_header_only(self, tmp_path):
        with pytest.raises(EmptyFile):
            load_csv(write(tmp_path, "date,value\n"))

    def test_non_positive_price(self, tmp_path):
        with pytest.raises(NonPositivePrice):
            load_csv(write(tmp_path, "date,value\n2014-01-02,1\n2014-01-03,0\n"))

    def test_deterministic(self, tmp_path):
        path = write(tmp_path, "date,value\n2014-01-02,14.2\n2014-01-03,13.8\n2014-01-06,13.1\n")
        a, b = clean(load_csv(path)), clean(load_csv(path))
        assert a.values.tobytes() == b.values.tobytes()


class TestRawSeries:
    def test_rejects_unsorted(self):
        import datetime as dt
        d = [dt.date(2014, 1, 3), dt.date(2014, 1, 2)]
        with pytest.raises(ValueError):
            RawSeries(d, [1.0, 2.0])

    def test_rejects_single_point(self):
        import datetime as dt
        with pytest.raises(SeriesTooShort):
            RawSeries([dt.date(2014, 1, 2)], [1.0])


def raw_from(values):
    import datetime as dt
    start = dt.date(2014, 1, 1)
    return RawSeries([start + dt.timedelta(days=i) for i in range(len(values))], values)


class TestClean:
    def test_powers_of_e(self):
        out = clean(raw_from([1.0, math.e, math.e ** 2]))
        np.testing.assert_allclose(out.values, [1.0, 1.0], rtol=0, atol=1e-15)
        assert out.transform == "log_return"

    def test_constant(self):
        out = clean(raw_from([7.0, 7.0, 7.0]))
        np.testing.assert_array_equal(out.values, [0.0, 0.0])

    def test_matches_loop(self):
        rng = np.random.default_rng(3)
        vals = rng.uniform(0.5, 50, 100)
        out = clean(raw_from(vals))
        expected = [math.log(vals[i + 1] / vals[i]) for i in range(99)]
        np.testing.assert_allclose(out.values, expected, rtol=1e-15, atol=0)

    def test_round_trip(self):
        rng = np.random.default_rng(4)
        vals = np.exp(np.cumsum(rng.normal(0, 0.05, 300))) * 20
        out = clean(raw_from(vals))
        rebuilt = vals[0] * np.exp(np.concatenate([[0.0], np.cumsum(out.values)]))
        np.testing.assert_allclose(rebuilt, vals, rtol=1e-10)

    def test_identity(self):
        out = clean(raw_from([3.0, 4.0, 5.0]), "identity")
        np.testing.assert_array_equal(out.values, [3.0, 4.0, 5.0])

    def test_unknown_transform(self):
        with pytest.raises(ValueError):
            clean(raw_from([1.0, 2.0]), "diff")

    def test_values_are_read_only(self):
        out = clean(raw_from([1.0, 2.0, 3.0]))
        with pytest.raises(ValueError):
            out.values[0] = 5.0


class TestWindows:
    def test_whole_series(self):
        s = CleanSeries.from_values(np.arange(6.0))
        batch = sample_windows(s, 4, 6, np.random.default_rng(0))
        assert batch.B == 4 and batch.T == 6
        for row in batch.data:
            np.testing.assert_array_equal(row, s.values)

    def test_seeded(self):
        s = CleanSeries.from_values(np.random.default_rng(0).normal(size=50))
        a = sample_windows(s, 8, 10, np.random.default_rng(11))
        b = sample_windows(s, 8, 10, np.random.default_rng(11))
        np.testing.assert_array_equal(a.data, b.data)

    def test_rows_are_slices(self):
        s = CleanSeries.from_values(np.random.default_rng(1).normal(size=40))
        batch = sample_windows(s, 20, 7, np.random.default_rng(2))
        for row, o in zip(batch.data, batch.offsets):
            np.testing.assert_array_equal(row, s.values[o:o + 7])

    def test_uniform_offsets(self):
        # 5 possible offsets, 10^4 draws; each count within 5 sigma of 2000
        s = CleanSeries.from_values(np.arange(9.0))
        batch = sample_windows(s, 10_000, 5, np.random.default_rng(5))
        counts = np.bincount(batch.offsets, minlength=5)
        sd = math.sqrt(10_000 * 0.2 * 0.8)
        assert counts.size == 5
        assert np.all(np.abs(counts - 2000) < 5 * sd)

    def test_too_short(self):
        with pytest.raises(SeriesTooShort):
            sample_windows(CleanSeries.from_values(np.arange(3.0)), 1, 4, np.random.default_rng())


class TestPairs:
    def test_index_arithmetic(self):
        s = CleanSeries.from_values(np.arange(1.0, 11.0))
        pair = pair_at(s, 0, 2, 3)
        np.testing.assert_array_equal(pair.context, [1, 2])
        np.testing.assert_array_equal(pair.target, [3, 4, 5])

    def test_single_possible_pair(self):
        s = CleanSeries.from_values(np.arange(7.0))
        pairs = context_target_pairs(s, 3, 4, 5, np.random.default_rng(0))
        assert all(p.offset == 0 for p in pairs)

    def test_reassembly(self):
        s = CleanSeries.from_values(np.random.default_rng(6).normal(size=100))
        for p in context_target_pairs(s, 12, 8, 30, np.random.default_rng(7)):
            joined = np.concatenate([p.context, p.target])
            np.testing.assert_array_equal(joined, s.values[p.offset:p.offset + 20])

    def test_too_short(self):
        with pytest.raises(SeriesTooShort):
            context_target_pairs(CleanSeries.from_values(np.arange(5.0)), 3, 3, 1,
                                 np.random.default_rng())
