import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dpthreshold.exceptions import (
    DuplicateObservation,
    LagTooDeep,
    MissingColumn,
    MissingValue,
    NonNumericCell,
    TooShort,
    UnbalancedPanel,
)
from dpthreshold.panel import PanelData, build_lag, first_difference, load_csv, transform


def write(tmp_path, text, name="p.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


CSV = """id,time,y,x
A,1,1.0,0.5
A,2,2.0,0.1
A,3,4.0,0.3
B,1,0.0,1.5
B,2,-1.0,2.5
B,3,3.5,0.0
"""


class TestLoadCsv:
    def test_smallest_dynamic_panel(self, tmp_path):
        p = load_csv(write(tmp_path, CSV), "id", "time")
        assert (p.n, p.T) == (2, 3)
        assert p.unit_ids == ("A", "B")
        assert p.time_ids == (1.0, 2.0, 3.0)
        np.testing.assert_array_equal(p["y"], [[1, 2, 4], [0, -1, 3.5]])

    def test_unbalanced(self, tmp_path):
        text = "\n".join(CSV.strip().splitlines()[:-1]) + "\n"
        with pytest.raises(UnbalancedPanel):
            load_csv(write(tmp_path, text), "id", "time")

    def test_shuffled_rows_give_identical_panel(self, tmp_path):
        lines = CSV.strip().splitlines()
        body = lines[1:]
        rng = np.random.default_rng(3)
        shuffled = [body[i] for i in rng.permutation(len(body))]
        a = load_csv(write(tmp_path, CSV, "a.csv"), "id", "time")
        b = load_csv(write(tmp_path, "\n".join([lines[0], *shuffled]) + "\n", "b.csv"),
                     "id", "time")
        assert a.unit_ids == b.unit_ids and a.time_ids == b.time_ids
        for k in a.series:
            np.testing.assert_array_equal(a[k], b[k])

    def test_duplicate(self, tmp_path):
        with pytest.raises(DuplicateObservation):
            load_csv(write(tmp_path, CSV + "A,2,9,9\n"), "id", "time")

    def test_non_numeric(self, tmp_path):
        with pytest.raises(NonNumericCell):
            load_csv(write(tmp_path, CSV.replace("0.1", "abc")), "id", "time")

    def test_missing_column(self, tmp_path):
        with pytest.raises(MissingColumn):
            load_csv(write(tmp_path, CSV), "unit", "time")

    def test_empty_cell_rejected_only_when_used(self, tmp_path):
        p = load_csv(write(tmp_path, CSV.replace("0.1", "")), "id", "time")
        p.require(["y"])
        assert p.missing_mask("x")[0, 1]
        with pytest.raises(MissingValue, match="unit 'A'"):
            p.require(["x"])

    def test_numeric_ids_sort_numerically(self, tmp_path):
        text = "id,time,y\n10,1,1\n10,2,2\n2,1,3\n2,2,4\n"
        p = load_csv(write(tmp_path, text), "id", "time")
        assert p.unit_ids == ("2", "10")

    def test_time_spacing_irrelevant(self, tmp_path):
        text = "id,time,y\na,1990,1\na,2005,2\na,2007,4\n"
        p = load_csv(write(tmp_path, text), "id", "time")
        np.testing.assert_array_equal(first_difference(p["y"]), [[1, 2]])


class TestWhere:
    def test_unit_filter(self):
        region = np.array([[1, 1], [2, 2], [1, 1]], dtype=float)
        p = PanelData(("a", "b", "c"), (1, 2), {"region": region, "y": np.zeros((3, 2))})
        sub = p.where("region==1")
        assert sub.unit_ids == ("a", "c")

    def test_partial_unit_rejected(self):
        p = PanelData(("a",), (1, 2), {"r": np.array([[1.0, 2.0]])})
        with pytest.raises(UnbalancedPanel):
            p.where("r <= 1")


class TestFirstDifference:
    def test_arithmetic(self):
        np.testing.assert_array_equal(first_difference([[1, 3, 6]]), [[2, 3]])
        np.testing.assert_array_equal(first_difference([[0, 1], [5, 5]]), [[1], [0]])

    def test_constant(self):
        assert not first_difference(np.full((3, 4), 2.5)).any()

    def test_too_short(self):
        with pytest.raises(TooShort):
            first_difference([[1.0]])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 8)),
                  elements=st.floats(-1e6, 1e6)))
    def test_round_trip(self, a):
        d = first_difference(a)
        rebuilt = a[:, :1] + np.concatenate([np.zeros((a.shape[0], 1)), np.cumsum(d, axis=1)],
                                            axis=1)
        np.testing.assert_allclose(rebuilt, a, rtol=1e-12, atol=1e-12 * np.abs(a).max() * a.shape[1])


class TestBuildLag:
    def test_shift(self):
        out = build_lag([[1, 2, 3]], 1)
        assert np.isnan(out[0, 0])
        np.testing.assert_array_equal(out[0, 1:], [1, 2])
        out2 = build_lag([[1, 2, 3]], 2)
        assert np.isnan(out2[0, :2]).all() and out2[0, 2] == 1

    def test_composition(self):
        a = np.arange(12.0).reshape(2, 6)
        np.testing.assert_array_equal(build_lag(build_lag(a, 1), 1), build_lag(a, 2))

    def test_too_deep(self):
        with pytest.raises(LagTooDeep):
            build_lag([[1, 2, 3]], 3)


def test_transform_puts_lag_first(small_panel):
    tp = transform(small_panel, "y", "q", ["x"], dynamic=True)
    assert tp.x_names == ("L.y", "x")
    np.testing.assert_array_equal(tp.x[:, 1:, 0], small_panel["y"][:, :-1])
    np.testing.assert_allclose(tp.dy, np.diff(small_panel["y"], axis=1))
    assert not tp.x.flags.writeable


def test_panel_is_immutable(small_panel):
    with pytest.raises(ValueError):
        small_panel["y"][0, 0] = 1.0
