"""Tests for artifact storage."""

import numpy as np
import pandas as pd
import pytest

from breather_lab.lattice import Boundary, LatticeGrid, RealField
from breather_lab.storage import (
    atomic_write_text,
    parse_field_header,
    read_field,
    read_json,
    read_table,
    table_to_csv,
    write_field,
    write_json,
    write_table,
)


class TestTables:
    def test_csv_is_deterministic(self):
        df = pd.DataFrame({"eps": [0.1, 0.05], "err": [1.0 / 3.0, 2.0 / 3.0]})
        assert table_to_csv(df) == table_to_csv(df.copy())

    def test_full_precision(self, tmp_path):
        value = 1.0 / 3.0
        path = write_table(pd.DataFrame({"x": [value]}), tmp_path / "t.csv")
        assert read_table(path)["x"].iloc[0] == value

    def test_column_order_kept(self, tmp_path):
        df = pd.DataFrame({"b": [1], "a": [2]})
        path = write_table(df, tmp_path / "t.csv")
        assert path.read_text().splitlines()[0] == "b,a"


class TestJson:
    def test_sorted_keys_and_numpy(self, tmp_path):
        path = write_json({"b": np.float64(1.5), "a": np.arange(3), "c": 1 + 2j}, tmp_path / "m.json")
        text = path.read_text()
        assert text.index('"a"') < text.index('"b"') < text.index('"c"')
        payload = read_json(path)
        assert payload["a"] == [0, 1, 2]
        assert payload["c"] == {"re": 1.0, "im": 2.0}

    def test_enum_value(self, tmp_path):
        payload = read_json(write_json({"boundary": Boundary.PERIODIC}, tmp_path / "m.json"))
        assert payload["boundary"] == "periodic"


class TestAtomicWrite:
    def test_creates_parent_and_leaves_no_temp(self, tmp_path):
        path = atomic_write_text(tmp_path / "deep" / "out.txt", "hello\n")
        assert path.read_text() == "hello\n"
        assert [p.name for p in path.parent.iterdir()] == ["out.txt"]


class TestFields:
    def test_field_file_restores_grid_and_values(self, tmp_path):
        grid = LatticeGrid(2, 1, Boundary.PERIODIC)
        field = RealField(grid, np.linspace(-1.0, 1.0, grid.size) / 7.0)
        restored = read_field(write_field(field, tmp_path / "f.csv"))
        assert restored.grid == grid
        assert np.array_equal(restored.values, field.values)

    def test_header_line(self, tmp_path):
        path = write_field(RealField(LatticeGrid(1, 1), [0.0, 1.0, 0.0]), tmp_path / "f.csv")
        assert path.read_text().splitlines()[0] == "# d=1 N=1 boundary=dirichlet"

    def test_bad_header(self):
        with pytest.raises(ValueError, match="header"):
            parse_field_header("d=1 N=2")
        with pytest.raises(ValueError, match="missing"):
            parse_field_header("# d=1 N=2")
