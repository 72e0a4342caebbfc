import json
import math
import os

import numpy as np

from confined_lsm.artifacts import (
    atomic_write_text, format_number, table_rows, write_csv, write_json,
)


def test_format_number():
    assert format_number(0.1) == "0.1"
    assert format_number(np.float64(1) / 3) == repr(1 / 3)
    assert format_number(np.int64(7)) == "7"
    assert format_number(np.bool_(True)) == "true"
    assert format_number("ball") == "ball"


def test_atomic_write_leaves_no_temporaries(tmp_path):
    path = tmp_path / "deep" / "out.txt"
    atomic_write_text(str(path), "first")
    atomic_write_text(str(path), "second")
    assert path.read_text() == "second"
    assert os.listdir(tmp_path / "deep") == ["out.txt"]


def test_csv_round_trips_floats(tmp_path):
    path = tmp_path / "t.csv"
    value = 0.1 + 0.2
    write_csv(str(path), ["a", "b"], [[1, value]])
    lines = path.read_text().splitlines()
    assert lines[0] == "a,b"
    assert float(lines[1].split(",")[1]) == value


def test_json_is_plain(tmp_path):
    path = tmp_path / "x.json"
    write_json(str(path), {"values": np.array([1.0, math.nan]), "n": np.int64(3)}, {"seed": 1})
    doc = json.loads(path.read_text())
    assert doc["values"] == [1.0, None]
    assert doc["n"] == 3
    assert doc["config"] == {"seed": 1}
    assert "version" in doc


def test_table_rows():
    assert table_rows([]) == ([], [])
    header, rows = table_rows([{"n": 3, "p": 0.5}, {"n": 4, "p": 0.25}])
    assert header == ["n", "p"]
    assert rows == [[3, 0.5], [4, 0.25]]
