import json

import numpy as np
import pytest

from qformer.exceptions import ShapeError
from qformer.report import RunReport, load_matrix, save_matrix, strip_timing


def sample():
    r = RunReport("verify", {"n": 4}, 42)
    r.add("encode", fidelity=np.float64(1.0), seconds=0.5, passed=True)
    r.add("ffn", fidelity=0.9, postselect_prob=0.2, seconds=1.5, passed=False, words=np.arange(3))
    return r


def test_failures_and_ok():
    r = sample()
    assert not r.ok
    assert r.failures() == ["ffn"]


def test_json_roundtrip():
    r = sample()
    back = RunReport.from_json(r.to_json())
    assert back.to_dict() == r.to_dict()
    assert json.loads(r.to_json())["records"][1]["words"] == [0, 1, 2]


def test_strip_timing():
    r = sample()
    a = strip_timing(r.to_dict())
    r.records[0]["seconds"] = 99.0
    assert strip_timing(r.to_dict()) == a
    assert "seconds" not in json.dumps(a)
    assert r.to_dict(timing=False) == a


@pytest.mark.parametrize("wrap", ["list", "X", "shape"])
def test_matrix_files(tmp_path, wrap):
    M = np.arange(6.0).reshape(2, 3)
    payload = {"list": M.tolist(), "X": {"X": M.tolist()},
               "shape": {"shape": [2, 3], "data": M.ravel().tolist()}}[wrap]
    path = tmp_path / "m.json"
    path.write_text(json.dumps(payload))
    assert np.array_equal(load_matrix(path), M)
    save_matrix(path, M)
    assert np.array_equal(load_matrix(path), M)


def test_bad_matrix_file(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"rows": 3}))
    with pytest.raises(ShapeError):
        load_matrix(path)
