# backend/tests/test_utils.py
import numpy as np

from backend.scipnet.schemas import InterventionPlan
from backend.scipnet.utils import atomic_write_text, chunks, derive_seed, read_jsonl, sha256_file, write_jsonl


def test_derive_seed_streams():
    assert derive_seed(0, 1, 2) == derive_seed(0, 1, 2)
    assert derive_seed(0, 1, 2) != derive_seed(0, 2, 1)
    assert derive_seed(0, 1) != derive_seed(1, 1)
    assert 0 <= derive_seed(7) < 2 ** 32


def test_atomic_write_leaves_no_temp_files(tmp_path):
    path = atomic_write_text(tmp_path / "nested" / "out.txt", "hello")
    assert path.read_text() == "hello"
    assert [p.name for p in path.parent.iterdir()] == ["out.txt"]
    atomic_write_text(path, "again")
    assert path.read_text() == "again"


def test_jsonl_models_and_dicts(tmp_path):
    plan = InterventionPlan(start=1.0, jump_times=[1.0], values=[[0, 1]], horizon=3.0)
    path = write_jsonl(tmp_path / "lines.jsonl", [plan, {"b": 1, "a": 2}])
    lines = read_jsonl(path)
    assert InterventionPlan.model_validate(lines[0]) == plan
    assert lines[1] == {"a": 2, "b": 1}
    assert path.read_text().splitlines()[1] == '{"a": 2, "b": 1}'
    assert len(sha256_file(path)) == 64


def test_chunks():
    batches = chunks(np.arange(7), 3)
    assert [b.tolist() for b in batches] == [[0, 1, 2], [3, 4, 5], [6]]
    assert chunks([], 4) == []
