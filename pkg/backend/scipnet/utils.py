# backend/scipnet/utils.py
"""
Shared utility functions for SCIP-Net: atomic file writes, digests,
JSON-lines helpers and seeding.
"""

import hashlib
import json
import os
import pathlib
import random
import tempfile
from typing import Any, Dict, Iterable, List, Sequence, Union

import numpy as np
import torch
from pydantic import BaseModel

PathLike = Union[str, os.PathLike]


# -------------------------------------------------
# FILES
# -------------------------------------------------
def atomic_write_bytes(path: PathLike, data: bytes) -> pathlib.Path:
    """
    Write bytes to `path` via a temporary file and rename.

    An interrupted run never leaves a partially written file under `path`.

    Args:
        path: Destination file
        data: Content

    Returns:
        The destination path
    """
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def atomic_write_text(path: PathLike, text: str) -> pathlib.Path:
    """Text variant of atomic_write_bytes (UTF-8)."""
    return atomic_write_bytes(path, text.encode("utf-8"))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: PathLike) -> str:
    """Hex sha256 digest of a file's content."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


# -------------------------------------------------
# JSON-LINES
# -------------------------------------------------
def _to_jsonable(record: Union[BaseModel, Dict[str, Any]]) -> str:
    if isinstance(record, BaseModel):
        return record.model_dump_json()
    return json.dumps(record, sort_keys=True)


def dumps_jsonl(records: Iterable[Union[BaseModel, Dict[str, Any]]]) -> str:
    """Serialize records to JSON-lines text (one object per line)."""
    return "".join(_to_jsonable(r) + "\n" for r in records)


def write_jsonl(path: PathLike, records: Iterable[Union[BaseModel, Dict[str, Any]]]) -> pathlib.Path:
    """Write records as JSON-lines with write-then-rename."""
    return atomic_write_text(path, dumps_jsonl(records))


def read_jsonl(path: PathLike) -> List[Dict[str, Any]]:
    """Read a JSON-lines file, skipping blank lines."""
    with open(path, "r", encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]


# -------------------------------------------------
# SEEDING
# -------------------------------------------------
def derive_seed(master: int, *keys: int) -> int:
    """
    Derive an independent 32-bit seed from a master seed and integer keys.

    Args:
        master: Master seed
        keys: Stream identifiers (stage index, subject id, ...)

    Returns:
        Deterministic seed for the (master, *keys) stream
    """
    sequence = np.random.SeedSequence([int(master), *[int(k) for k in keys]])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def set_seed(seed: int) -> None:
    """Seed torch, numpy and random for a reproducible stage."""
    torch.manual_seed(seed)
    np.random.seed(seed % (2 ** 32))
    random.seed(seed)


def chunks(indices: Sequence[int], size: int) -> List[np.ndarray]:
    """Split an index array into consecutive batches of at most `size`."""
    indices = np.asarray(indices)
    return [indices[i:i + size] for i in range(0, len(indices), size)]
