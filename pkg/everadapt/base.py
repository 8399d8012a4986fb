from __future__ import annotations

import hashlib
import json
import os
from collections.abc import Iterable, Iterator
from pathlib import Path
from typing import Any

import numpy as np


def iter_batches(order: np.ndarray, batch_size: int) -> Iterator[np.ndarray]:
    """
    Consecutive index batches of `order`.

    A trailing batch of a single index borrows the index before it, so every batch can be
    normalized by its own statistics.
    """
    for start in range(0, len(order), batch_size):
        batch = order[start : start + batch_size]
        if len(batch) == 1 and len(order) > 1:
            batch = order[start - 1 : start + 1]
        yield batch


def atomic_write_text(path: str | Path, text: str) -> Path:
    """
    Write `text` to a sibling temporary file and move it over `path` in one step.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path


def to_jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(key): to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(path: str | Path, payload: Any, *, atomic: bool = False) -> Path:
    text = json.dumps(to_jsonable(payload), indent=2, sort_keys=True) + "\n"
    if atomic:
        return atomic_write_text(path, text)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def content_hash(paths: Iterable[str | Path], *extra: str) -> str:
    """sha256 over the bytes of `paths` (in the given order) followed by `extra` strings."""
    digest = hashlib.sha256()
    for path in paths:
        path = Path(path)
        digest.update(str(path.name).encode())
        digest.update(path.read_bytes())
    for item in extra:
        digest.update(item.encode())
    return digest.hexdigest()
