import hashlib
import json
import os
import re
import sys
import threading
from pathlib import Path
from typing import Any, Iterable, Iterator

import pandas as pd

from IdeologyProject.logger import logging
from IdeologyProject.exception import IdeologyException, StoreCorruptionError

_write_locks: dict[str, threading.Lock] = {}
_registry_lock = threading.Lock()


def _lock_for(path: Path) -> threading.Lock:
    key = str(Path(path).resolve())
    with _registry_lock:
        if key not in _write_locks:
            _write_locks[key] = threading.Lock()
        return _write_locks[key]


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def digest_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def digest_payload(payload: Any) -> str:
    return digest_text(canonical_json(payload))


def fill_placeholders(text: str, values: dict[str, str]) -> str:
    """Substitute every placeholder in one pass; inserted values are never re-scanned."""
    pattern = re.compile("|".join(re.escape(key) for key in sorted(values, key=len, reverse=True)))
    return pattern.sub(lambda match: values[match.group(0)], text)


def digest_file(path) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            sha.update(chunk)
    return sha.hexdigest()


def append_jsonl(path, record: dict) -> None:
    """Append one record as a single line; one writer per file at a time."""
    path = Path(path)
    line = canonical_json(record) + "\n"
    with _lock_for(path):
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", encoding="utf-8") as handle:
            handle.write(line)
            handle.flush()
            os.fsync(handle.fileno())


def iter_jsonl_with_offsets(path) -> Iterator[tuple[int, dict]]:
    """Yield (byte offset, record) per non-blank line."""
    path = Path(path)
    if not path.exists():
        return
    offset = 0
    with open(path, "rb") as handle:
        for raw in handle:
            stripped = raw.strip()
            if stripped:
                try:
                    record = json.loads(stripped.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as e:
                    raise StoreCorruptionError(path, offset, str(e)) from e
                if not isinstance(record, dict):
                    raise StoreCorruptionError(path, offset, "record is not an object")
                yield offset, record
            offset += len(raw)


def iter_jsonl(path) -> Iterator[dict]:
    for _, record in iter_jsonl_with_offsets(path):
        yield record


def read_jsonl(path) -> list[dict]:
    return list(iter_jsonl(path))


def write_jsonl(path, records: Iterable[dict]) -> None:
    """Rewrite a derived (non-store) artifact in one go."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(canonical_json(record) + "\n")


def write_json(path, payload: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


def read_json(path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except Exception as e:
        raise IdeologyException(e, sys) from e


def save_table(frame: pd.DataFrame, path, manifest_digest: str | None = None) -> Path:
    """Write a result table as CSV with stable float formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = frame.copy()
    if manifest_digest is not None:
        frame["manifest_digest"] = manifest_digest
    frame.to_csv(path, index=False, float_format="%.12g", lineterminator="\n")
    logging.info(f"Table saved: {path} ({len(frame)} rows)")
    return path
