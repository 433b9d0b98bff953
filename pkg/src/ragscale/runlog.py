"""Append-only run persistence: checksummed record log and bundle store.

The record log is newline-delimited JSON; every flush is sealed by a
checksum line over the record bytes written since the previous seal.
Loading verifies every sealed group and fails fast with a line number on
corruption; an unsealed tail (a crash artifact) is dropped on resume by
truncating back to the last valid seal. Evidence bundles live in a
content-addressed store keyed by their digest.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .errors import IntegrityError
from .generate import GenerationRecord
from .retrieve import EvidenceBundle

_CHECKSUM_KEY = "_checksum"


def _seal_line(group_bytes: bytes) -> str:
    return json.dumps({_CHECKSUM_KEY: hashlib.sha256(group_bytes).hexdigest()}) + "\n"


class RecordLog:
    """Writer for the append-only generation record log.

    Each append writes the record line followed by its checksum seal and
    flushes, so every durable record is verifiable.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = None

    def __enter__(self) -> "RecordLog":
        self._fh = self.path.open("a", encoding="utf-8")
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def append(self, record: GenerationRecord) -> None:
        assert self._fh is not None, "RecordLog must be entered before appending"
        line = json.dumps(record.to_dict(), sort_keys=True, ensure_ascii=False) + "\n"
        self._fh.write(line)
        self._fh.write(_seal_line(line.encode("utf-8")))
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def load_records(path: str | Path, resume: bool = False) -> list[GenerationRecord]:
    """Read and verify a record log.

    Corrupt or mis-checksummed lines raise with their 1-based line
    number. With ``resume=True`` an unsealed tail is tolerated (and
    ignored); otherwise it is an error.
    """
    path = Path(path)
    if not path.exists():
        return []
    records: list[GenerationRecord] = []
    pending: list[GenerationRecord] = []
    group = bytearray()
    data = path.read_bytes()
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    for lineno, raw in enumerate(lines, start=1):
        try:
            obj = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            if resume and lineno == len(lines):
                break  # partial final write from a crash
            raise IntegrityError(f"{path}: corrupted log line {lineno}") from None
        if isinstance(obj, dict) and _CHECKSUM_KEY in obj:
            expected = hashlib.sha256(bytes(group)).hexdigest()
            if obj[_CHECKSUM_KEY] != expected:
                raise IntegrityError(f"{path}: checksum mismatch at line {lineno}")
            records.extend(pending)
            pending.clear()
            group.clear()
        else:
            try:
                pending.append(GenerationRecord.from_dict(obj))
            except TypeError:
                raise IntegrityError(f"{path}: corrupted log line {lineno}") from None
            group.extend(raw)
            group.extend(b"\n")
    if pending and not resume:
        raise IntegrityError(f"{path}: log ends with {len(pending)} unsealed record(s)")
    return records


def truncate_to_sealed(path: str | Path) -> None:
    """Drop any unsealed tail so appends continue from a verified state."""
    path = Path(path)
    if not path.exists():
        return
    data = path.read_bytes()
    offset = 0
    group = bytearray()
    valid_end = 0
    for raw in data.split(b"\n")[:-1] if data.endswith(b"\n") else data.split(b"\n"):
        line = raw + b"\n"
        try:
            obj = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            break
        if isinstance(obj, dict) and _CHECKSUM_KEY in obj:
            if obj[_CHECKSUM_KEY] != hashlib.sha256(bytes(group)).hexdigest():
                break
            valid_end = offset + len(line)
            group.clear()
        else:
            group.extend(line)
        offset += len(line)
    if valid_end < len(data):
        with path.open("r+b") as fh:
            fh.truncate(valid_end)


class BundleStore:
    """Content-addressed evidence bundle store: one JSON file per digest."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def save(self, bundle: EvidenceBundle) -> str:
        digest = bundle.digest()
        path = self.root / f"{digest}.json"
        if not path.exists():
            self.root.mkdir(parents=True, exist_ok=True)
            blob = json.dumps(
                bundle.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":")
            )
            path.write_text(blob, encoding="utf-8")
        return digest

    def load(self, digest: str) -> EvidenceBundle:
        path = self.root / f"{digest}.json"
        if not path.exists():
            raise IntegrityError(f"bundle {digest} missing from store {self.root}")
        bundle = EvidenceBundle.from_dict(json.loads(path.read_text(encoding="utf-8")))
        if bundle.digest() != digest:
            raise IntegrityError(f"bundle {digest} fails content verification")
        return bundle
