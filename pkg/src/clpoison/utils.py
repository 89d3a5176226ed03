"""Small shared helpers: seed derivation, JSON-lines IO, timing."""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path


def derive_seed(*parts) -> int:
    """Stable sub-seed from a master seed plus arbitrary string/int tags.

    Keeps independent random streams (init, shuffling, augmentation, ...)
    decoupled: changing how one stream is consumed never shifts another.
    """
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(str(part).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little") & 0x7FFF_FFFF_FFFF_FFFF


def append_jsonl(path: str | Path, record: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


class WallTimer:
    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed_ms = (time.perf_counter() - self._t0) * 1000.0
        return False
