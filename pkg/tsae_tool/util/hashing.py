from __future__ import annotations

import hashlib
from pathlib import Path

from tsae_tool.errors import ChecksumError


def sha256_file(path: str, chunk_size: int = 1024 * 1024) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            h.update(chunk)
    return h.hexdigest()


def verify_sha256(path: str, expected: str) -> str:
    """Returns the digest; raises ChecksumError when it differs from `expected` (case-insensitive)."""
    actual = sha256_file(path)
    if actual.lower() != expected.strip().lower():
        raise ChecksumError(f"{path}: sha256 {actual} does not match expected {expected}")
    return actual
