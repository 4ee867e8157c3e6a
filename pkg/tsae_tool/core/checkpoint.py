"""Checkpoint container.

Layout (all integers little-endian):

    magic        8 bytes   b"TSADVAE\\0"
    version      uint32
    header_len   uint64
    header       UTF-8 JSON, sorted keys, compact separators
    blobs        repeated, in the order listed by header["blobs"]:
                   name_len uint32, name UTF-8,
                   ndim uint32, dims uint64 * ndim,
                   byte_len uint64, data float64 ('<f8', C order)

The header never carries timestamps, so saving the same state twice yields
identical bytes.
"""
from __future__ import annotations

import io
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO

import numpy as np

from tsae_tool.config import RunConfig, run_config_from_dict
from tsae_tool.core.params import ParameterStore
from tsae_tool.errors import CheckpointError, CompatibilityError, ConfigError
from tsae_tool.models import NormalizationStats

logger = logging.getLogger(__name__)

MAGIC = b"TSADVAE\0"
FORMAT_VERSION = 1
SUFFIX = ".tsae"

_STORES = ("model", "disc")


@dataclass
class Checkpoint:
    run: RunConfig
    model: ParameterStore
    discriminator: ParameterStore | None = None
    generator_state: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    generator_steps: int = 0
    stats: NormalizationStats | None = None
    sos_value: float = -3.0
    epoch: int = 0
    rng_states: dict[str, Any] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @property
    def model_kind(self) -> str:
        return self.run.model

    @property
    def label(self) -> str:
        return self.run.label


def _role_for(name: str) -> str:
    if name.endswith(".gain"):
        return "gain"
    if name.endswith(".bias"):
        return "bias"
    return "weight"


def _optimizer_parts(ckpt: Checkpoint) -> dict[str, tuple[dict[str, dict[str, np.ndarray]], int]]:
    parts = {
        "ae": (ckpt.model.state, ckpt.model.step_count),
        "gen": (ckpt.generator_state, ckpt.generator_steps),
    }
    if ckpt.discriminator is not None:
        parts["disc"] = (ckpt.discriminator.state, ckpt.discriminator.step_count)
    return parts


def _collect_blobs(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    blobs: list[tuple[str, np.ndarray]] = []
    stores = {"model": ckpt.model, "disc": ckpt.discriminator}
    for prefix in _STORES:
        store = stores[prefix]
        if store is None:
            continue
        blobs.extend((f"{prefix}:{name}", t.values) for name, t in store.items())
    for opt, (state, _steps) in _optimizer_parts(ckpt).items():
        for name in sorted(state):
            for buf in sorted(state[name]):
                blobs.append((f"opt.{opt}:{name}:{buf}", state[name][buf]))
    return blobs


def encode_header(ckpt: Checkpoint, blob_names: list[str]) -> bytes:
    header = {
        "format_version": ckpt.format_version,
        "model_kind": ckpt.model_kind,
        "run": ckpt.run.to_dict(),
        "stats": None if ckpt.stats is None else ckpt.stats.to_dict(),
        "sos_value": float(ckpt.sos_value),
        "epoch": int(ckpt.epoch),
        "rng": ckpt.rng_states,
        "steps": {opt: int(steps) for opt, (_s, steps) in _optimizer_parts(ckpt).items()},
        "has_discriminator": ckpt.discriminator is not None,
        "blobs": blob_names,
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _write_blob(fh: BinaryIO, name: str, values: np.ndarray) -> None:
    raw_name = name.encode("utf-8")
    arr = np.ascontiguousarray(values, dtype="<f8")
    fh.write(struct.pack("<I", len(raw_name)))
    fh.write(raw_name)
    fh.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<Q", dim))
    data = arr.tobytes(order="C")
    fh.write(struct.pack("<Q", len(data)))
    fh.write(data)


def to_bytes(ckpt: Checkpoint) -> bytes:
    blobs = _collect_blobs(ckpt)
    header = encode_header(ckpt, [name for name, _ in blobs])
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", ckpt.format_version))
    buf.write(struct.pack("<Q", len(header)))
    buf.write(header)
    for name, values in blobs:
        _write_blob(buf, name, values)
    return buf.getvalue()


def save_checkpoint(path: str, ckpt: Checkpoint) -> str:
    """Writes atomically: a temp file next to `path`, then a rename."""
    p = Path(path)
    tmp = p.with_name(p.name + ".tmp")
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(to_bytes(ckpt))
        os.replace(tmp, p)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {p}: {e}") from e
    logger.debug("Saved checkpoint %s (epoch %d)", p, ckpt.epoch)
    return str(p)


class _Reader:
    def __init__(self, data: bytes, where: str):
        self.data = data
        self.pos = 0
        self.where = where

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.where}: truncated at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str) -> int:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]


def _read_blob(reader: _Reader) -> tuple[str, np.ndarray]:
    name = reader.take(reader.unpack("<I")).decode("utf-8")
    ndim = reader.unpack("<I")
    shape = tuple(reader.unpack("<Q") for _ in range(ndim))
    nbytes = reader.unpack("<Q")
    expected = int(np.prod(shape, dtype=np.int64)) * 8
    if nbytes != expected:
        raise CheckpointError(f"{reader.where}: blob {name} holds {nbytes} bytes, shape {shape} needs {expected}")
    values = np.frombuffer(reader.take(nbytes), dtype="<f8").astype(np.float64).reshape(shape)
    return name, values


def _store_from(blobs: dict[str, np.ndarray], prefix: str) -> ParameterStore:
    store = ParameterStore()
    marker = f"{prefix}:"
    for key, values in blobs.items():
        if key.startswith(marker):
            name = key[len(marker) :]
            store.add(name, values.shape, _role_for(name)).values[...] = values
    return store


def _optimizer_state(blobs: dict[str, np.ndarray], opt: str) -> dict[str, dict[str, np.ndarray]]:
    state: dict[str, dict[str, np.ndarray]] = {}
    marker = f"opt.{opt}:"
    for key, values in blobs.items():
        if key.startswith(marker):
            name, buf = key[len(marker) :].rsplit(":", 1)
            state.setdefault(name, {})[buf] = values
    return state


def from_bytes(data: bytes, where: str = "<bytes>") -> Checkpoint:
    reader = _Reader(data, where)
    magic = reader.take(len(MAGIC))
    if magic != MAGIC:
        raise CompatibilityError(f"{where}: not a checkpoint (magic {magic!r})")
    version = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise CompatibilityError(f"{where}: format version {version}, this build reads {FORMAT_VERSION}")
    header_len = reader.unpack("<Q")
    try:
        header = json.loads(reader.take(header_len).decode("utf-8"))
        run = run_config_from_dict(header["run"])
        blob_names = list(header["blobs"])
        sos_value = float(header["sos_value"])
        epoch = int(header["epoch"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError, ConfigError) as e:
        raise CheckpointError(f"{where}: unreadable header ({e})") from e

    blobs: dict[str, np.ndarray] = {}
    for expected in blob_names:
        name, values = _read_blob(reader)
        if name != expected:
            raise CheckpointError(f"{where}: blob {name!r} out of order, expected {expected!r}")
        blobs[name] = values
    if reader.pos != len(data):
        raise CheckpointError(f"{where}: {len(data) - reader.pos} trailing bytes")

    steps = header.get("steps", {})
    model = _store_from(blobs, "model")
    model.load_state(_optimizer_state(blobs, "ae"), steps.get("ae", 0))
    disc = None
    if header.get("has_discriminator"):
        disc = _store_from(blobs, "disc")
        disc.load_state(_optimizer_state(blobs, "disc"), steps.get("disc", 0))

    return Checkpoint(
        run=run,
        model=model,
        discriminator=disc,
        generator_state=_optimizer_state(blobs, "gen"),
        generator_steps=int(steps.get("gen", 0)),
        stats=None if header.get("stats") is None else NormalizationStats.from_dict(header["stats"]),
        sos_value=sos_value,
        epoch=epoch,
        rng_states=header.get("rng", {}),
        format_version=version,
    )


def load_checkpoint(path: str) -> Checkpoint:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    return from_bytes(p.read_bytes(), str(p))
