"""LMC1 checkpoint files.

Layout, all little-endian::

    b"LMC1" | version u32 | record count u32 |
    per record: name length u16, name bytes (utf-8), rank u8, dims u32 x rank,
                payload f32 x prod(dims)

Parameters are stored under their dotted names. Optimizer moments use the
``opt.<g|d>.m.`` / ``opt.<g|d>.v.`` prefixes, step counters ``opt.<g|d>.t``,
RNG state ``rng.*`` and architecture fields ``meta.arch.*``.
"""

from __future__ import annotations

import io
import struct
from dataclasses import fields
from pathlib import Path

import numpy as np

from .networks import ArchConfig, GeneratorBundle, init_params
from .optim import AdamState

MAGIC = b"LMC1"
VERSION = 1


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


def write_records(path, records: dict[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(records)))
    for name, arr in records.items():
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_records(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise TruncatedCheckpointError(
                f"{path}: file ends at byte {len(blob)}, needed {pos + n}"
            )
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: not an LMC1 checkpoint (magic {blob[:4]!r})")
    take(4)
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported checkpoint version {version}")
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims)
        records[name] = arr.astype(np.float32)
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes after last record")
    return records


def _arch_records(arch: ArchConfig) -> dict[str, np.ndarray]:
    out = {}
    for f in fields(arch):
        out[f"meta.arch.{f.name}"] = np.asarray(getattr(arch, f.name), dtype=np.float32)
    return out


def _arch_from_records(records: dict[str, np.ndarray]) -> ArchConfig:
    kwargs = {}
    for f in fields(ArchConfig):
        key = f"meta.arch.{f.name}"
        if key not in records:
            continue
        v = records[key]
        kwargs[f.name] = tuple(int(x) for x in v) if v.ndim else int(v)
    return ArchConfig(**kwargs)


def _adam_records(prefix: str, state: AdamState) -> dict[str, np.ndarray]:
    out = {f"{prefix}.t": np.asarray(state.t, dtype=np.float32)}
    for name in state.m:
        out[f"{prefix}.m.{name}"] = state.m[name]
        out[f"{prefix}.v.{name}"] = state.v[name]
    return out


def _adam_from_records(prefix: str, records) -> AdamState:
    state = AdamState(t=int(records.get(f"{prefix}.t", 0)))
    for key, arr in records.items():
        if key.startswith(f"{prefix}.m."):
            name = key[len(prefix) + 3:]
            state.m[name] = arr.copy()
            state.v[name] = records[f"{prefix}.v.{name}"].copy()
    return state


def save_checkpoint(path, bundle: GeneratorBundle, state_g: AdamState | None = None,
                    state_d: AdamState | None = None,
                    extra: dict[str, np.ndarray] | None = None) -> None:
    records = _arch_records(bundle.arch)
    for name, p in bundle.named_parameters():
        records[name] = p.data
    if state_g is not None:
        records.update(_adam_records("opt.g", state_g))
    if state_d is not None:
        records.update(_adam_records("opt.d", state_d))
    if extra:
        records.update(extra)
    write_records(path, records)


def load_checkpoint(path):
    """Return (bundle, state_g, state_d, extra records)."""
    records = read_records(path)
    bundle = init_params(0, arch=_arch_from_records(records))
    for name, p in bundle.named_parameters():
        if name not in records:
            raise CheckpointError(f"{path}: missing parameter {name}")
        arr = records[name]
        if arr.shape != p.shape:
            raise CheckpointError(f"{path}: {name} has shape {arr.shape}, expected {p.shape}")
        p.data = arr.copy()
    state_g = _adam_from_records("opt.g", records)
    state_d = _adam_from_records("opt.d", records)
    extra = {k: v for k, v in records.items() if k.startswith("rng.")}
    return bundle, state_g, state_d, extra
