"""Single-file binary checkpoints.

Layout (little-endian)::

    b"CAFCT\\0"  magic
    u16         format version
    u32 + text  config block (``key = value`` lines)
    u32 + text  metadata block (JSON: epoch, RNG state)
    u32         record count
    records     u16 name length, name bytes, u8 rank, rank x u32 extents,
                payload as float64

Records hold every parameter in model order followed by the batch-norm
running statistics (names ending in ``running_mean`` / ``running_var``).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from ..gates_decoder import CAFCT
from .config import TrainConfig, parse_config

MAGIC = b"CAFCT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class CheckpointMeta:
    epoch: int = 0
    rng_state: Optional[dict] = None
    extra: Dict[str, object] = field(default_factory=dict)


def _pack_text(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def model_records(model: CAFCT):
    for name, p in model.named_parameters():
        yield name, p.data
    for name, buf in model.named_buffers():
        yield name, buf


def encode_checkpoint(model: CAFCT, config: TrainConfig, meta: CheckpointMeta) -> bytes:
    parts = [MAGIC, struct.pack("<H", VERSION), _pack_text(config.to_text())]
    meta_json = {"epoch": meta.epoch, "rng_state": meta.rng_state, **meta.extra}
    parts.append(_pack_text(json.dumps(meta_json, sort_keys=True)))
    records = list(model_records(model))
    parts.append(struct.pack("<I", len(records)))
    for name, arr in records:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(
    model: CAFCT, config: TrainConfig, path: Union[str, Path], meta: Optional[CheckpointMeta] = None
) -> None:
    path = Path(path)
    data = encode_checkpoint(model, config, meta or CheckpointMeta())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint at byte {self.pos} (need {n} more)")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")


def decode_checkpoint(buf: bytes) -> Tuple[TrainConfig, CheckpointMeta, Dict[str, np.ndarray]]:
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a CAFCT checkpoint (bad magic)")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config = parse_config(r.text())
    meta_json = json.loads(r.text())
    meta = CheckpointMeta(
        epoch=int(meta_json.pop("epoch", 0)),
        rng_state=meta_json.pop("rng_state", None),
        extra=meta_json,
    )
    (count,) = r.unpack("<I")
    records = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(shape)) if rank else 1
        records[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after last record")
    return config, meta, records


def load_checkpoint(path: Union[str, Path]) -> Tuple[CAFCT, TrainConfig, CheckpointMeta]:
    """Rebuild the model from its config and overwrite every tensor from the file."""
    config, meta, records = decode_checkpoint(Path(path).read_bytes())
    model = CAFCT(config.model_config(), seed=config.seed)
    load_records(model, records)
    return model, config, meta


def load_records(model: CAFCT, records: Dict[str, np.ndarray]) -> None:
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    expected = set(params) | set(buffers)
    if set(records) != expected:
        missing = sorted(expected - set(records))[:3]
        extra = sorted(set(records) - expected)[:3]
        raise CheckpointError(f"record mismatch: missing {missing}, unexpected {extra}")
    for name, arr in records.items():
        target = params[name].data if name in params else buffers[name]
        if target.shape != arr.shape:
            raise CheckpointError(f"{name}: shape {arr.shape} != model shape {target.shape}")
        target[...] = arr
