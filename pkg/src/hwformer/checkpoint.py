"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"HWFK" | u32 version | u32 len | config text (UTF-8, key=value lines)
    u32 record count
    per record: u32 name len | name | u8 dtype tag | u32 rank | u32 extents... | raw values

Parameter records use their registry names; Adam moments are stored as
``optim.m.<name>`` / ``optim.v.<name>`` and the step counter lives in the
config text as ``optim.step``.
"""

from __future__ import annotations

import ast
import os
import struct
from dataclasses import fields
from typing import Optional

import numpy as np

from .errors import ArchitectureMismatchError, DataError, CheckpointVersionError, CorruptCheckpointError
from .model import ModelConfig, ModelWeights, parameter_shapes
from .tensor import Tensor

MAGIC = b"HWFK"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAGS = {np.dtype("float32"): 1, np.dtype("float64"): 2}


def config_text(model_config: ModelConfig, train_config=None, step: Optional[int] = None) -> str:
    lines = [f"model.{f.name}={getattr(model_config, f.name)!r}" for f in fields(model_config)]
    if train_config is not None:
        lines += [f"train.{f.name}={getattr(train_config, f.name)!r}" for f in fields(train_config)]
    if step is not None:
        lines.append(f"optim.step={int(step)!r}")
    return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> dict:
    sections: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        key, sep, raw = line.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise CorruptCheckpointError(f"config line {lineno} is not section.key=value: {line!r}")
        try:
            value = ast.literal_eval(raw)
        except (ValueError, SyntaxError) as exc:
            raise CorruptCheckpointError(f"config line {lineno} has an unparsable value {raw!r}") from exc
        sections.setdefault(section, {})[name] = value
    return sections


def _record(name: str, array: np.ndarray) -> bytes:
    tag = _TAGS.get(array.dtype)
    if tag is None:
        raise ValueError(f"{name}: cannot store dtype {array.dtype}")
    encoded = name.encode("utf-8")
    head = struct.pack("<I", len(encoded)) + encoded + struct.pack("<BI", tag, array.ndim)
    head += struct.pack(f"<{array.ndim}I", *array.shape)
    return head + np.ascontiguousarray(array, dtype=_DTYPES[tag]).tobytes()


def dumps(weights: ModelWeights, state=None, train_config=None) -> bytes:
    text = config_text(weights.config, train_config, None if state is None else state.t).encode("utf-8")
    records = [_record(name, p.data) for name, p in weights.named_parameters()]
    if state is not None:
        for name in weights.params:
            records.append(_record(f"optim.m.{name}", state.m[name]))
            records.append(_record(f"optim.v.{name}", state.v[name]))
    out = MAGIC + struct.pack("<II", VERSION, len(text)) + text
    return out + struct.pack("<I", len(records)) + b"".join(records)


def save_checkpoint(path, weights: ModelWeights, state=None, train_config=None) -> None:
    data = dumps(weights, state, train_config)
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptCheckpointError(f"checkpoint truncated at byte {self.pos} (needed {n} more)")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf: bytes, expected: Optional[ModelConfig] = None):
    """Decode a checkpoint; returns ``(weights, optim_state_or_None, sections)``."""
    from .training import OptimState

    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CorruptCheckpointError("not a checkpoint (bad magic bytes)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, this build reads {VERSION}")
    (text_len,) = r.unpack("<I")
    try:
        sections = parse_config_text(r.take(text_len).decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise CorruptCheckpointError("config block is not UTF-8") from exc
    try:
        config = ModelConfig(**sections.get("model", {}))
    except (TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"invalid model config: {exc}") from exc
    if expected is not None and expected.architecture() != config.architecture():
        diff = {k: (v, config.architecture()[k]) for k, v in expected.architecture().items()
                if config.architecture()[k] != v}
        raise ArchitectureMismatchError(f"checkpoint architecture differs (expected, found): {diff}")

    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        tag, rank = r.unpack("<BI")
        if tag not in _DTYPES:
            raise CorruptCheckpointError(f"{name}: unknown dtype tag {tag}")
        shape = r.unpack(f"<{rank}I")
        dtype = _DTYPES[tag]
        n = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(r.take(n * dtype.itemsize), dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if r.pos != len(buf):
        raise CorruptCheckpointError(f"{len(buf) - r.pos} trailing bytes after the last record")

    shapes = parameter_shapes(config)
    params = {}
    for name, shape in shapes.items():
        if name not in arrays:
            raise ArchitectureMismatchError(f"checkpoint lacks parameter {name}")
        if arrays[name].shape != shape:
            raise ArchitectureMismatchError(f"{name}: stored shape {arrays[name].shape}, expected {shape}")
        params[name] = Tensor(arrays[name], requires_grad=True)
    weights = ModelWeights(config, params)

    state = None
    if "optim" in sections:
        try:
            state = OptimState(
                m={n: arrays[f"optim.m.{n}"] for n in shapes},
                v={n: arrays[f"optim.v.{n}"] for n in shapes},
                t=int(sections["optim"]["step"]),
            )
        except KeyError as exc:
            raise CorruptCheckpointError(f"optimizer state incomplete: missing {exc.args[0]}") from None
    return weights, state, sections


def load_checkpoint(path, expected: Optional[ModelConfig] = None):
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    return loads(buf, expected)
