"""
Binary checkpoint format (little-endian throughout):

    b"MDCN" | u32 version
    u32 field count, then per NetConfig field:
        u16 key length | key (UTF-8) | u8 type tag (0 int64, 1 float64, 2 bool) | value
    u32 tensor count, then per tensor in ModelParams order:
        u16 name length | name (UTF-8) | u8 dtype tag (1 = float32) | 4 x u32 extents | payload

Vectors (biases) are stored with extents (C, 1, 1, 1). Payloads are always
float32, so a float32 model round-trips bit-exactly.
"""
from pathlib import Path
from typing import Union
import logging
import math
import shutil
import struct

import numpy as np
from pydantic import ValidationError

from app.core.errors import CheckpointFormatError
from app.models.schemas import NetConfig
from app.services.mdcn_arch import ModelParams, conv_layout

logger = logging.getLogger(__name__)

MAGIC = b"MDCN"
FORMAT_VERSION = 1
EXTENSION = ".mdcn"

_TAG_INT, _TAG_FLOAT, _TAG_BOOL = 0, 1, 2
_DTYPE_F32 = 1


def checkpoint_bytes(params: ModelParams) -> bytes:
    """Serialize parameters and their NetConfig"""
    out = bytearray(MAGIC)
    out += struct.pack("<I", FORMAT_VERSION)

    fields = params.config.model_dump()
    out += struct.pack("<I", len(fields))
    for key, value in fields.items():
        encoded = key.encode("utf-8")
        out += struct.pack("<H", len(encoded)) + encoded
        if isinstance(value, bool):
            out += struct.pack("<BB", _TAG_BOOL, int(value))
        elif isinstance(value, int):
            out += struct.pack("<Bq", _TAG_INT, value)
        else:
            out += struct.pack("<Bd", _TAG_FLOAT, float(value))

    out += struct.pack("<I", len(params))
    for name, tensor in params.items():
        encoded = name.encode("utf-8")
        extents = tuple(tensor.shape) + (1,) * (4 - tensor.ndim)
        out += struct.pack("<H", len(encoded)) + encoded
        out += struct.pack("<B4I", _DTYPE_F32, *extents)
        out += np.ascontiguousarray(tensor, dtype="<f4").tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise CheckpointFormatError(f"truncated while reading {what}", self.offset)
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def text(self, what: str) -> str:
        (length,) = self.unpack("<H", f"{what} length")
        start = self.offset
        if start + length > len(self.data):
            raise CheckpointFormatError(f"truncated {what}", start)
        self.offset += length
        try:
            return self.data[start:start + length].decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointFormatError(f"{what} is not valid UTF-8", start)


def params_from_bytes(data: bytes) -> ModelParams:
    reader = _Reader(data)
    if data[:4] != MAGIC:
        raise CheckpointFormatError("bad magic, not an MDCN checkpoint", 0)
    reader.offset = 4
    (version,) = reader.unpack("<I", "format version")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported format version {version}", 4)

    config_offset = reader.offset
    (n_fields,) = reader.unpack("<I", "field count")
    fields = {}
    for _ in range(n_fields):
        key = reader.text("config key")
        (tag,) = reader.unpack("<B", "type tag")
        if tag == _TAG_INT:
            (value,) = reader.unpack("<q", key)
        elif tag == _TAG_FLOAT:
            (value,) = reader.unpack("<d", key)
        elif tag == _TAG_BOOL:
            (raw,) = reader.unpack("<B", key)
            value = bool(raw)
        else:
            raise CheckpointFormatError(f"unknown type tag {tag} for '{key}'", reader.offset - 1)
        fields[key] = value
    try:
        config = NetConfig(**fields)
    except (ValidationError, TypeError) as e:
        raise CheckpointFormatError(f"invalid network config ({e.__class__.__name__})", config_offset)

    (n_tensors,) = reader.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(n_tensors):
        record_offset = reader.offset
        name = reader.text("tensor name")
        dtype_tag, *extents = reader.unpack("<B4I", f"header of '{name}'")
        if dtype_tag != _DTYPE_F32:
            raise CheckpointFormatError(f"unsupported dtype tag {dtype_tag} for '{name}'", record_offset)
        if name.endswith(".bias") and extents[1:] != [1, 1, 1]:
            raise CheckpointFormatError(f"bias '{name}' has extents {tuple(extents)}", record_offset)
        count = math.prod(extents)
        nbytes = 4 * count
        if reader.offset + nbytes > len(data):
            raise CheckpointFormatError(f"truncated payload of '{name}'", reader.offset)
        payload = np.frombuffer(data, dtype="<f4", count=count, offset=reader.offset).astype(np.float32)
        reader.offset += nbytes
        if name in tensors:
            raise CheckpointFormatError(f"duplicate tensor '{name}'", record_offset)
        tensors[name] = payload.reshape(extents[0]) if name.endswith(".bias") else payload.reshape(extents)
    if reader.offset != len(data):
        raise CheckpointFormatError("trailing bytes after last tensor", reader.offset)

    _check_layout(config, tensors, len(data))
    return ModelParams(config, tensors)


def _check_layout(config: NetConfig, tensors: dict, end: int):
    expected = {}
    for name, cin, cout, k in conv_layout(config):
        expected[f"{name}.weight"] = (cout, cin, k, k)
        expected[f"{name}.bias"] = (cout,)
    if list(expected) != list(tensors):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise CheckpointFormatError(
            f"tensor set does not match the config (missing {missing[:3]}, unexpected {extra[:3]})", end)
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise CheckpointFormatError(f"'{name}' has shape {tensors[name].shape}, config implies {shape}", end)


def save_checkpoint(params: ModelParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(params))
    logger.info(f"💾 Saved checkpoint {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> ModelParams:
    path = Path(path)
    params = params_from_bytes(path.read_bytes())
    logger.info(f"📂 Loaded checkpoint {path} (x{params.config.scale}, r={params.upscale})")
    return params


def checkpoint_name(tag: str, iteration: int) -> str:
    return f"{tag}_iter{iteration:06d}{EXTENSION}"


def save_periodic(params: ModelParams, out_dir: Union[str, Path], tag: str, iteration: int) -> Path:
    """Write <tag>_iter<NNNNNN>.mdcn and refresh <tag>_latest.mdcn as a plain copy"""
    out_dir = Path(out_dir)
    path = save_checkpoint(params, out_dir / checkpoint_name(tag, iteration))
    shutil.copyfile(path, out_dir / f"{tag}_latest{EXTENSION}")
    return path
