"""
LFCK checkpoint container.

    magic   b"LFCK"
    u32     version (1)
    u32     tensor count
    per tensor:
        u16       name length, then the UTF-8 name
        u8        dtype (0 = f32, 1 = f64, 2 = u8)
        u8        rank, then u64 per dimension
        raw little-endian data
    u32     CRC32 of every preceding byte

All integers little-endian. `__config__` holds the ModelConfig JSON as u8 bytes and
`__mask__.<param>` the freeze mask of a parameter. Files are written to a temporary
sibling and moved into place.
"""

import logging
import os
import struct
import tempfile
import zlib
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from .config import parse_model_config
from .errors import ConfigError, CorruptCheckpointError, DimensionError
from .model import Model, build_model, named_parameters

logger = logging.getLogger(__name__)

MAGIC = b"LFCK"
VERSION = 1
CONFIG_NAME = "__config__"
MASK_PREFIX = "__mask__."

_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("u1"): 2}
_CODE_DTYPES = {code: dtype for dtype, code in _DTYPE_CODES.items()}


def encode_tensors(tensors: List[Tuple[str, np.ndarray]]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, array in tensors:
        array = np.asarray(array)
        dtype = array.dtype.newbyteorder("<") if array.dtype.itemsize > 1 else array.dtype
        if dtype not in _DTYPE_CODES:
            raise CorruptCheckpointError(f"tensor '{name}' has unsupported dtype {array.dtype}")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", _DTYPE_CODES[dtype], array.ndim))
        parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype=dtype).tobytes())
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def decode_tensors(blob: bytes) -> Dict[str, np.ndarray]:
    """Parse a whole LFCK file; nothing is returned unless the CRC, magic and layout all check out"""
    if len(blob) < len(MAGIC) + 12:
        raise CorruptCheckpointError(f"checkpoint too short ({len(blob)} bytes)")
    payload, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CorruptCheckpointError("checkpoint CRC mismatch (truncated or corrupted file)")
    if payload[:4] != MAGIC:
        raise CorruptCheckpointError(f"bad magic {payload[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", payload, 4)
    if version != VERSION:
        raise CorruptCheckpointError(f"unsupported checkpoint version {version}")

    offset = 12
    tensors: Dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", payload, offset)
            offset += 2
            name = payload[offset : offset + name_len].decode("utf-8")
            offset += name_len
            code, rank = struct.unpack_from("<BB", payload, offset)
            offset += 2
            shape = struct.unpack_from(f"<{rank}Q", payload, offset)
            offset += 8 * rank
            dtype = _CODE_DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if offset + nbytes > len(payload):
                raise CorruptCheckpointError(f"tensor '{name}' runs past the end of the file")
            tensors[name] = np.frombuffer(payload, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset).reshape(shape).copy()
            offset += nbytes
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise CorruptCheckpointError(f"malformed tensor record: {exc}") from exc
    if offset != len(payload):
        raise CorruptCheckpointError(f"{len(payload) - offset} trailing bytes after {count} tensors")
    return tensors


def _atomic_write(path: Path, blob: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def save_checkpoint(m: Model, path: Union[str, Path]) -> None:
    config = np.frombuffer(m.cfg.model_dump_json().encode("utf-8"), dtype=np.uint8)
    records: List[Tuple[str, np.ndarray]] = [(CONFIG_NAME, config)]
    records += [(name, tensor.data) for name, tensor in named_parameters(m).items()]
    records += [(MASK_PREFIX + name, mask.astype(np.uint8)) for name, mask in m.masks.items()]
    _atomic_write(Path(path), encode_tensors(records))
    logger.info("Saved checkpoint %s (%d tensors)", path, len(records))


def load_checkpoint(path: Union[str, Path]) -> Model:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CorruptCheckpointError(f"cannot read checkpoint '{path}': {exc}") from exc
    tensors = decode_tensors(blob)
    if CONFIG_NAME not in tensors:
        raise CorruptCheckpointError(f"checkpoint has no {CONFIG_NAME} record")
    try:
        cfg = parse_model_config(tensors.pop(CONFIG_NAME).tobytes())
    except ConfigError as exc:
        raise CorruptCheckpointError(f"stored model config is invalid: {exc}") from exc

    m = build_model(cfg, seed=None)
    params = named_parameters(m)
    masks = {name[len(MASK_PREFIX):]: tensors.pop(name) for name in list(tensors) if name.startswith(MASK_PREFIX)}
    unknown = sorted(set(tensors) - set(params)) + sorted(set(masks) - set(params))
    if unknown:
        raise CorruptCheckpointError(f"unknown tensor names in checkpoint: {unknown}")
    missing = sorted(set(params) - set(tensors))
    if missing:
        raise CorruptCheckpointError(f"checkpoint is missing tensors: {missing}")

    for name, tensor in params.items():
        stored = tensors[name]
        if stored.shape != tensor.shape:
            raise DimensionError(f"load_checkpoint[{name}]", stored.shape, tensor.shape)
        if stored.dtype != tensor.dtype:
            raise CorruptCheckpointError(f"tensor '{name}' stored as {stored.dtype}, model expects {tensor.dtype}")
        np.copyto(tensor.data, stored)
    for name, mask in masks.items():
        if mask.shape != params[name].shape:
            raise DimensionError(f"load_checkpoint[{MASK_PREFIX}{name}]", mask.shape, params[name].shape)
    m.masks = {name: mask.astype(bool) for name, mask in masks.items()}
    logger.info("Loaded checkpoint %s (%s, %d parameters)", path, cfg.architecture, len(params))
    return m
