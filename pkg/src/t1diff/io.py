"""On-disk formats: tensor container (checkpoints, embeddings), run config, images.

Container layout (all integers little-endian)::

    b"T1CP" | u32 version | u32 len + UTF-8 config text | u32 tensor count
    per tensor: u32 len + UTF-8 name | u8 dtype (0=f32, 1=f64) | u32 rank
                | rank x u64 dims | raw payload
    u32 CRC32 of every preceding byte
"""
from __future__ import annotations

import os
import struct
import zlib
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"T1CP"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(ValueError):
    pass


def encode_tensor_file(tensors, config_text: str = "") -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    cfg = config_text.encode("utf-8")
    out += struct.pack("<I", len(cfg)) + cfg
    out += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"tensor {name}: unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        out += struct.pack("<I", len(nb)) + nb
        out += struct.pack("<BI", code, arr.ndim)
        out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    out += struct.pack("<I", zlib.crc32(out) & 0xFFFFFFFF)
    return bytes(out)


def decode_tensor_file(buf: bytes, source: str = "<bytes>"):
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise CheckpointError(f"{source}: not a T1CP container")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{source}: CRC mismatch, file is corrupt")
    pos = 4
    try:
        (version,) = struct.unpack_from("<I", body, pos)
        pos += 4
        if version != VERSION:
            raise CheckpointError(f"{source}: unsupported version {version}")
        (n,) = struct.unpack_from("<I", body, pos)
        pos += 4
        config_text = body[pos:pos + n].decode("utf-8")
        pos += n
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + n].decode("utf-8")
            pos += n
            code, rank = struct.unpack_from("<BI", body, pos)
            pos += 5
            if code not in _DTYPES:
                raise CheckpointError(f"{source}: tensor {name} has unknown dtype code {code}")
            dims = struct.unpack_from(f"<{rank}Q", body, pos)
            pos += 8 * rank
            dt = _DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(body):
                raise CheckpointError(f"{source}: tensor {name} payload truncated")
            tensors[name] = np.frombuffer(body, dtype=dt, count=nbytes // dt.itemsize,
                                          offset=pos).reshape(dims).astype(dt.newbyteorder("="))
            pos += nbytes
    except struct.error as exc:
        raise CheckpointError(f"{source}: truncated container ({exc})") from None
    if pos != len(body):
        raise CheckpointError(f"{source}: {len(body) - pos} trailing bytes")
    return config_text, tensors


def write_tensor_file(path, tensors, config_text: str = "") -> None:
    path = Path(path)
    data = encode_tensor_file(tensors, config_text)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def read_tensor_file(path):
    path = Path(path)
    return decode_tensor_file(path.read_bytes(), str(path))


# ----------------------------------------------------------------------------
# run config: "[section]" headers and "key = value" lines
# ----------------------------------------------------------------------------

class ConfigError(ValueError):
    pass


def _parse_value(raw: str, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text: str, schema: dict, source: str = "<config>") -> dict:
    """Parse sectioned key-value text against ``schema`` ({section: {key: default}}).

    Unknown sections/keys and malformed values raise with the line number.
    """
    out = {sec: dict(keys) for sec, keys in schema.items()}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            if section not in schema:
                raise ConfigError(f"{source}:{lineno}: unknown section [{section}]")
            continue
        if "=" not in s:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if section is None:
            raise ConfigError(f"{source}:{lineno}: key outside of any section")
        key, raw = (p.strip() for p in s.split("=", 1))
        if key not in schema[section]:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r} in [{section}]")
        try:
            out[section][key] = _parse_value(raw, schema[section][key])
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return out


def format_config(values: dict) -> str:
    lines = []
    for sec, keys in values.items():
        lines.append(f"[{sec}]")
        for k, v in keys.items():
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)


# ----------------------------------------------------------------------------
# images
# ----------------------------------------------------------------------------

def to_uint8(pixels: np.ndarray) -> np.ndarray:
    """[-1, 1] floats -> uint8."""
    return np.clip(np.rint((np.asarray(pixels) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_uint8(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float64) / 127.5 - 1.0


def _read_header_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos + 1


def write_pnm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim == 2:
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n"
    elif img.ndim == 3 and img.shape[2] == 3:
        header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n"
    else:
        raise ValueError(f"cannot write PNM with shape {img.shape}")
    Path(path).write_bytes(header.encode("ascii") + img.tobytes())


def read_pnm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _read_header_tokens(data, 4)
    if magic not in (b"P5", b"P6") or int(maxval) != 255:
        raise ValueError(f"{path}: only binary P5/P6 with maxval 255 supported")
    w, h = int(w), int(h)
    ch = 3 if magic == b"P6" else 1
    arr = np.frombuffer(data, dtype=np.uint8, count=w * h * ch, offset=pos)
    return arr.reshape(h, w, ch) if ch == 3 else arr.reshape(h, w)


def write_image(path, img: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path, format="PNG")
    else:
        write_pnm(path, img)


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    return read_pnm(path)
