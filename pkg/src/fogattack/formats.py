"""Netpbm images, FOGB model checkpoints and atomic report writing."""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .model import Model, layer_from_description

MAGIC = b"FOGB"
VERSION = 1


class FormatError(ValueError):
    pass


def quantize(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] to bytes with round-half-up."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_pnm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim == 2 or (image.ndim == 3 and image.shape[2] == 1):
        magic, plane = b"P5", quantize(image.reshape(image.shape[0], image.shape[1]))
    elif image.ndim == 3 and image.shape[2] == 3:
        magic, plane = b"P6", quantize(image)
    else:
        raise ValueError(f"cannot encode image of shape {image.shape}")
    h, w = plane.shape[:2]
    return magic + b"\n%d %d\n255\n" % (w, h) + plane.tobytes()


def write_image(path, image: np.ndarray) -> None:
    """Write P6 (3 channels) or P5 (grayscale) with maxval 255."""
    atomic_write_bytes(path, encode_pnm(image))


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates header and raster
    return tokens, pos + 1


def decode_pnm(data: bytes) -> np.ndarray:
    tokens, offset = _header_tokens(data, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported magic {magic!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("malformed header") from None
    if w < 1 or h < 1 or maxval != 255:
        raise FormatError("only positive sizes with maxval 255 are supported")
    channels = 3 if magic == b"P6" else 1
    n = w * h * channels
    payload = data[offset:offset + n]
    if len(payload) != n:
        raise FormatError(f"truncated payload: expected {n} bytes, got {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, channels)
    return pixels.astype(np.float64) / 255.0


def read_image(path) -> np.ndarray:
    return decode_pnm(Path(path).read_bytes())


def encode_checkpoint(model: Model) -> bytes:
    desc = model.describe()
    desc["seed"] = model.seed
    desc_bytes = json.dumps(desc, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(desc_bytes)))
    buf.write(desc_bytes)
    params = model.parameters()
    buf.write(struct.pack("<I", len(params)))
    for _, _, arr in params:
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.astype("<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(path, model: Model) -> None:
    atomic_write_bytes(path, encode_checkpoint(model))


def decode_checkpoint(data: bytes) -> Model:
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise FormatError("truncated checkpoint")
        chunk = bytes(view[pos:pos + n])
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise FormatError("not a FOGB checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (desc_len,) = struct.unpack("<I", take(4))
    try:
        desc = json.loads(take(desc_len))
        layers = [layer_from_description(d) for d in desc["layers"]]
        model = Model(layers, tuple(desc["input_shape"]), int(desc.get("seed", 0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad architecture descriptor: {exc}") from None
    if model.n_classes != desc.get("n_classes"):
        raise FormatError("class count disagrees with layer shapes")
    params = model.parameters()
    (count,) = struct.unpack("<I", take(4))
    if count != len(params):
        raise FormatError(f"expected {len(params)} parameter arrays, found {count}")
    for _, _, arr in params:
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        if tuple(shape) != arr.shape:
            raise FormatError(f"parameter shape {shape} does not match {arr.shape}")
        values = np.frombuffer(take(4 * arr.size), dtype="<f4").reshape(shape)
        arr[...] = values.astype(np.float64)
    if pos != len(view):
        raise FormatError("trailing bytes after checkpoint")
    return model


def load_checkpoint(path) -> Model:
    return decode_checkpoint(Path(path).read_bytes())


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path, obj) -> None:
    atomic_write_bytes(path, dumps_json(obj).encode())


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> None:
    if columns is None:
        columns = list(rows[0]) if rows else []
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    atomic_write_bytes(path, out.getvalue().encode())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
