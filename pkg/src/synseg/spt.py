"""Dense tensor container format (SPT).

Layout: the magic bytes ``SPT1``, one UTF-8 JSON header line
``{"dtype": "f32"|"u8"|"u16", "shape": [...], "order": "row-major"}``,
a single ``\\n``, then the raw little-endian row-major payload.
Round trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"SPT1"

_DTYPE_BY_CODE = {
    "f32": np.dtype("<f4"),
    "u8": np.dtype("u1"),
    "u16": np.dtype("<u2"),
}
_CODE_BY_KIND = {("f", 4): "f32", ("u", 1): "u8", ("u", 2): "u16"}


def _dtype_code(dtype: np.dtype) -> str:
    code = _CODE_BY_KIND.get((dtype.kind, dtype.itemsize))
    if code is None:
        raise FormatError(f"unsupported dtype {dtype}; expected f32, u8 or u16")
    return code


def write_tensor(path: str | Path, values: np.ndarray) -> None:
    """Write a dense float32/uint8/uint16 tensor to *path*."""
    values = np.ascontiguousarray(values)
    code = _dtype_code(values.dtype)
    header = {"dtype": code, "shape": list(values.shape), "order": "row-major"}
    payload = values.astype(_DTYPE_BY_CODE[code], copy=False).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)


def read_tensor(path: str | Path) -> np.ndarray:
    """Read a tensor written by :func:`write_tensor`.

    Raises FormatError on a bad magic, malformed header, unknown dtype,
    or a payload whose length disagrees with the declared shape.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}; not an SPT file")
        header_bytes = bytearray()
        while True:
            ch = fh.read(1)
            if not ch:
                raise FormatError("truncated header: no newline found")
            if ch == b"\n":
                break
            header_bytes.extend(ch)
        try:
            header = json.loads(header_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"malformed header: {exc}") from exc
        dtype_code = header.get("dtype")
        if dtype_code not in _DTYPE_BY_CODE:
            raise FormatError(f"unknown dtype code {dtype_code!r}")
        shape = header.get("shape")
        if not isinstance(shape, list) or not all(
            isinstance(n, int) and n >= 0 for n in shape
        ):
            raise FormatError(f"invalid shape {shape!r}")
        if header.get("order") != "row-major":
            raise FormatError(f"unsupported order {header.get('order')!r}")
        dtype = _DTYPE_BY_CODE[dtype_code]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = fh.read()
        expected = count * dtype.itemsize
        if len(payload) != expected:
            raise FormatError(
                f"payload is {len(payload)} bytes, expected {expected} "
                f"for shape {shape} of {dtype_code}"
            )
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
