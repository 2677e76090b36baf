"""On-disk formats: .nft tensor files plus small JSON/CSV helpers.

.nft layout: 8-byte magic "NFSTENS1", little-endian u32 header length, UTF-8
JSON header {"dtype": "f64"|"c128", "shape": [...]}, then the raw
little-endian row-major payload.  Complex payloads interleave (re, im)
pairs, which is exactly numpy's '<c16' memory layout.  Round-trips are
bit-exact.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError

MAGIC = b"NFSTENS1"

_DTYPE_TAGS = {"f64": np.dtype("<f8"), "c128": np.dtype("<c16")}


def save_tensor(path, array) -> None:
    arr = np.asarray(array)
    if arr.dtype == np.float64:
        tag = "f64"
    elif arr.dtype == np.complex128:
        tag = "c128"
    else:
        raise ContractError(f"only f64/c128 tensors can be saved, got {arr.dtype}")
    header = json.dumps(
        {"dtype": tag, "shape": list(arr.shape)}, separators=(",", ":")
    ).encode("utf-8")
    payload = np.ascontiguousarray(arr).astype(_DTYPE_TAGS[tag], copy=False)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload.tobytes(order="C"))


def load_tensor(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated tensor file")
    if blob[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic, not a tensor file")
    (header_len,) = struct.unpack("<I", blob[8:12])
    if len(blob) < 12 + header_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unparseable header ({exc})") from exc
    if not isinstance(header, dict) or "dtype" not in header or "shape" not in header:
        raise FormatError(f"{path}: header missing dtype/shape")
    tag = header["dtype"]
    if tag not in _DTYPE_TAGS:
        raise FormatError(f"{path}: unknown dtype tag {tag!r}")
    shape = header["shape"]
    if not isinstance(shape, list) or not all(
        isinstance(n, int) and n >= 0 for n in shape
    ):
        raise FormatError(f"{path}: malformed shape {shape!r}")
    dt = _DTYPE_TAGS[tag]
    expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    payload = blob[12 + header_len :]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    arr = np.frombuffer(payload, dtype=dt).reshape(shape)
    # native dtype, writable copy
    return arr.astype(np.complex128 if tag == "c128" else np.float64)


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def write_csv(path, fieldnames, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_csv(path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
