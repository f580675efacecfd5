"""``.f3d`` volume container.

Layout::

    b"F3D1"                      4 magic bytes
    <UTF-8 JSON header>\\n        one line
    <payload>                    raw little-endian array bytes, back to back

Header fields: ``format`` ("f3d"), ``version`` (1), ``arrays`` (list of
``{name, role, dtype, shape, offset, nbytes}``, offsets relative to the
payload start) and free-form ``meta``. A volume record stores ``volume``
(role ``image``, ``(M, D, H, W)``) and ``mask`` (role ``labels``, ``(D, H, W)``).
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

MAGIC = b"F3D1"
VERSION = 1
SUFFIX = ".f3d"
SUPPORTED_DTYPES = {"<f4", "<f8", "|u1", "|i1", "<u2", "<i2", "<i4", "<i8"}


class F3DError(Exception):
    code = "f3d_error"


class MalformedHeaderError(F3DError):
    code = "malformed_header"


class DimensionMismatchError(F3DError):
    code = "dim_mismatch"


class DTypeMismatchError(F3DError):
    code = "dtype_mismatch"


class TruncatedPayloadError(F3DError):
    code = "truncated_payload"


def content_hash(arr: np.ndarray) -> str:
    arr = np.ascontiguousarray(arr)
    h = hashlib.sha256()
    h.update(f"{arr.dtype.newbyteorder('<').str}{arr.shape}".encode())
    h.update(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    return h.hexdigest()


def _le(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    if le.dtype.str not in SUPPORTED_DTYPES:
        raise DTypeMismatchError(f"unsupported dtype {arr.dtype}")
    return le


def write_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None, roles: dict[str, str] | None = None) -> Path:
    path = Path(path)
    roles = roles or {}
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        le = _le(arr)
        raw = le.tobytes()
        entries.append(
            {"name": name, "role": roles.get(name, name), "dtype": le.dtype.str,
             "shape": list(le.shape), "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    header = {"format": "f3d", "version": VERSION, "arrays": entries, "meta": meta or {}}
    line = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(line + b"\n")
        for raw in chunks:
            fh.write(raw)
    return path


def read_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic bytes {blob[:4]!r}")
    end = blob.find(b"\n", 4)
    if end < 0:
        raise MalformedHeaderError(f"{path}: header is not newline terminated")
    try:
        header = json.loads(blob[4:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"{path}: header is not valid JSON ({exc})") from None
    if not isinstance(header, dict) or header.get("format") != "f3d" or not isinstance(header.get("arrays"), list):
        raise MalformedHeaderError(f"{path}: missing f3d header fields")
    if header.get("version") != VERSION:
        raise MalformedHeaderError(f"{path}: unsupported version {header.get('version')}")
    payload = memoryview(blob)[end + 1 :]
    arrays = {}
    for entry in header["arrays"]:
        try:
            name, dtype, shape = entry["name"], entry["dtype"], tuple(int(s) for s in entry["shape"])
            offset, nbytes = int(entry["offset"]), int(entry["nbytes"])
        except (KeyError, TypeError, ValueError):
            raise MalformedHeaderError(f"{path}: malformed array entry {entry!r}") from None
        if dtype not in SUPPORTED_DTYPES:
            raise DTypeMismatchError(f"{path}: array {name!r} has unsupported dtype {dtype}")
        expected = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
        if expected != nbytes or offset + nbytes > len(payload):
            raise TruncatedPayloadError(
                f"{path}: array {name!r} needs {expected} bytes at offset {offset}, "
                f"header says {nbytes}, payload has {len(payload)}"
            )
        arr = np.frombuffer(payload[offset : offset + nbytes], dtype=dtype).reshape(shape)
        arrays[name] = arr.astype(np.dtype(dtype).newbyteorder("="), copy=True)
    return arrays, header.get("meta", {})


def write_volume(record, path) -> Path:
    meta = {"sample_id": record.sample_id, "provenance": record.provenance}
    return write_arrays(
        path,
        {"volume": record.volume, "mask": record.mask},
        meta=meta,
        roles={"volume": "image", "mask": "labels"},
    )


def read_volume(path):
    from .phantom import VolumeRecord

    arrays, meta = read_arrays(path)
    if "volume" not in arrays or "mask" not in arrays:
        raise MalformedHeaderError(f"{path}: volume record needs 'volume' and 'mask' arrays")
    volume, mask = arrays["volume"], arrays["mask"]
    if volume.ndim != 4 or mask.ndim != 3 or volume.shape[1:] != mask.shape:
        raise DimensionMismatchError(f"{path}: volume {volume.shape} and mask {mask.shape} disagree")
    if volume.dtype.kind != "f":
        raise DTypeMismatchError(f"{path}: volume must be floating point, got {volume.dtype}")
    if mask.dtype.kind not in "ui":
        raise DTypeMismatchError(f"{path}: mask must be integer, got {mask.dtype}")
    return VolumeRecord(
        sample_id=meta.get("sample_id", Path(path).stem),
        volume=volume,
        mask=mask,
        provenance=meta.get("provenance", {}),
    )
