"""On-disk container: a human-readable JSON manifest plus one binary file of
raw little-endian arrays with explicit per-record shape headers.

Dataset bundles and model checkpoints share this format. Each array record in
``arrays.bin`` starts with a small header (magic, dtype code, ndim, shape) so a
reader can validate the payload independently of the manifest.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

SCHEMA_VERSION = "1.0"
MANIFEST_NAME = "manifest.json"
ARRAYS_NAME = "arrays.bin"

_MAGIC = b"AVR1"
# dtype code <-> little-endian numpy dtype
_DTYPE_CODES = {0: "<f4", 1: "<i4", 2: "<f8", 3: "<i8", 4: "|u1"}
_DTYPE_TO_CODE = {np.dtype(v): k for k, v in _DTYPE_CODES.items()}


class ContainerError(Exception):
    """Base error for container reading/writing."""


class SchemaVersionError(ContainerError):
    """Manifest schema version is not supported by this reader."""


class TruncatedArrayError(ContainerError):
    """An array record ended before its declared payload."""


def _check_version(version: str) -> None:
    major = str(version).split(".", 1)[0]
    supported = SCHEMA_VERSION.split(".", 1)[0]
    if major != supported:
        raise SchemaVersionError(
            f"manifest schema version {version!r} is not readable by a "
            f"version {SCHEMA_VERSION} reader"
        )


def _write_record(fh, arr: np.ndarray) -> int:
    """Append one array record, returning its byte offset."""
    dt = arr.dtype.newbyteorder("<")
    if dt not in _DTYPE_TO_CODE:
        raise ContainerError(f"unsupported array dtype {arr.dtype}")
    offset = fh.tell()
    fh.write(_MAGIC)
    fh.write(struct.pack("<BB", _DTYPE_TO_CODE[dt], arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return offset


def _read_record(fh, name: str) -> np.ndarray:
    head = fh.read(6)
    if len(head) < 6 or head[:4] != _MAGIC:
        raise TruncatedArrayError(f"array {name!r}: missing or corrupt record header")
    code, ndim = struct.unpack("<BB", head[4:6])
    if code not in _DTYPE_CODES:
        raise ContainerError(f"array {name!r}: unknown dtype code {code}")
    raw_shape = fh.read(4 * ndim)
    if len(raw_shape) < 4 * ndim:
        raise TruncatedArrayError(f"array {name!r}: truncated shape header")
    shape = struct.unpack(f"<{ndim}I", raw_shape)
    dtype = np.dtype(_DTYPE_CODES[code])
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = fh.read(nbytes)
    if len(payload) < nbytes:
        raise TruncatedArrayError(
            f"array {name!r}: expected {nbytes} bytes, file ends after {len(payload)}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def write_container(path: str | Path, manifest: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write ``manifest`` and named arrays to directory ``path``.

    The manifest gains ``schema_version`` and an ``arrays`` index mapping each
    name to its dtype, shape and byte offset. Insertion order of ``arrays`` is
    the on-disk record order.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index: dict[str, dict] = {}
    with open(path / ARRAYS_NAME, "wb") as fh:
        for name, arr in arrays.items():
            offset = _write_record(fh, np.asarray(arr))
            index[name] = {
                "dtype": str(np.asarray(arr).dtype),
                "shape": list(np.asarray(arr).shape),
                "offset": offset,
            }
    doc = {"schema_version": SCHEMA_VERSION, **manifest, "arrays": index}
    with open(path / MANIFEST_NAME, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container directory; returns (manifest, arrays).

    Raises :class:`SchemaVersionError` on a major-version mismatch and
    :class:`TruncatedArrayError` (naming the array) on a short payload.
    """
    path = Path(path)
    with open(path / MANIFEST_NAME) as fh:
        manifest = json.load(fh)
    _check_version(manifest.get("schema_version", "0"))
    index = manifest.get("arrays", {})
    arrays: dict[str, np.ndarray] = {}
    with open(path / ARRAYS_NAME, "rb") as fh:
        for name, meta in index.items():
            fh.seek(meta["offset"])
            arr = _read_record(fh, name)
            if list(arr.shape) != list(meta["shape"]):
                raise ContainerError(
                    f"array {name!r}: header shape {arr.shape} does not match "
                    f"manifest shape {tuple(meta['shape'])}"
                )
            arrays[name] = arr
    return manifest, arrays
