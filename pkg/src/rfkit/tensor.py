"""Dense tensor container and the RFT on-disk format.

RFT layout: 8-byte magic "RFTENSOR", u32 little-endian header length, UTF-8
JSON header {"dtype":"f64","shape":[...],"labels":[...]}, then the row-major
little-endian float64 payload. CSV import/export covers rank <= 2 tensors.
"""

import json
import struct

import numpy as np

from .errors import DataError, FormatError

MAGIC = b"RFTENSOR"


class Tensor:
    """Shape-tagged dense float64 array with optional per-axis labels."""

    def __init__(self, data, labels=None):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(s <= 0 for s in arr.shape):
            raise DataError(f"tensor shape must be positive, got {arr.shape}")
        if labels is not None:
            labels = [str(l) for l in labels]
            if len(labels) != arr.ndim:
                raise DataError("labels must match tensor rank")
        if not np.all(np.isfinite(arr)):
            raise DataError("tensor contains non-finite values")
        self.arr = arr
        self.labels = labels

    @property
    def shape(self):
        return self.arr.shape

    def check_finite(self, what="tensor"):
        if not np.all(np.isfinite(self.arr)):
            raise DataError(f"{what} contains non-finite values")
        return self


def kron(a, b):
    """Kronecker product of two matrices (vectors are treated as 1-row/col)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim > 2 or b.ndim > 2:
        raise DataError("kron expects matrices")
    return np.kron(a, b)


def write_tensor(path, t):
    if not isinstance(t, Tensor):
        t = Tensor(t)
    if not np.all(np.isfinite(t.arr)):
        raise FormatError("non-finite", "refusing to write non-finite tensor")
    header = {
        "dtype": "f64",
        "shape": list(t.arr.shape),
        "labels": t.labels if t.labels is not None else [],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(np.ascontiguousarray(t.arr, dtype="<f8").tobytes())


def read_tensor(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}")
    if len(raw) < 12 or raw[:8] != MAGIC:
        raise FormatError("bad-magic", f"{path}: not an RFT tensor file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + hlen:
        raise FormatError("length-mismatch", f"{path}: truncated header")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
        shape = [int(s) for s in header["shape"]]
        dtype = header.get("dtype", "f64")
        labels = header.get("labels") or None
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError("bad-header", f"{path}: malformed header ({exc})")
    if dtype != "f64":
        raise FormatError("bad-header", f"{path}: unsupported dtype {dtype!r}")
    if len(shape) == 0 or any(s <= 0 for s in shape):
        raise FormatError("empty-shape", f"{path}: header shape {shape} is degenerate")
    n = int(np.prod(shape))
    payload = raw[12 + hlen:]
    if len(payload) != 8 * n:
        raise FormatError(
            "length-mismatch",
            f"{path}: payload length mismatch (expected {8 * n} bytes, got {len(payload)})",
        )
    arr = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    if not np.all(np.isfinite(arr)):
        raise FormatError("non-finite", f"{path}: payload contains non-finite values")
    return Tensor(arr, labels)


def write_csv(path, t):
    if not isinstance(t, Tensor):
        t = Tensor(t)
    if t.arr.ndim > 2:
        raise DataError("CSV export supports rank <= 2 tensors")
    mat = np.atleast_2d(t.arr)
    with open(path, "w") as fh:
        for row in mat:
            fh.write(",".join(format(v, ".17g") for v in row))
            fh.write("\n")


def read_csv(path):
    rows = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError:
                raise FormatError("bad-csv", f"{path}:{ln}: unparseable value")
    if not rows:
        raise FormatError("empty-shape", f"{path}: no data rows")
    if len({len(r) for r in rows}) != 1:
        raise FormatError("length-mismatch", f"{path}: ragged rows")
    arr = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise FormatError("non-finite", f"{path}: non-finite values")
    return Tensor(arr)
