"""Tensor and spectrum file formats.

Binary OTP1 layout (all little-endian)::

    8 bytes   magic "OTPTNSR1"
    u32       order p
    u32       dimension n
    u8        symmetric flag
    3 bytes   padding
    n**p      float64 values, row-major

The text variant has a first line ``"p n"`` followed by one value per line.
Spectrum sidecars are text: ``"k n"``, then ``k`` eigenvalue lines, then
``k`` lines of ``n`` space-separated vector entries.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .tensor import DenseTensor, Spectrum, check_budget

MAGIC = b"OTPTNSR1"
_HEADER = struct.Struct("<8sIIB3x")


class FormatError(ValueError):
    """A file does not parse as the expected format."""


def tensor_to_bytes(A: DenseTensor) -> bytes:
    header = _HEADER.pack(MAGIC, A.order, A.dim, int(bool(A.symmetric)))
    return header + A.data.astype("<f8").tobytes()


def tensor_from_bytes(blob: bytes, max_elements: int | None = None) -> DenseTensor:
    if len(blob) < _HEADER.size:
        raise FormatError("truncated OTP1 header")
    magic, p, n, sym = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    size = check_budget(n, p, max_elements)
    expected = _HEADER.size + 8 * size
    if len(blob) != expected:
        raise FormatError(f"expected {expected} bytes for p={p}, n={n}, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    return DenseTensor(p, n, data, symmetric=bool(sym))


def write_tensor(path, A: DenseTensor, text: bool = False) -> None:
    if text:
        lines = [f"{A.order} {A.dim}"] + [repr(float(x)) for x in A.data]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    else:
        with open(path, "wb") as fh:
            fh.write(tensor_to_bytes(A))


def read_tensor(path, max_elements: int | None = None) -> DenseTensor:
    """Read either format; the binary magic decides which."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob.startswith(MAGIC):
        return tensor_from_bytes(blob, max_elements)
    try:
        tokens = blob.decode("ascii").split()
        p, n = int(tokens[0]), int(tokens[1])
        size = check_budget(n, p, max_elements)
        values = np.array([float(t) for t in tokens[2:]])
    except (UnicodeDecodeError, ValueError, IndexError) as exc:
        raise FormatError(f"{os.fspath(path)}: not an OTP1 tensor file") from exc
    if values.size != size:
        raise FormatError(f"text tensor declares {size} values, found {values.size}")
    return DenseTensor(p, n, values)


def write_vectors(path, vectors) -> list[int]:
    """Write each vector as an order-1 OTP1 record; return the byte offsets."""
    offsets = []
    pos = 0
    with open(path, "wb") as fh:
        for v in np.atleast_2d(vectors):
            blob = tensor_to_bytes(DenseTensor(1, v.size, v))
            offsets.append(pos)
            fh.write(blob)
            pos += len(blob)
    return offsets


def read_vectors(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    out = []
    pos = 0
    while pos < len(blob):
        _, p, n, _ = _HEADER.unpack_from(blob, pos)
        if p != 1:
            raise FormatError("vector records must have order 1")
        end = pos + _HEADER.size + 8 * n
        out.append(tensor_from_bytes(blob[pos:end]).data)
        pos = end
    return np.array(out)


def write_spectrum(path, spec: Spectrum) -> None:
    lines = [f"{spec.k} {spec.dim}"]
    lines += [repr(float(x)) for x in spec.eigenvalues]
    lines += [" ".join(repr(float(x)) for x in v) for v in spec.vectors]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_spectrum(path) -> Spectrum:
    with open(path) as fh:
        rows = [line.split() for line in fh if line.strip()]
    try:
        k, n = int(rows[0][0]), int(rows[0][1])
        lam = [float(r[0]) for r in rows[1 : 1 + k]]
        vec = [[float(x) for x in r] for r in rows[1 + k : 1 + 2 * k]]
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{os.fspath(path)}: malformed spectrum file") from exc
    if len(lam) != k or len(vec) != k or any(len(v) != n for v in vec):
        raise FormatError(f"{os.fspath(path)}: spectrum file has wrong shape")
    return Spectrum(np.array(lam), np.array(vec))
