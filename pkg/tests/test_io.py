import struct

import numpy as np
import pytest

from otpower.io import (
    FormatError,
    read_spectrum,
    read_tensor,
    read_vectors,
    tensor_from_bytes,
    tensor_to_bytes,
    write_spectrum,
    write_tensor,
    write_vectors,
)
from otpower.tensor import DenseTensor, random_spectrum, symmetric_gaussian_tensor


def test_binary_layout():
    A = DenseTensor(2, 2, np.array([1.0, 2.0, 3.0, 4.0]), symmetric=False)
    blob = tensor_to_bytes(A)
    assert blob[:8] == b"OTPTNSR1"
    assert struct.unpack("<IIB", blob[8:17]) == (2, 2, 0)
    assert blob[17:20] == b"\0\0\0"
    assert np.array_equal(np.frombuffer(blob[20:], dtype="<f8"), A.data)


def test_binary_round_trip(tmp_path):
    A = symmetric_gaussian_tensor(4, 3, 1.0, seed=3)
    path = tmp_path / "a.otp"
    write_tensor(path, A)
    B = read_tensor(path)
    assert B.symmetric and B.order == 3 and B.dim == 4
    assert tensor_to_bytes(B) == path.read_bytes()


def test_text_round_trip_is_exact(tmp_path):
    A = symmetric_gaussian_tensor(3, 3, 1.0, seed=5)
    path = tmp_path / "a.txt"
    write_tensor(path, A, text=True)
    lines = path.read_text().splitlines()
    assert lines[0] == "3 3" and len(lines) == 1 + 27
    assert np.array_equal(read_tensor(path).data, A.data)


def test_rejects_corrupt_input(tmp_path):
    blob = tensor_to_bytes(DenseTensor.zeros(2, 3))
    with pytest.raises(FormatError):
        tensor_from_bytes(blob[:10])
    with pytest.raises(FormatError):
        tensor_from_bytes(b"XXXXXXXX" + blob[8:])
    with pytest.raises(FormatError):
        tensor_from_bytes(blob[:-8])
    bad = tmp_path / "bad.txt"
    bad.write_text("3 2\n1.0\n2.0\n")
    with pytest.raises(FormatError):
        read_tensor(bad)
    junk = tmp_path / "junk"
    junk.write_text("hello world\n")
    with pytest.raises(FormatError):
        read_tensor(junk)


def test_vector_records(tmp_path):
    V = np.random.default_rng(0).standard_normal((3, 5))
    path = tmp_path / "v.otp"
    offsets = write_vectors(path, V)
    assert offsets[0] == 0 and len(offsets) == 3
    assert np.array_equal(read_vectors(path), V)
    raw = path.read_bytes()
    for off, v in zip(offsets, V):
        assert tensor_from_bytes(raw[off : off + 20 + 8 * 5]).data.tolist() == v.tolist()


def test_spectrum_sidecar(tmp_path):
    spec = random_spectrum([2.0, 1.0, 0.5], 6, seed=1)
    path = tmp_path / "s.spectrum"
    write_spectrum(path, spec)
    first = path.read_text().splitlines()[0]
    assert first.split() == ["3", "6"]
    back = read_spectrum(path)
    assert np.array_equal(back.eigenvalues, spec.eigenvalues)
    assert np.array_equal(back.vectors, spec.vectors)
    path.write_text("2 3\n1.0\n")
    with pytest.raises(FormatError):
        read_spectrum(path)
