import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from maskconver import tensor_io
from maskconver.tensor_io import TensorFormatError, decode, encode


def test_header_layout():
    buf = encode(np.zeros((2, 3), np.uint16))
    assert buf[:4] == b"MCT1"
    assert buf[4] == 1 and buf[5] == 2
    assert int.from_bytes(buf[6:10], "little") == 2
    assert int.from_bytes(buf[10:14], "little") == 3
    assert len(buf) == 14 + 12


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(st.sampled_from([np.float32, np.uint16, np.uint8]),
                  hnp.array_shapes(min_dims=1, max_dims=4, min_side=1, max_side=5)))
def test_roundtrip(arr):
    out = decode(encode(arr))
    assert out.dtype == arr.dtype and out.shape == arr.shape
    np.testing.assert_array_equal(out, arr)


def test_float64_stored_as_float32():
    out = decode(encode(np.array([0.1, 0.2])))
    assert out.dtype == np.float32


def test_unsupported_dtype():
    with pytest.raises(TypeError):
        encode(np.zeros(3, np.int64))


def test_bad_magic_names_byte_zero():
    buf = bytearray(encode(np.zeros(2, np.uint8)))
    buf[:4] = b"XXXX"
    with pytest.raises(TensorFormatError, match="byte 0"):
        decode(bytes(buf))


def test_truncated_payload_names_expected_size():
    buf = encode(np.zeros((4, 4), np.float32))
    with pytest.raises(TensorFormatError, match=f"expected {len(buf)} bytes"):
        decode(buf[:-3])


def test_truncated_header_and_bad_dtype():
    with pytest.raises(TensorFormatError, match="header"):
        decode(b"MCT")
    with pytest.raises(TensorFormatError, match="dims truncated"):
        decode(b"MCT1\x00\x03\x01\x00")
    with pytest.raises(TensorFormatError, match="dtype code 9"):
        decode(b"MCT1\x09\x01\x01\x00\x00\x00\x00")


def test_zero_dim_rejected():
    buf = b"MCT1\x02\x02" + (3).to_bytes(4, "little") + (0).to_bytes(4, "little")
    with pytest.raises(TensorFormatError, match="zero dimension at byte 10"):
        decode(buf)


def test_file_errors_carry_path(tmp_path):
    p = tmp_path / "x.mct"
    tensor_io.save(p, np.ones(3, np.float32))
    np.testing.assert_array_equal(tensor_io.load(p), np.ones(3))
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(TensorFormatError, match="x.mct"):
        tensor_io.load(p)
