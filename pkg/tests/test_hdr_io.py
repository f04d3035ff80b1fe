import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as st_np

from skyforge.hdr_io import (
    CodecError,
    read_pfm,
    read_pgm_mask,
    read_ppm,
    write_pfm,
    write_pgm_mask,
    write_ppm,
)


class TestPfm:
    def test_tiny_round_trip(self):
        img = np.array([[[1.0, 0.5, 0.25]]], dtype=np.float32)
        assert np.array_equal(read_pfm(write_pfm(img)), img)

    def test_header_layout(self):
        img = np.zeros((32, 128, 3), np.float32)
        payload = write_pfm(img)
        assert payload.startswith(b"PF\n128 32\n-1.0\n")
        decoded = read_pfm(payload)
        assert decoded.shape == (32, 128, 3)

    @given(
        st_np.arrays(
            np.float32,
            st.tuples(st.integers(1, 8), st.integers(1, 8), st.just(3)),
            elements=st.floats(-1e6, 1e6, width=32, allow_nan=False),
        )
    )
    def test_round_trip_bit_exact(self, img):
        assert np.array_equal(read_pfm(write_pfm(img)), img)

    def test_truncated_payload_names_counts(self):
        payload = write_pfm(np.zeros((4, 16, 3), np.float32))
        with pytest.raises(CodecError, match=r"expected 768"):
            read_pfm(payload[:-10])

    def test_malformed_header(self):
        with pytest.raises(CodecError):
            read_pfm(b"P6\n2 2\n255\n" + b"\0" * 12)
        with pytest.raises(CodecError):
            read_pfm(b"PF\nhello world\n-1.0\n")

    def test_non_finite_write_rejected(self):
        img = np.zeros((2, 2, 3), np.float32)
        img[0, 0, 0] = np.inf
        with pytest.raises(CodecError):
            write_pfm(img)

    def test_big_endian_read(self):
        img = np.arange(12, dtype=np.float32).reshape(1, 4, 3)
        payload = b"PF\n4 1\n1.0\n" + img[::-1].astype(">f4").tobytes()
        assert np.array_equal(read_pfm(payload), img)

    def test_row_order_bottom_to_top(self):
        img = np.zeros((2, 1, 3), np.float32)
        img[0] = 7.0  # top row
        payload = write_pfm(img)
        first_float = np.frombuffer(payload.split(b"-1.0\n", 1)[1][:4], "<f4")[0]
        assert first_float == 0.0  # bottom scanline written first


class TestPgmMask:
    def test_round_trip(self, rng):
        mask = rng.random((16, 64)) > 0.5
        assert np.array_equal(read_pgm_mask(write_pgm_mask(mask)), mask)

    def test_encoding_values(self):
        mask = np.array([[True, False]])
        payload = write_pgm_mask(mask)
        assert payload.endswith(bytes([255, 0]))

    def test_truncated(self):
        with pytest.raises(CodecError):
            read_pgm_mask(write_pgm_mask(np.ones((4, 4), bool))[:-1])


class TestPpm:
    def test_round_trip(self, rng):
        img = (rng.random((8, 8, 3)) * 255).astype(np.uint8)
        assert np.array_equal(read_ppm(write_ppm(img)), img)
