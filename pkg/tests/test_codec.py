import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedsim.codec import HEADER_SIZE, RoundUpdate, decode_update, encode_update, encoded_size
from fedsim.errors import CodecError, CorruptionError, FedSimError, FormatError, LengthError, ProtocolError


def sample_update(n=61, seed=0):
    rng = np.random.default_rng(seed)
    return RoundUpdate(client_id=3, n_samples=150, params=rng.normal(size=n), round_index=7)


def test_sizes():
    assert HEADER_SIZE == 4 + 1 + 4 + 4 + 8 + 8 == 29
    assert encoded_size(61) == 517
    assert len(encode_update(sample_update(61))) == 517


def test_layout_is_little_endian_fixed_width():
    u = RoundUpdate(1, 2, np.array([1.5]), 3)
    buf = encode_update(u)
    assert buf[:5] == b"FSIM\x01"
    assert struct.unpack("<IIQQ", buf[5:29]) == (1, 3, 2, 1)
    assert struct.unpack("<d", buf[29:]) == (1.5,)


def test_round_trip_1000_random_updates():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        u = RoundUpdate(
            client_id=int(rng.integers(0, 2**32)),
            n_samples=int(rng.integers(1, 2**63)),
            params=rng.normal(size=int(rng.integers(0, 80))) * 10.0 ** rng.integers(-300, 300),
            round_index=int(rng.integers(0, 2**32)),
        )
        assert decode_update(encode_update(u)) == u


@given(arrays(np.float64, st.integers(0, 40), elements=st.floats(allow_nan=False, allow_infinity=False)),
       st.integers(0, 2**32 - 1), st.integers(1, 2**64 - 1))
def test_round_trip_bit_exact(params, cid, n):
    u = RoundUpdate(cid, n, params, 0)
    back = decode_update(encode_update(u))
    assert back == u
    assert back.params.tobytes() == params.tobytes()


def test_negative_zero_survives():
    u = RoundUpdate(0, 1, np.array([-0.0, 0.0]), 0)
    assert decode_update(encode_update(u)).params.tobytes() == u.params.tobytes()


def test_truncation_raises_length_error():
    buf = encode_update(sample_update())
    for cut in range(len(buf)):
        with pytest.raises(LengthError):
            decode_update(buf[:cut])
    with pytest.raises(LengthError):
        decode_update(buf + b"\x00")


def test_bad_magic_and_version():
    buf = bytearray(encode_update(sample_update()))
    bad = bytes(b"XSIM") + bytes(buf[4:])
    with pytest.raises(FormatError):
        decode_update(bad)
    buf[4] = 2
    with pytest.raises(FormatError):
        decode_update(bytes(buf))


def test_non_finite_payload_is_corruption():
    buf = bytearray(encode_update(RoundUpdate(0, 1, np.array([1.0, 2.0]), 0)))
    buf[29:37] = struct.pack("<d", float("nan"))
    with pytest.raises(CorruptionError):
        decode_update(bytes(buf))
    with pytest.raises(CorruptionError):
        encode_update(RoundUpdate(0, 1, np.array([np.inf]), 0))


def test_zero_samples_rejected():
    buf = bytearray(encode_update(RoundUpdate(0, 1, np.array([1.0]), 0)))
    buf[13:21] = bytes(8)
    with pytest.raises(CorruptionError):
        decode_update(bytes(buf))


def test_structural_header_corruptions_always_rejected():
    """magic, version and param_len have a single valid value for a given buffer."""
    buf = encode_update(sample_update())
    structural = list(range(0, 5)) + list(range(21, 29))
    for pos in structural:
        for delta in range(1, 256):
            bad = bytearray(buf)
            bad[pos] = (bad[pos] + delta) % 256
            with pytest.raises(CodecError):
                decode_update(bytes(bad))


def test_every_header_corruption_rejected_with_server_context():
    u = sample_update()
    buf = encode_update(u)
    expect = dict(expect_client=u.client_id, expect_round=u.round_index,
                  expect_n_samples=u.n_samples, expect_len=u.params.size)
    assert decode_update(buf, **expect) == u
    for pos in range(HEADER_SIZE):
        for delta in range(1, 256):
            bad = bytearray(buf)
            bad[pos] = (bad[pos] + delta) % 256
            with pytest.raises((CodecError, ProtocolError)):
                decode_update(bytes(bad), **expect)


def test_random_garbage_never_crashes():
    rng = np.random.default_rng(3)
    buf = encode_update(sample_update(8))
    for _ in range(2000):
        bad = bytearray(buf)
        for pos in rng.integers(0, len(bad), size=int(rng.integers(1, 4))):
            bad[pos] = int(rng.integers(0, 256))
        try:
            decode_update(bytes(bad))
        except FedSimError:
            pass


def test_value_equality_is_bitwise():
    a = sample_update()
    b = RoundUpdate(a.client_id, a.n_samples, a.params.copy(), a.round_index)
    assert a == b
    b.params[0] = np.nextafter(b.params[0], np.inf)
    assert a != b
