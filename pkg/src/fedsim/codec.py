"""Binary wire format for client -> server round updates.

Layout (little-endian)::

    offset  size  field
    0       4     magic b"FSIM"
    4       1     version (0x01)
    5       4     client_id   u32
    9       4     round_index u32
    13      8     n_samples   u64
    21      8     param_len   u64
    29      8*n   params      IEEE-754 float64
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from fedsim.errors import CorruptionError, FormatError, LengthError, ProtocolError

MAGIC = b"FSIM"
VERSION = 1
HEADER = struct.Struct("<4sBIIQQ")
HEADER_SIZE = HEADER.size  # 29

_U32_MAX = (1 << 32) - 1


@dataclass(eq=False)
class RoundUpdate:
    client_id: int
    n_samples: int
    params: np.ndarray
    round_index: int

    def __eq__(self, other):
        if not isinstance(other, RoundUpdate):
            return NotImplemented
        return (self.client_id == other.client_id
                and self.n_samples == other.n_samples
                and self.round_index == other.round_index
                and self.params.dtype == other.params.dtype
                and self.params.tobytes() == other.params.tobytes())


def encoded_size(param_len: int) -> int:
    return HEADER_SIZE + 8 * param_len


def encode_update(u: RoundUpdate) -> bytes:
    params = np.ascontiguousarray(u.params, dtype="<f8")
    if params.ndim != 1:
        raise FormatError("params must be a flat vector")
    if not np.all(np.isfinite(params)):
        raise CorruptionError("refusing to encode non-finite parameters")
    if not (0 <= u.client_id <= _U32_MAX and 0 <= u.round_index <= _U32_MAX):
        raise FormatError("client_id and round_index must fit in u32")
    if u.n_samples <= 0:
        raise FormatError("n_samples must be positive")
    header = HEADER.pack(MAGIC, VERSION, u.client_id, u.round_index, u.n_samples, params.size)
    return header + params.tobytes()


def decode_update(
    buf: bytes,
    *,
    expect_client: int | None = None,
    expect_round: int | None = None,
    expect_n_samples: int | None = None,
    expect_len: int | None = None,
) -> RoundUpdate:
    """Parse and validate one update.

    The ``expect_*`` arguments let a server that knows who it is talking to
    reject messages whose header disagrees with its own session record.
    """
    buf = bytes(buf)
    if len(buf) < HEADER_SIZE:
        raise LengthError(f"buffer of {len(buf)} bytes is shorter than the header")
    magic, version, client_id, round_index, n_samples, param_len = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if len(buf) != encoded_size(param_len):
        raise LengthError(
            f"header announces {param_len} params ({encoded_size(param_len)} bytes), "
            f"buffer has {len(buf)}")
    if n_samples == 0:
        raise CorruptionError("n_samples is zero")

    for name, got, want in (
        ("client_id", client_id, expect_client),
        ("round_index", round_index, expect_round),
        ("n_samples", n_samples, expect_n_samples),
        ("param_len", param_len, expect_len),
    ):
        if want is not None and got != want:
            raise ProtocolError(f"{name} is {got}, expected {want}")

    params = np.frombuffer(buf, dtype="<f8", offset=HEADER_SIZE, count=param_len).astype(np.float64)
    if not np.all(np.isfinite(params)):
        raise CorruptionError("payload holds non-finite parameters")
    return RoundUpdate(client_id, n_samples, params, round_index)
