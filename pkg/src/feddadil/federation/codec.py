"""Binary framing for the round protocol.

Frame = 18-byte header + payload. Header fields, little-endian:

    magic     4 bytes  b"FDDL"
    version   1 byte   1
    msg_type  1 byte   see MsgType
    round     4 bytes  unsigned
    length    8 bytes  unsigned, payload size in bytes

Atom payloads (AtomBatch and AtomVersion) start with ``K, n_b, d, n_c`` as
4-byte unsigned ints, followed per atom by the row indices (``n_b`` x u32),
the features (``n_b x d`` float32) and the labels (``n_b x n_c`` float32).
AtomVersion appends the client's mean local loss as one float64. RoundAck
and Shutdown have empty payloads.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"FDDL"
VERSION = 1
HEADER = struct.Struct("<4sBBIQ")
HEADER_SIZE = HEADER.size
_DIMS = struct.Struct("<4I")
_LOSS = struct.Struct("<d")


class ProtocolError(Exception):
    pass


class MsgType(enum.IntEnum):
    ATOM_BATCH = 0x01  # server -> client
    ATOM_VERSION = 0x02  # client -> server
    ROUND_ACK = 0x03  # server -> client, commits the client's round
    SHUTDOWN = 0x04


@dataclass
class RoundMessage:
    msg_type: MsgType
    round: int
    payload: bytes = b""


def encode_message(msg: RoundMessage) -> bytes:
    if not 0 <= msg.round < 2**32:
        raise ProtocolError(f"round {msg.round} does not fit in 4 bytes")
    return HEADER.pack(MAGIC, VERSION, int(msg.msg_type), msg.round, len(msg.payload)) + msg.payload


def decode_header(raw: bytes) -> tuple[MsgType, int, int]:
    if len(raw) < HEADER_SIZE:
        raise ProtocolError(f"header needs {HEADER_SIZE} bytes, got {len(raw)}")
    magic, version, msg_type, rnd, length = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version}")
    try:
        msg_type = MsgType(msg_type)
    except ValueError:
        raise ProtocolError(f"unknown msg_type 0x{msg_type:02x}") from None
    return msg_type, rnd, length


def decode_message(raw: bytes) -> RoundMessage:
    msg_type, rnd, length = decode_header(raw)
    payload = raw[HEADER_SIZE:]
    if len(payload) != length:
        raise ProtocolError(f"payload_len says {length} bytes, frame carries {len(payload)}")
    return RoundMessage(msg_type, rnd, payload)


@dataclass
class AtomRows:
    """Mini-batch rows of every atom, as carried on the wire."""

    indices: np.ndarray  # (n_b,)
    features: list[np.ndarray]  # K x (n_b, d)
    labels: list[np.ndarray]  # K x (n_b, n_c)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (len(self.features), len(self.indices),
                self.features[0].shape[1], self.labels[0].shape[1])


def atom_payload_size(K: int, n_b: int, d: int, n_c: int) -> int:
    return _DIMS.size + K * (4 * n_b + 4 * n_b * d + 4 * n_b * n_c)


def encode_atom_rows(rows: AtomRows) -> bytes:
    K, n_b, d, n_c = rows.shape
    idx = np.asarray(rows.indices)
    if idx.min(initial=0) < 0 or idx.max(initial=0) >= 2**32:
        raise ProtocolError("row index out of u32 range")
    parts = [_DIMS.pack(K, n_b, d, n_c)]
    for X, Y in zip(rows.features, rows.labels):
        if X.shape != (n_b, d) or Y.shape != (n_b, n_c):
            raise ProtocolError(f"atom block shapes {X.shape}, {Y.shape} disagree with header")
        parts.append(idx.astype("<u4").tobytes())
        parts.append(np.ascontiguousarray(X, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(Y, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_atom_rows(payload: bytes, trailer: int = 0) -> AtomRows:
    if len(payload) < _DIMS.size:
        raise ProtocolError("atom payload shorter than its dimension block")
    K, n_b, d, n_c = _DIMS.unpack_from(payload)
    expected = atom_payload_size(K, n_b, d, n_c) + trailer
    if len(payload) != expected:
        raise ProtocolError(f"atom payload has {len(payload)} bytes, expected {expected}")
    off = _DIMS.size
    indices, features, labels = None, [], []
    for _ in range(K):
        idx = np.frombuffer(payload, "<u4", n_b, off)
        off += 4 * n_b
        if indices is None:
            indices = idx.astype(np.int64)
        elif not np.array_equal(idx, indices):
            raise ProtocolError("atoms carry different row indices")
        features.append(np.frombuffer(payload, "<f4", n_b * d, off).reshape(n_b, d).astype(float))
        off += 4 * n_b * d
        labels.append(np.frombuffer(payload, "<f4", n_b * n_c, off).reshape(n_b, n_c).astype(float))
        off += 4 * n_b * n_c
    return AtomRows(indices, features, labels)


def atom_batch(round_: int, rows: AtomRows) -> RoundMessage:
    return RoundMessage(MsgType.ATOM_BATCH, round_, encode_atom_rows(rows))


def atom_version(round_: int, rows: AtomRows, local_loss: float) -> RoundMessage:
    return RoundMessage(MsgType.ATOM_VERSION, round_, encode_atom_rows(rows) + _LOSS.pack(local_loss))


def parse_atom_version(msg: RoundMessage) -> tuple[AtomRows, float]:
    if msg.msg_type != MsgType.ATOM_VERSION:
        raise ProtocolError(f"expected AtomVersion, got {msg.msg_type.name}")
    rows = decode_atom_rows(msg.payload, trailer=_LOSS.size)
    (loss,) = _LOSS.unpack_from(msg.payload, len(msg.payload) - _LOSS.size)
    return rows, loss


def parse_atom_batch(msg: RoundMessage) -> AtomRows:
    if msg.msg_type != MsgType.ATOM_BATCH:
        raise ProtocolError(f"expected AtomBatch, got {msg.msg_type.name}")
    return decode_atom_rows(msg.payload)


def read_frame(read_exact) -> RoundMessage:
    """Read one frame with ``read_exact(n) -> bytes`` (raises on EOF)."""
    head = read_exact(HEADER_SIZE)
    msg_type, rnd, length = decode_header(head)
    return RoundMessage(msg_type, rnd, read_exact(length) if length else b"")
