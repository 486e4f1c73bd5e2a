"""Length-prefixed manager/worker messages.

Frame: ``u32 length`` (little-endian, counts the type byte plus payload),
``u8 type``, payload.

=====  ==============  ====================================================
type   name            payload
=====  ==============  ====================================================
1      HELLO           u32 worker id
2      SAMPLES         u32 worker id, u32 sequence number, u64 model step,
                       u32 count, u32 state dim, then ``count`` records of
                       ``f32[dim] state, u8 action, f32 reward,
                       f32[dim] next_state, u8 terminal``
3      MODEL_REQUEST   empty
4      MODEL           snapshot bytes (see :mod:`dodge_rl.snapshot`)
5      ACK             u8 code
6      SHUTDOWN        empty
=====  ==============  ====================================================
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .replay import Batch

MAX_FRAME = 64 * 1024 * 1024

_LEN = struct.Struct("<I")
_SAMPLES_HEAD = struct.Struct("<IIQII")


class MsgType(IntEnum):
    HELLO = 1
    SAMPLES = 2
    MODEL_REQUEST = 3
    MODEL = 4
    ACK = 5
    SHUTDOWN = 6


class AckCode(IntEnum):
    OK = 0
    DUPLICATE = 1
    REJECTED = 2


class ProtocolError(ValueError):
    pass


class OversizeError(ProtocolError):
    pass


class TruncatedFrameError(ProtocolError):
    pass


class UnknownTypeError(ProtocolError):
    pass


class MalformedPayloadError(ProtocolError):
    pass


class ConnectionClosed(ConnectionError):
    """Peer closed the stream; any partially received frame is discarded."""


@dataclass(frozen=True)
class Hello:
    worker_id: int


@dataclass
class SampleBatchMsg:
    worker_id: int
    seq: int
    model_step: int
    batch: Batch

    @property
    def count(self) -> int:
        return len(self.batch)

    def __eq__(self, other):
        if not isinstance(other, SampleBatchMsg):
            return NotImplemented
        a, b = self.batch, other.batch
        return (
            (self.worker_id, self.seq, self.model_step) == (other.worker_id, other.seq, other.model_step)
            and np.array_equal(a.states, b.states)
            and np.array_equal(a.actions, b.actions)
            and np.array_equal(a.rewards, b.rewards)
            and np.array_equal(a.next_states, b.next_states)
            and np.array_equal(a.terminals, b.terminals)
        )


@dataclass(frozen=True)
class ModelRequest:
    pass


@dataclass(frozen=True)
class Model:
    snapshot: bytes


@dataclass(frozen=True)
class Ack:
    code: int = AckCode.OK


@dataclass(frozen=True)
class Shutdown:
    pass


Message = Hello | SampleBatchMsg | ModelRequest | Model | Ack | Shutdown


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("s", "<f4", (dim,)), ("a", "u1"), ("r", "<f4"),
                     ("s2", "<f4", (dim,)), ("t", "u1")])


def _pack_samples(msg: SampleBatchMsg) -> bytes:
    b = msg.batch
    n = len(b)
    dim = b.states.shape[1] if n else 0
    if b.next_states.shape != b.states.shape:
        raise ProtocolError("states and next_states disagree in shape")
    rec = np.zeros(n, dtype=_record_dtype(dim))
    rec["s"], rec["a"], rec["r"] = b.states, b.actions, b.rewards
    rec["s2"], rec["t"] = b.next_states, b.terminals
    head = _SAMPLES_HEAD.pack(msg.worker_id, msg.seq, msg.model_step, n, dim)
    return head + rec.tobytes()


def _unpack_samples(payload: bytes) -> SampleBatchMsg:
    if len(payload) < _SAMPLES_HEAD.size:
        raise MalformedPayloadError("SAMPLES payload shorter than its header")
    wid, seq, step, count, dim = _SAMPLES_HEAD.unpack_from(payload, 0)
    dt = _record_dtype(dim)
    body = payload[_SAMPLES_HEAD.size:]
    if len(body) != count * dt.itemsize:
        raise MalformedPayloadError(
            f"SAMPLES declares {count} records of {dt.itemsize} bytes, body has {len(body)}")
    rec = np.frombuffer(body, dtype=dt, count=count)
    batch = Batch(
        rec["s"].astype(np.float32).reshape(count, dim),
        rec["a"].astype(np.int64),
        rec["r"].astype(np.float32),
        rec["s2"].astype(np.float32).reshape(count, dim),
        rec["t"].astype(bool),
    )
    return SampleBatchMsg(wid, seq, step, batch)


def _payload(msg) -> tuple[MsgType, bytes]:
    if isinstance(msg, Hello):
        return MsgType.HELLO, struct.pack("<I", msg.worker_id)
    if isinstance(msg, SampleBatchMsg):
        return MsgType.SAMPLES, _pack_samples(msg)
    if isinstance(msg, ModelRequest):
        return MsgType.MODEL_REQUEST, b""
    if isinstance(msg, Model):
        return MsgType.MODEL, bytes(msg.snapshot)
    if isinstance(msg, Ack):
        return MsgType.ACK, struct.pack("<B", int(msg.code))
    if isinstance(msg, Shutdown):
        return MsgType.SHUTDOWN, b""
    raise TypeError(f"not a protocol message: {msg!r}")


def encode_message(msg) -> bytes:
    kind, payload = _payload(msg)
    length = 1 + len(payload)
    if length > MAX_FRAME:
        raise OversizeError(f"frame of {length} bytes exceeds {MAX_FRAME}")
    return _LEN.pack(length) + bytes([kind]) + payload


def _decode_body(kind: int, payload: bytes):
    try:
        kind = MsgType(kind)
    except ValueError:
        raise UnknownTypeError(f"unknown message type {kind}") from None
    fixed = {MsgType.HELLO: 4, MsgType.MODEL_REQUEST: 0, MsgType.ACK: 1, MsgType.SHUTDOWN: 0}
    if kind in fixed and len(payload) != fixed[kind]:
        raise MalformedPayloadError(f"{kind.name} payload must be {fixed[kind]} bytes")
    if kind is MsgType.HELLO:
        return Hello(struct.unpack("<I", payload)[0])
    if kind is MsgType.SAMPLES:
        return _unpack_samples(payload)
    if kind is MsgType.MODEL_REQUEST:
        return ModelRequest()
    if kind is MsgType.MODEL:
        return Model(bytes(payload))
    if kind is MsgType.ACK:
        return Ack(payload[0])
    return Shutdown()


def check_length(length: int) -> None:
    if length > MAX_FRAME:
        raise OversizeError(f"declared frame length {length} exceeds {MAX_FRAME}")
    if length < 1:
        raise MalformedPayloadError("frame length must cover the type byte")


def decode_message(frame: bytes):
    """Decode exactly one complete frame."""
    frame = bytes(frame)
    if len(frame) < _LEN.size:
        raise TruncatedFrameError("frame shorter than its length prefix")
    (length,) = _LEN.unpack_from(frame, 0)
    check_length(length)
    if len(frame) < _LEN.size + length:
        raise TruncatedFrameError(f"frame declares {length} bytes, {len(frame) - 4} present")
    if len(frame) > _LEN.size + length:
        raise MalformedPayloadError("trailing bytes after frame")
    return _decode_body(frame[4], frame[5:])


def _recv_exact(sock: socket.socket, n: int, started: bool) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 20))
        if not chunk:
            if started or chunks:
                raise ConnectionClosed("connection dropped mid-frame")
            raise ConnectionClosed("connection closed")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_message(sock: socket.socket):
    """Block until one whole message arrives on ``sock``."""
    (length,) = _LEN.unpack(_recv_exact(sock, 4, started=False))
    check_length(length)
    body = _recv_exact(sock, length, started=True)
    return _decode_body(body[0], body[1:])


def send_message(sock: socket.socket, msg) -> None:
    sock.sendall(encode_message(msg))
