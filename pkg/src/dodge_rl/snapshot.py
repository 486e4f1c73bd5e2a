"""Bit-exact model snapshots (``.drlm`` files).

Layout, all integers little-endian::

    "DRLM"            4 bytes magic
    u32               format version (1)
    u8                agent kind (0 dqn, 1 double_dqn, 2 dueling_dqn, 3 a3c)
    u32               layer count
    per layer         u32 in, u32 out, u8 activation
    u64               training step
    f32[...]          parameters, layer-major: weights row-major (out x in), then biases
    u32               CRC-32 of every preceding byte

The activation byte holds the activation in its low nibble (0 identity,
1 relu) and the layer's stream tag (0 trunk, 1 or 2) in its high nibble.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .agents import AgentKind
from .nncore import Activation, LayerSpec, Network, NetworkError

MAGIC = b"DRLM"
VERSION = 1

KIND_CODES = {
    AgentKind.DQN: 0,
    AgentKind.DOUBLE_DQN: 1,
    AgentKind.DUELING_DQN: 2,
    AgentKind.A3C: 3,
}
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}
_ACT_CODES = {Activation.IDENTITY: 0, Activation.RELU: 1}
_CODE_ACTS = {v: k for k, v in _ACT_CODES.items()}

_HEAD = struct.Struct("<4sIBI")
_LAYER = struct.Struct("<IIB")
_STEP = struct.Struct("<Q")
_CRC = struct.Struct("<I")


class SnapshotError(ValueError):
    pass


class MagicError(SnapshotError):
    pass


class VersionError(SnapshotError):
    pass


class ChecksumError(SnapshotError):
    pass


class TruncationError(SnapshotError):
    pass


class FormatError(SnapshotError):
    pass


def serialize_model(net: Network, kind: AgentKind, step: int) -> bytes:
    kind = AgentKind(kind)
    if net.head is not kind.head:
        raise ValueError(f"{kind.value} snapshots need a {kind.head.value} head")
    parts = [_HEAD.pack(MAGIC, VERSION, KIND_CODES[kind], len(net.specs))]
    for spec in net.specs:
        code = _ACT_CODES[spec.activation] | (spec.stream << 4)
        parts.append(_LAYER.pack(spec.input_width, spec.output_width, code))
    parts.append(_STEP.pack(int(step)))
    for w, b in zip(net.weights, net.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


def deserialize_model(data: bytes) -> tuple[Network, AgentKind, int]:
    data = bytes(data)
    if len(data) < _HEAD.size:
        raise TruncationError(f"snapshot is {len(data)} bytes, shorter than its header")
    magic, version, kind_code, n_layers = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise MagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionError(f"unsupported snapshot version {version}")
    if kind_code not in CODE_KINDS:
        raise FormatError(f"unknown agent kind code {kind_code}")
    off = _HEAD.size
    table_end = off + n_layers * _LAYER.size + _STEP.size
    if len(data) < table_end:
        raise TruncationError("snapshot ends inside the layer table")
    specs = []
    for _ in range(n_layers):
        n_in, n_out, code = _LAYER.unpack_from(data, off)
        off += _LAYER.size
        if (code & 0x0F) not in _CODE_ACTS:
            raise FormatError(f"unknown activation code {code & 0x0F}")
        specs.append((n_in, n_out, _CODE_ACTS[code & 0x0F], code >> 4))
    (step,) = _STEP.unpack_from(data, off)
    off += _STEP.size
    n_params = sum(i * o + o for i, o, _, _ in specs)
    end = off + 4 * n_params
    if len(data) < end + _CRC.size:
        raise TruncationError(f"snapshot needs {end + _CRC.size} bytes, got {len(data)}")
    if len(data) > end + _CRC.size:
        raise FormatError("trailing bytes after checksum")
    (crc,) = _CRC.unpack_from(data, end)
    if zlib.crc32(data[:end]) & 0xFFFFFFFF != crc:
        raise ChecksumError("snapshot checksum mismatch")

    kind = CODE_KINDS[kind_code]
    weights, biases = [], []
    for n_in, n_out, _, _ in specs:
        w = np.frombuffer(data, dtype="<f4", count=n_in * n_out, offset=off)
        off += 4 * n_in * n_out
        b = np.frombuffer(data, dtype="<f4", count=n_out, offset=off)
        off += 4 * n_out
        weights.append(w.reshape(n_out, n_in).astype(np.float32))
        biases.append(b.astype(np.float32))
    try:
        layer_specs = [LayerSpec(i, o, a, s) for i, o, a, s in specs]
        net = Network(layer_specs, kind.head, weights, biases)
    except (NetworkError, ValueError) as exc:
        raise FormatError(f"invalid layer table: {exc}") from exc
    return net, kind, int(step)


def snapshot_path(run_dir, step: int) -> Path:
    return Path(run_dir) / f"model_{int(step)}.drlm"


def save_snapshot(path, net: Network, kind: AgentKind, step: int) -> Path:
    path = Path(path)
    tmp = path.with_suffix(".tmp")
    tmp.write_bytes(serialize_model(net, kind, step))
    tmp.replace(path)
    return path


def load_snapshot(path) -> tuple[Network, AgentKind, int]:
    return deserialize_model(Path(path).read_bytes())
