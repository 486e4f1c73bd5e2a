"""
Bytes on the wire
=================

Workers and the manager talk in length-prefixed frames, and models travel
as checksummed snapshots.  Here is what both look like.
"""

from dodge_rl.agents import AgentKind, build_network
from dodge_rl.protocol import Ack, AckCode, Hello, decode_message, encode_message
from dodge_rl.snapshot import ChecksumError, deserialize_model, serialize_model

# u32 payload length, u8 type, payload
print("HELLO(7):", encode_message(Hello(7)).hex(" "))
print("ACK(ok): ", encode_message(Ack(AckCode.OK)).hex(" "))
print("decoded: ", decode_message(encode_message(Hello(7))))

net = build_network(AgentKind.DQN, 4, 5, seed=0, hidden=(3,))
blob = serialize_model(net, AgentKind.DQN, step=42)
print(f"snapshot of a 4-3-5 net: {len(blob)} bytes, header {blob[:13].hex(' ')}")
back, kind, step = deserialize_model(blob)
print("round trip:", kind.value, step, back.equal(net))

damaged = bytearray(blob)
damaged[-8] ^= 1
try:
    deserialize_model(bytes(damaged))
except ChecksumError as err:
    print("one flipped bit:", err)
