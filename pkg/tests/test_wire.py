import json
import socket
import struct

import pytest
from hypothesis import given, settings, strategies as st

from emforest import wire
from emforest.audit import AuditResult, Challenge, ProofMessage, Verdict, VersionMetadata
from emforest.crypto import EncryptedBlock
from emforest.errors import ProtocolError
from emforest.paths import PathElement, Side
from emforest.service import FrameServer

digests = st.binary(min_size=32, max_size=32)
challenges = st.builds(Challenge, st.integers(0, 10**6), st.integers(0, 10**6))
elements = st.one_of(
    st.just(PathElement(Side.PROMOTED)),
    st.builds(PathElement, st.sampled_from([Side.LEFT, Side.RIGHT]), digests),
)


def through_json(obj):
    return json.loads(json.dumps(obj))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.binary(min_size=16, max_size=16), st.binary(min_size=1, max_size=4096))
def test_block_round_trip(index, nonce, ciphertext):
    block = EncryptedBlock(index, nonce, ciphertext)
    assert wire.block_from_wire(through_json(wire.block_to_wire(block))) == block


@settings(max_examples=100, deadline=None)
@given(challenges, digests, st.lists(elements, max_size=20))
def test_proof_round_trip(ch, leaf, path):
    proof = ProofMessage(ch, leaf, tuple(path))
    assert wire.proof_from_wire(through_json(wire.proof_to_wire(proof))) == proof


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), digests, st.integers(1, 10**6))
def test_metadata_round_trip(version, root, leaves):
    meta = VersionMetadata(version, root, leaves)
    msg = through_json(wire.metadata_to_wire(meta))
    assert msg["type"] == "register_metadata"
    assert wire.metadata_from_wire(msg) == meta


@settings(max_examples=50, deadline=None)
@given(challenges, st.sampled_from(list(Verdict)), st.one_of(st.none(), digests),
       st.one_of(st.none(), digests), st.text(max_size=40))
def test_result_round_trip(ch, verdict, rec, exp, reason):
    result = AuditResult(ch, verdict, rec, exp, reason)
    assert wire.result_from_wire(through_json(wire.result_to_wire(result))) == result


def test_frame_layout():
    frame = wire.encode_frame({"type": "x"})
    (length,) = struct.unpack(">I", frame[:4])
    assert length == len(frame) - 4
    assert json.loads(frame[4:]) == {"type": "x"}


def test_frame_cap(monkeypatch):
    monkeypatch.setattr(wire, "MAX_FRAME", 10)
    with pytest.raises(ProtocolError):
        wire.encode_frame({"type": "longer than ten bytes"})


@pytest.mark.parametrize("msg", [
    {"challenge": {"version": 0}, "leaf_digest": "00" * 32, "path": []},
    {"challenge": {"version": 0, "block_index": 0}, "leaf_digest": "00" * 31, "path": []},
    {"challenge": {"version": 0, "block_index": 0}, "leaf_digest": "00" * 32, "path": [{"side": "up"}]},
    {"challenge": {"version": True, "block_index": 0}, "leaf_digest": "00" * 32, "path": []},
])
def test_malformed_proofs_rejected(msg):
    with pytest.raises(ProtocolError):
        wire.proof_from_wire(msg)


def test_decode_payload_rejects_non_objects():
    for raw in (b"\xff", b"[1,2]", b'{"no_type": 1}', b"not json"):
        with pytest.raises(ProtocolError):
            wire.decode_payload(raw)


# --- connection behaviour ---------------------------------------------------------

@pytest.fixture
def echo_server():
    server = FrameServer("127.0.0.1:0", lambda m: {"type": "echo", "got": m}).start()
    yield server
    server.stop()


def raw_exchange(sock, payload: bytes):
    sock.sendall(struct.pack(">I", len(payload)) + payload)
    return wire.recv_message(sock)


def test_connection_survives_one_malformed_frame(echo_server):
    with socket.create_connection(wire_addr(echo_server)) as sock:
        assert raw_exchange(sock, b"not json")["code"] == "ProtocolError"
        assert raw_exchange(sock, b'{"type": "ping"}') == {"type": "echo", "got": {"type": "ping"}}


def test_repeated_malformed_frames_close_connection(echo_server):
    with socket.create_connection(wire_addr(echo_server)) as sock:
        assert raw_exchange(sock, b"bad")["type"] == "error"
        assert raw_exchange(sock, b"bad again")["type"] == "error"
        assert wire.recv_message(sock) is None


def test_oversized_frame_announcement(echo_server):
    with socket.create_connection(wire_addr(echo_server)) as sock:
        sock.sendall(struct.pack(">I", wire.MAX_FRAME + 1))
        reply = wire.recv_message(sock)
        assert reply["type"] == "error" and "frame" in reply["message"]
        assert wire.recv_message(sock) is None


def wire_addr(server):
    host, port = server.server_address[:2]
    return host, port
