"""Length-prefixed JSON framing and the message codecs for every wire type.

A frame is a 4-byte big-endian payload length followed by one UTF-8 JSON
object with a ``type`` field. Digests and nonces travel as lowercase hex,
ciphertext as base64.
"""

from __future__ import annotations

import base64
import json
import socket
import struct
from typing import Any, Optional

from .audit import AuditResult, Challenge, ProofMessage, Verdict, VersionMetadata
from .crypto import DIGEST_SIZE, EncryptedBlock
from .errors import ForestError, ProtocolError
from .paths import PathElement, Side

HEADER = struct.Struct(">I")
MAX_FRAME = 64 * 1024 * 1024

REQUEST_TYPES = frozenset({
    "upload_file", "update_block", "retrieve_version", "get_proof",
    "register_metadata", "run_audit",
})


def encode_frame(message: dict) -> bytes:
    payload = json.dumps(message, separators=(",", ":")).encode("utf-8")
    if len(payload) > MAX_FRAME:
        raise ProtocolError(f"frame of {len(payload)} bytes exceeds the {MAX_FRAME}-byte cap")
    return HEADER.pack(len(payload)) + payload


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 20))
        if not chunk:
            if buf:
                raise ProtocolError("connection closed mid-frame")
            return None
        buf += chunk
    return bytes(buf)


def send_message(sock: socket.socket, message: dict) -> None:
    sock.sendall(encode_frame(message))


def recv_payload(sock: socket.socket) -> Optional[bytes]:
    """Read one frame's payload; ``None`` on clean EOF before a header."""
    head = _recv_exact(sock, HEADER.size)
    if head is None:
        return None
    (length,) = HEADER.unpack(head)
    if length > MAX_FRAME:
        raise ProtocolError(f"peer announced a {length}-byte frame")
    payload = _recv_exact(sock, length) if length else b""
    if payload is None:
        raise ProtocolError("connection closed mid-frame")
    return payload


def decode_payload(payload: bytes) -> dict:
    try:
        message = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"payload is not JSON: {exc}") from None
    if not isinstance(message, dict) or not isinstance(message.get("type"), str):
        raise ProtocolError("payload must be an object with a string 'type'")
    return message


def recv_message(sock: socket.socket) -> Optional[dict]:
    payload = recv_payload(sock)
    return None if payload is None else decode_payload(payload)


def error_message(code: str, message: str = "") -> dict:
    return {"type": "error", "code": code, "message": message}


def error_from(exc: ForestError) -> dict:
    return error_message(exc.code, str(exc))


# field codecs

def hex_digest(value: Any) -> bytes:
    try:
        raw = bytes.fromhex(value)
    except (TypeError, ValueError):
        raise ProtocolError(f"not a hex digest: {value!r}") from None
    if len(raw) != DIGEST_SIZE:
        raise ProtocolError("digest must be 32 bytes")
    return raw


def field(message: dict, name: str, kind: type = int) -> Any:
    value = message.get(name)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise ProtocolError(f"field {name!r} missing or not {kind.__name__}")
    return value


def block_to_wire(block: EncryptedBlock) -> dict:
    return {
        "index": block.index,
        "nonce": block.nonce.hex(),
        "ciphertext": base64.b64encode(block.ciphertext).decode("ascii"),
    }


def block_from_wire(obj: Any) -> EncryptedBlock:
    if not isinstance(obj, dict):
        raise ProtocolError("block must be an object")
    try:
        return EncryptedBlock(
            field(obj, "index"),
            bytes.fromhex(field(obj, "nonce", str)),
            base64.b64decode(field(obj, "ciphertext", str), validate=True),
        )
    except ProtocolError:
        raise
    except (ValueError, ForestError) as exc:
        raise ProtocolError(f"bad block: {exc}") from None


def challenge_to_wire(ch: Challenge) -> dict:
    return {"version": ch.version, "block_index": ch.block_index}


def challenge_from_wire(obj: Any) -> Challenge:
    if not isinstance(obj, dict):
        raise ProtocolError("challenge must be an object")
    return Challenge(field(obj, "version"), field(obj, "block_index"))


def proof_to_wire(proof: ProofMessage) -> dict:
    return {
        "type": "proof",
        "challenge": challenge_to_wire(proof.challenge),
        "leaf_digest": proof.leaf_digest.hex(),
        "path": [
            {"side": e.side.value, "digest": None if e.digest is None else e.digest.hex()}
            for e in proof.path
        ],
    }


def proof_from_wire(message: dict) -> ProofMessage:
    path = message.get("path")
    if not isinstance(path, list):
        raise ProtocolError("proof path must be a list")
    elements = []
    for item in path:
        if not isinstance(item, dict):
            raise ProtocolError("path element must be an object")
        try:
            side = Side(item.get("side"))
        except ValueError:
            raise ProtocolError(f"unknown side marker {item.get('side')!r}") from None
        digest = item.get("digest")
        elements.append(PathElement(side, None if digest is None else hex_digest(digest)))
    return ProofMessage(
        challenge_from_wire(message.get("challenge")),
        hex_digest(message.get("leaf_digest")),
        tuple(elements),
    )


def metadata_to_wire(meta: VersionMetadata) -> dict:
    return {
        "type": "register_metadata",
        "version": meta.version,
        "root": meta.root_digest.hex(),
        "leaf_count": meta.leaf_count,
    }


def metadata_from_wire(message: dict) -> VersionMetadata:
    # Per-block hashes ("block_hashes") are accepted and ignored; roots suffice.
    return VersionMetadata(field(message, "version"), hex_digest(message.get("root")),
                           field(message, "leaf_count"))


def result_to_wire(result: AuditResult) -> dict:
    return {
        "challenge": challenge_to_wire(result.challenge),
        "verdict": result.verdict.value,
        "reconstructed_root": None if result.reconstructed_root is None else result.reconstructed_root.hex(),
        "expected_root": None if result.expected_root is None else result.expected_root.hex(),
        "reason": result.reason,
    }


def result_from_wire(obj: Any) -> AuditResult:
    if not isinstance(obj, dict):
        raise ProtocolError("result must be an object")
    try:
        verdict = Verdict(obj.get("verdict"))
    except ValueError:
        raise ProtocolError(f"unknown verdict {obj.get('verdict')!r}") from None
    rec, exp = obj.get("reconstructed_root"), obj.get("expected_root")
    return AuditResult(
        challenge_from_wire(obj.get("challenge")),
        verdict,
        None if rec is None else hex_digest(rec),
        None if exp is None else hex_digest(exp),
        obj.get("reason") or "",
    )
