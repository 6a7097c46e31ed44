"""Storage server, auditor (TPA) service and client over framed JSON on TCP.

Each role is a plain object with a ``handle(message) -> response`` method; the
socket layer around it is shared. One request/response is in flight per
connection.
"""

from __future__ import annotations

import logging
import os
import random
import socket
import socketserver
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import wire
from .audit import (
    AuditResult,
    Challenge,
    Registry,
    VersionMetadata,
    all_challenges,
    error_result,
    make_challenge,
    prove,
    verify,
)
from .crypto import BLOCK_SIZE, FileKey, RandomSource, chunk_file, decrypt_block, encrypt_block, PlainBlock
from .errors import (
    AlreadyInitialized,
    EndpointUnreachable,
    ForestError,
    InvalidBlock,
    ProtocolError,
    RemoteError,
)
from .forest import build_initial_tree, retrieve_version, update_block
from .store import Store

log = logging.getLogger(__name__)

DEFAULT_LISTEN = "127.0.0.1:7400"
DEFAULT_TPA_LISTEN = "127.0.0.1:7401"
TIMEOUT = 60.0

Handler = Callable[[dict], dict]


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host.strip("[]") or "127.0.0.1", int(port)


def format_endpoint(address: tuple) -> str:
    return f"{address[0]}:{address[1]}"


# --- socket plumbing -------------------------------------------------------

class _ConnectionHandler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        sock: socket.socket = self.request
        handler: Handler = self.server.message_handler  # type: ignore[attr-defined]
        strikes = 0
        while True:
            try:
                payload = wire.recv_payload(sock)
            except ProtocolError as exc:
                # framing is lost; report and hang up
                self._reply(sock, wire.error_from(exc))
                return
            except OSError:
                return
            if payload is None:
                return
            try:
                message = wire.decode_payload(payload)
            except ProtocolError as exc:
                strikes += 1
                self._reply(sock, wire.error_from(exc))
                if strikes >= 2:
                    return
                continue
            strikes = 0
            if not self._reply(sock, handler(message)):
                return

    @staticmethod
    def _reply(sock: socket.socket, message: dict) -> bool:
        try:
            wire.send_message(sock, message)
            return True
        except ProtocolError as exc:
            return _ConnectionHandler._reply(sock, wire.error_from(exc))
        except OSError:
            return False


class FrameServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, endpoint: str, message_handler: Handler) -> None:
        self.message_handler = message_handler
        super().__init__(parse_endpoint(endpoint), _ConnectionHandler)

    @property
    def endpoint(self) -> str:
        return format_endpoint(self.server_address)

    def start(self) -> "FrameServer":
        """Serve on a daemon thread; pair with ``stop``."""
        threading.Thread(target=self.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True).start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


def _dispatch(role: str, table: dict[str, Callable[[dict], dict]], message: dict) -> dict:
    kind = message.get("type")
    fn = table.get(kind)
    if fn is None:
        return wire.error_message("ProtocolError", f"{role} does not handle message type {kind!r}")
    try:
        return fn(message)
    except ForestError as exc:
        return wire.error_from(exc)
    except Exception as exc:  # keep the connection alive; the peer gets a reason
        log.exception("%s failed on %s", role, kind)
        return wire.error_message("InternalError", str(exc))


class Connection:
    """Client side of one framed connection."""

    def __init__(self, endpoint: str, timeout: float = TIMEOUT) -> None:
        self.endpoint = endpoint
        try:
            self.sock = socket.create_connection(parse_endpoint(endpoint), timeout=timeout)
        except OSError as exc:
            raise EndpointUnreachable(f"{endpoint}: {exc}") from exc

    def request(self, message: dict) -> dict:
        try:
            wire.send_message(self.sock, message)
            reply = wire.recv_message(self.sock)
        except OSError as exc:
            raise EndpointUnreachable(f"{self.endpoint}: {exc}") from exc
        if reply is None:
            raise EndpointUnreachable(f"{self.endpoint} closed the connection")
        if reply["type"] == "error":
            raise RemoteError(str(reply.get("code")), str(reply.get("message", "")))
        return reply

    def close(self) -> None:
        self.sock.close()

    def __enter__(self) -> "Connection":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def request(endpoint: str, message: dict) -> dict:
    with Connection(endpoint) as conn:
        return conn.request(message)


# --- storage server --------------------------------------------------------

def _version_reply(root, original_length: int) -> dict:
    return {
        "type": "version",
        "version": root.version,
        "root": root.root.hex(),
        "leaf_count": root.leaf_count,
        "parent_version": root.parent_version,
        "original_length": original_length,
    }


class StorageServer:
    """Owns one store (one file). Mutations are serialized; reads run concurrently."""

    def __init__(self, store: Store) -> None:
        self.store = store
        self.forest = store.forest()
        self._write_lock = threading.Lock()
        self._table = {
            "upload_file": self._upload,
            "update_block": self._update,
            "retrieve_version": self._retrieve,
            "get_proof": self._proof,
        }

    def handle(self, message: dict) -> dict:
        return _dispatch("server", self._table, message)

    def _upload(self, message: dict) -> dict:
        items = wire.field(message, "blocks", list)
        blocks = [wire.block_from_wire(b) for b in items]
        for b in blocks[:-1]:
            if len(b.ciphertext) != BLOCK_SIZE:
                raise InvalidBlock(f"block {b.index} is short but not last")
        with self._write_lock:
            if self.forest.versions:
                raise AlreadyInitialized("this store already holds a file")
            root = build_initial_tree(self.forest, blocks)
            rec = self.store.commit(root, sum(len(b.ciphertext) for b in blocks))
        return _version_reply(root, rec.original_length)

    def _update(self, message: dict) -> dict:
        index = wire.field(message, "index")
        block = wire.block_from_wire(message.get("block"))
        base = message.get("base_version")
        with self._write_lock:
            base_root = self.forest.latest if base is None else self.forest.version(base)
            last = base_root.leaf_count - 1
            if index < last and len(block.ciphertext) != BLOCK_SIZE:
                raise InvalidBlock(f"block {index} must be exactly {BLOCK_SIZE} bytes")
            root = update_block(self.forest, base_root, index, block)
            length = self.store.records[base_root.version].original_length
            if index == last:
                length = last * BLOCK_SIZE + len(block.ciphertext)
            rec = self.store.commit(root, length)
        return _version_reply(root, rec.original_length)

    def _retrieve(self, message: dict) -> dict:
        version = wire.field(message, "version")
        blocks = retrieve_version(self.forest, version)
        return {
            "type": "blocks",
            "version": version,
            "original_length": self.store.records[version].original_length,
            "blocks": [wire.block_to_wire(b) for b in blocks],
        }

    def _proof(self, message: dict) -> dict:
        challenge = wire.challenge_from_wire(message.get("challenge"))
        reply = wire.proof_to_wire(prove(self.forest, challenge))
        if "nonce" in message:  # reserved freshness field, echoed untouched
            reply["nonce"] = message["nonce"]
        return reply


def server_serve(store: Store, endpoint: Optional[str] = None) -> FrameServer:
    """Bind a storage server; caller runs ``serve_forever`` or ``start``."""
    endpoint = endpoint or os.environ.get("MF_LISTEN") or DEFAULT_LISTEN
    return FrameServer(endpoint, StorageServer(store).handle)


# --- auditor ----------------------------------------------------------------

def tpa_audit_round(
    registry: Registry,
    server: str,
    count: int = 0,
    rng: Optional[random.Random] = None,
    challenges: Optional[Sequence[Challenge]] = None,
) -> list[AuditResult]:
    """Challenge ``server`` and verify each proof locally.

    ``challenges`` overrides random sampling (``count`` draws from ``rng``).
    Any server-side failure becomes a Fail result carrying the reason.
    """
    if challenges is None:
        rng = rng or random.Random()
        challenges = [make_challenge(registry, rng) for _ in range(count)]
    results: list[AuditResult] = []
    conn: Optional[Connection] = None
    try:
        for ch in challenges:
            try:
                if conn is None:
                    conn = Connection(server)
                reply = conn.request({"type": "get_proof", "challenge": wire.challenge_to_wire(ch)})
                proof = wire.proof_from_wire(reply)
                if proof.challenge != ch:
                    results.append(error_result(registry, ch, "proof answers a different challenge"))
                    continue
                results.append(verify(registry, proof))
            except EndpointUnreachable as exc:
                if conn is not None:
                    conn.close()
                    conn = None
                results.append(error_result(registry, ch, f"{exc.code}: {exc}"))
            except ForestError as exc:
                results.append(error_result(registry, ch, f"{exc.code}: {exc}"))
    finally:
        if conn is not None:
            conn.close()
    return results


class Auditor:
    """TPA service state: the metadata registry and nothing from the forest."""

    def __init__(self, registry: Optional[Registry] = None, seed: Optional[int] = None) -> None:
        self.registry = registry if registry is not None else Registry()
        self.rng = random.Random(seed)
        self._rng_lock = threading.Lock()
        self._table = {
            "register_metadata": self._register,
            "run_audit": self._audit,
        }

    def handle(self, message: dict) -> dict:
        return _dispatch("tpa", self._table, message)

    def _register(self, message: dict) -> dict:
        meta = wire.metadata_from_wire(message)
        self.registry.register(meta)
        return {"type": "ack", "version": meta.version}

    def _audit(self, message: dict) -> dict:
        server = wire.field(message, "server", str)
        if message.get("exhaustive"):
            challenges = all_challenges(self.registry)
        else:
            count = wire.field(message, "count")
            seed = message.get("seed")
            with self._rng_lock:
                rng = random.Random(seed) if isinstance(seed, int) else random.Random(self.rng.random())
            challenges = [make_challenge(self.registry, rng) for _ in range(count)]
        results = tpa_audit_round(self.registry, server, challenges=challenges)
        passed = sum(r.passed for r in results)
        return {
            "type": "challenge_result",
            "passed": passed,
            "failed": len(results) - passed,
            "results": [wire.result_to_wire(r) for r in results],
        }


def tpa_serve(endpoint: Optional[str] = None, registry: Optional[Registry] = None) -> FrameServer:
    return FrameServer(endpoint or DEFAULT_TPA_LISTEN, Auditor(registry).handle)


# --- client -----------------------------------------------------------------

@dataclass(frozen=True)
class VersionSummary:
    version: int
    root: bytes
    leaf_count: int
    parent_version: Optional[int]
    original_length: int
    registered: bool
    registration_error: str = ""


def _register(tpa: str, reply: dict) -> tuple[bool, str]:
    meta = VersionMetadata(reply["version"], bytes.fromhex(reply["root"]), reply["leaf_count"])
    try:
        request(tpa, wire.metadata_to_wire(meta))
    except ForestError as exc:
        log.warning("version %d stored but not registered: %s", meta.version, exc)
        return False, f"{exc.code}: {exc}"
    return True, ""


def _summary(reply: dict, registered: bool, error: str) -> VersionSummary:
    return VersionSummary(reply["version"], bytes.fromhex(reply["root"]), reply["leaf_count"],
                          reply.get("parent_version"), reply["original_length"], registered, error)


def client_upload_bytes(content: bytes, key: FileKey, server: str, tpa: str,
                        rng: RandomSource = os.urandom) -> VersionSummary:
    blocks = [encrypt_block(b, key, rng) for b in chunk_file(content)]
    reply = request(server, {"type": "upload_file",
                             "blocks": [wire.block_to_wire(b) for b in blocks]})
    return _summary(reply, *_register(tpa, reply))


def client_upload(path: Path, key: FileKey, server: str, tpa: str,
                  rng: RandomSource = os.urandom) -> VersionSummary:
    return client_upload_bytes(Path(path).read_bytes(), key, server, tpa, rng)


def client_update(index: int, data: bytes, key: FileKey, server: str, tpa: str,
                  base_version: Optional[int] = None,
                  rng: RandomSource = os.urandom) -> VersionSummary:
    """Replace one block. ``data`` must be a full 16 KiB unless it is the last block."""
    block = encrypt_block(PlainBlock(index, data, len(data) < BLOCK_SIZE), key, rng)
    message = {"type": "update_block", "index": index, "block": wire.block_to_wire(block)}
    if base_version is not None:
        message["base_version"] = base_version
    reply = request(server, message)
    return _summary(reply, *_register(tpa, reply))


def client_retrieve(version: int, key: FileKey, server: str) -> bytes:
    reply = request(server, {"type": "retrieve_version", "version": version})
    blocks = [wire.block_from_wire(b) for b in reply["blocks"]]
    content = b"".join(decrypt_block(b, key).data for b in blocks)
    if len(content) != reply["original_length"]:
        raise ProtocolError(f"retrieved {len(content)} bytes, manifest says {reply['original_length']}")
    return content


def client_audit(tpa: str, server: str, count: int = 0, exhaustive: bool = False,
                 seed: Optional[int] = None) -> list[AuditResult]:
    message = {"type": "run_audit", "server": server, "count": count, "exhaustive": exhaustive}
    if seed is not None:
        message["seed"] = seed
    reply = request(tpa, message)
    return [wire.result_from_wire(r) for r in reply["results"]]
