"""Append-only on-disk forest: one content-addressed record per node plus a version manifest.

Layout under the store root::

    header      format_version / hash_algorithm lines
    manifest    one line per version: version root_hex leaf_count parent original_length
    nodes/<hex> binary node record named by the node digest
    lock        advisory writer lock
"""

from __future__ import annotations

import fcntl
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Union

from .crypto import DIGEST_SIZE, NONCE_SIZE, EncryptedBlock
from .errors import (
    FormatMismatch,
    InvalidBlock,
    NodeCorrupt,
    NodeMissing,
    StoreCorrupt,
    StoreIOError,
    StoreLocked,
    VersionGap,
)
from .forest import Forest, Internal, Leaf, Node, NodeId, VersionRoot
from .paths import level_sizes

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
HASH_ALGORITHM = "sha-256"

TAG_LEAF = 0
TAG_INTERNAL = 1

_LEAF_HEAD = struct.Struct(f">BI{NONCE_SIZE}sI")


def encode_node(node: Node) -> bytes:
    if isinstance(node, Leaf):
        b = node.block
        return _LEAF_HEAD.pack(TAG_LEAF, b.index, b.nonce, len(b.ciphertext)) + b.ciphertext
    if node.right is None:
        return bytes([TAG_INTERNAL]) + node.left + b"\x00"
    return bytes([TAG_INTERNAL]) + node.left + b"\x01" + node.right


def decode_node(data: bytes) -> Node:
    """Inverse of :func:`encode_node`; raises ``ValueError`` on any malformed record."""
    if not data:
        raise ValueError("empty record")
    tag = data[0]
    if tag == TAG_LEAF:
        if len(data) < _LEAF_HEAD.size:
            raise ValueError("truncated leaf header")
        _, index, nonce, length = _LEAF_HEAD.unpack_from(data)
        ciphertext = data[_LEAF_HEAD.size:]
        if len(ciphertext) != length:
            raise ValueError(f"leaf payload is {len(ciphertext)} bytes, header says {length}")
        try:
            return Leaf.of(EncryptedBlock(index, nonce, ciphertext))
        except InvalidBlock as exc:
            raise ValueError(str(exc)) from None
    if tag == TAG_INTERNAL:
        if len(data) < 1 + DIGEST_SIZE + 1:
            raise ValueError("truncated internal record")
        left = data[1:1 + DIGEST_SIZE]
        flag = data[1 + DIGEST_SIZE]
        rest = data[2 + DIGEST_SIZE:]
        if flag == 0 and not rest:
            return Internal.of(left, None)
        if flag == 1 and len(rest) == DIGEST_SIZE:
            return Internal.of(left, rest)
        raise ValueError("bad internal record tail")
    raise ValueError(f"unknown node tag {tag}")


@dataclass(frozen=True)
class VersionRecord:
    version: int
    root: NodeId
    leaf_count: int
    parent_version: Optional[int]
    original_length: int

    def encode(self) -> bytes:
        parent = "-" if self.parent_version is None else str(self.parent_version)
        return (
            f"{self.version} {self.root.hex()} {self.leaf_count} {parent} {self.original_length}\n"
        ).encode("ascii")

    @classmethod
    def decode(cls, line: bytes) -> "VersionRecord":
        fields = line.decode("ascii").split()
        if len(fields) != 5:
            raise ValueError("manifest record needs 5 fields")
        version, root, leaf_count, parent, length = fields
        root_b = bytes.fromhex(root)
        if len(root_b) != DIGEST_SIZE or root != root_b.hex():
            raise ValueError("bad root digest")
        rec = cls(int(version), root_b, int(leaf_count),
                  None if parent == "-" else int(parent), int(length))
        if rec.version < 0 or rec.leaf_count < 1 or rec.original_length < 1:
            raise ValueError("manifest record out of range")
        return rec

    def to_root(self) -> VersionRoot:
        return VersionRoot(self.version, self.root, self.leaf_count, self.parent_version)


@dataclass
class StoreReport:
    missing: set[NodeId] = field(default_factory=set)
    corrupt: set[NodeId] = field(default_factory=set)
    unreachable: set[NodeId] = field(default_factory=set)
    affected_versions: set[int] = field(default_factory=set)
    torn_tail: Optional[bytes] = None

    @property
    def ok(self) -> bool:
        return not (self.missing or self.corrupt or self.torn_tail)


class Store:
    """Handle on an opened store directory. Implements the forest's node-store protocol."""

    def __init__(self, root: Path, records: list[VersionRecord], torn_tail: Optional[bytes],
                 lock_fd: Optional[int]) -> None:
        self.root = root
        self.node_dir = root / "nodes"
        self.manifest_path = root / "manifest"
        self.records = records
        self.torn_tail = torn_tail
        self._lock_fd = lock_fd

    @property
    def readonly(self) -> bool:
        return self._lock_fd is None

    # node-store protocol

    def _node_path(self, node_id: NodeId) -> Path:
        return self.node_dir / node_id.hex()

    def get(self, node_id: NodeId) -> Node:
        try:
            data = self._node_path(node_id).read_bytes()
        except FileNotFoundError:
            raise NodeMissing(node_id.hex()) from None
        except OSError as exc:
            raise StoreIOError(f"reading node {node_id.hex()}: {exc}") from exc
        try:
            node = decode_node(data)
        except ValueError as exc:
            raise NodeCorrupt(f"{node_id.hex()}: {exc}") from None
        if node.digest != node_id:
            raise NodeCorrupt(f"{node_id.hex()}: content re-hashes to {node.digest.hex()}")
        return node

    def put(self, node: Node) -> NodeId:
        self._check_writable()
        path = self._node_path(node.digest)
        if path.exists():
            return node.digest
        tmp = path.with_name(path.name + ".tmp")
        try:
            with open(tmp, "wb") as fh:
                fh.write(encode_node(node))
            os.replace(tmp, path)
        except OSError as exc:
            raise StoreIOError(f"writing node {node.digest.hex()}: {exc}") from exc
        return node.digest

    def __contains__(self, node_id: object) -> bool:
        return isinstance(node_id, bytes) and self._node_path(node_id).exists()

    def __iter__(self) -> Iterator[NodeId]:
        for entry in os.scandir(self.node_dir):
            if len(entry.name) == 2 * DIGEST_SIZE:
                try:
                    yield bytes.fromhex(entry.name)
                except ValueError:
                    continue

    def __len__(self) -> int:
        return sum(1 for _ in self)

    # manifest

    def append_version(self, record: VersionRecord) -> None:
        self._check_writable()
        if record.version != len(self.records):
            raise VersionGap(f"expected version {len(self.records)}, got {record.version}")
        try:
            with open(self.manifest_path, "r+b") as fh:
                if self.torn_tail is not None:
                    fh.seek(0, os.SEEK_END)
                    fh.truncate(fh.tell() - len(self.torn_tail))
                    log.warning("dropped torn manifest tail (%d bytes)", len(self.torn_tail))
                fh.seek(0, os.SEEK_END)
                fh.write(record.encode())
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as exc:
            raise StoreIOError(f"appending manifest: {exc}") from exc
        self.torn_tail = None
        self.records.append(record)

    def version_roots(self) -> list[VersionRoot]:
        return [r.to_root() for r in self.records]

    def forest(self) -> Forest:
        """A forest view whose nodes live in this store."""
        return Forest(nodes=self, versions=self.version_roots())

    def commit(self, root: VersionRoot, original_length: int) -> VersionRecord:
        rec = VersionRecord(root.version, root.root, root.leaf_count, root.parent_version,
                            original_length)
        self.append_version(rec)
        return rec

    def disk_usage(self) -> int:
        total = sum(p.stat().st_size for p in (self.root / "header", self.manifest_path))
        with os.scandir(self.node_dir) as it:
            total += sum(e.stat().st_size for e in it)
        return total

    def _check_writable(self) -> None:
        if self._lock_fd is None:
            raise StoreIOError("store was opened read-only")

    def close(self) -> None:
        if self._lock_fd is not None:
            fcntl.flock(self._lock_fd, fcntl.LOCK_UN)
            os.close(self._lock_fd)
            self._lock_fd = None

    def __enter__(self) -> "Store":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _read_header(path: Path) -> None:
    try:
        lines = path.read_text("ascii").splitlines()
        fields = dict(line.split(" ", 1) for line in lines if line)
        fmt = int(fields["format_version"])
        algo = fields["hash_algorithm"]
    except (OSError, ValueError, KeyError, UnicodeDecodeError) as exc:
        raise StoreCorrupt(f"unreadable store header: {exc}") from None
    if fmt != FORMAT_VERSION or algo != HASH_ALGORITHM:
        raise FormatMismatch(f"store is format {fmt}/{algo}, expected {FORMAT_VERSION}/{HASH_ALGORITHM}")


def _read_manifest(path: Path) -> tuple[list[VersionRecord], Optional[bytes]]:
    data = path.read_bytes() if path.exists() else b""
    lines = data.split(b"\n")
    tail = lines.pop()  # bytes after the final newline; empty when the file ends cleanly
    records: list[VersionRecord] = []
    torn: Optional[bytes] = tail or None
    for i, line in enumerate(lines):
        try:
            rec = VersionRecord.decode(line)
            if rec.version != len(records):
                raise ValueError(f"record {rec.version} out of sequence")
        except ValueError as exc:
            if i == len(lines) - 1 and torn is None:
                # a damaged final line counts as a torn write
                torn = line + b"\n"
                break
            raise StoreCorrupt(f"manifest line {i + 1}: {exc}") from None
        records.append(rec)
    return records, torn


def open_store(path: Union[str, Path], readonly: bool = False) -> Store:
    root = Path(path)
    header = root / "header"
    try:
        root.mkdir(parents=True, exist_ok=True)
        if not header.exists():
            if any(root.iterdir()):
                raise StoreCorrupt(f"{root} is not empty but has no store header")
            if readonly:
                raise StoreCorrupt(f"{root} holds no store")
            (root / "nodes").mkdir()
            (root / "manifest").touch()
            tmp = root / "header.tmp"
            tmp.write_text(f"format_version {FORMAT_VERSION}\nhash_algorithm {HASH_ALGORITHM}\n")
            os.replace(tmp, header)
    except OSError as exc:
        raise StoreIOError(f"preparing {root}: {exc}") from exc
    _read_header(header)
    if not (root / "nodes").is_dir():
        raise StoreCorrupt("nodes directory missing")

    lock_fd = None
    if not readonly:
        lock_fd = os.open(root / "lock", os.O_RDWR | os.O_CREAT, 0o644)
        try:
            fcntl.flock(lock_fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            os.close(lock_fd)
            raise StoreLocked(f"{root} is held by another writer") from None

    records, torn = _read_manifest(root / "manifest")
    if torn is not None:
        log.warning("manifest has a torn tail of %d bytes; %d complete records recovered",
                    len(torn), len(records))
    return Store(root, records, torn, lock_fd)


def verify_store(store: Store) -> StoreReport:
    """Classify every node reachable from the manifest; a clean store yields an empty report.

    Besides re-hashing records, each node is checked against the position the
    tree shape assigns it: leaves must sit at level 0 and carry their position
    as block index, since the index field is not covered by the leaf digest.
    """
    report = StoreReport(torn_tail=store.torn_tail)
    nodes: dict[NodeId, Optional[Node]] = {}

    def load(nid: NodeId) -> Optional[Node]:
        if nid not in nodes:
            try:
                nodes[nid] = store.get(nid)
            except NodeMissing:
                nodes[nid] = None
                report.missing.add(nid)
            except NodeCorrupt:
                nodes[nid] = None
                report.corrupt.add(nid)
        return nodes[nid]

    damaged: dict[tuple[NodeId, int, int], bool] = {}

    def check(nid: NodeId, level: int, pos: int, sizes: list[int]) -> bool:
        """True when the subtree at (level, pos) rooted in ``nid`` holds any damage."""
        key = (nid, level, pos)
        if key in damaged:
            return damaged[key]
        if level > 0 and 2 * pos + 1 == sizes[level - 1]:
            # promoted: the same node one level down
            result = check(nid, level - 1, 2 * pos, sizes)
        else:
            node = load(nid)
            if node is None:
                result = True
            else:
                if level == 0:
                    misplaced = not (isinstance(node, Leaf) and node.block.index == pos)
                else:
                    misplaced = not isinstance(node, Internal) or node.right is None
                if misplaced:
                    report.corrupt.add(nid)
                    result = True
                elif level == 0:
                    result = False
                else:
                    # evaluate both sides so every damaged node gets classified
                    left = check(node.left, level - 1, 2 * pos, sizes)
                    right = check(node.right, level - 1, 2 * pos + 1, sizes)
                    result = left or right
        damaged[key] = result
        return result

    for rec in store.records:
        sizes = level_sizes(rec.leaf_count)
        if check(rec.root, len(sizes) - 1, 0, sizes):
            report.affected_versions.add(rec.version)
    reached = nodes.keys()
    report.unreachable = {nid for nid in store if nid not in reached}
    return report
