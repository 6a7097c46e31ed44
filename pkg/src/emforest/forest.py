"""The entangled Merkle forest: immutable content-addressed nodes, one root per version.

Versions share every subtree an update did not touch. An update copies only the
root-to-leaf path of the changed block, so the forest grows by at most
``ceil(log2 N) + 1`` nodes per update.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Protocol, Sequence, Union

from .crypto import Digest, EncryptedBlock, hash_internal, hash_leaf
from .errors import (
    AlreadyInitialized,
    BlockIndexOutOfRange,
    EmptyFile,
    InvalidBlock,
    NodeCorrupt,
    NodeMissing,
    VersionNotFound,
)
from .paths import PathElement, Side, path_shape

NodeId = Digest


@dataclass(frozen=True)
class Leaf:
    block: EncryptedBlock
    digest: Digest

    @classmethod
    def of(cls, block: EncryptedBlock) -> "Leaf":
        return cls(block, hash_leaf(block))


@dataclass(frozen=True)
class Internal:
    left: NodeId
    right: Optional[NodeId]
    digest: Digest

    @classmethod
    def of(cls, left: NodeId, right: Optional[NodeId]) -> "Internal":
        # A lone child passes its digest through unchanged.
        return cls(left, right, hash_internal(left, right) if right is not None else left)


Node = Union[Leaf, Internal]


class NodeStore(Protocol):
    def get(self, node_id: NodeId) -> Node: ...
    def put(self, node: Node) -> NodeId: ...
    def __contains__(self, node_id: object) -> bool: ...
    def __len__(self) -> int: ...
    def __iter__(self) -> Iterator[NodeId]: ...


class MemoryNodes:
    """Dict-backed node store."""

    def __init__(self) -> None:
        self._nodes: dict[NodeId, Node] = {}

    def get(self, node_id: NodeId) -> Node:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise NodeMissing(node_id.hex()) from None

    def put(self, node: Node) -> NodeId:
        self._nodes.setdefault(node.digest, node)
        return node.digest

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def __iter__(self) -> Iterator[NodeId]:
        return iter(self._nodes)


@dataclass(frozen=True)
class VersionRoot:
    version: int
    root: NodeId
    leaf_count: int
    parent_version: Optional[int] = None


@dataclass
class Forest:
    nodes: NodeStore = field(default_factory=MemoryNodes)
    versions: list[VersionRoot] = field(default_factory=list)
    # nodes actually written (excludes content-addressed hits)
    inserted: int = 0

    def insert(self, node: Node) -> NodeId:
        if node.digest not in self.nodes:
            self.nodes.put(node)
            self.inserted += 1
        return node.digest

    def version(self, version: Union[int, VersionRoot]) -> VersionRoot:
        v = version.version if isinstance(version, VersionRoot) else version
        if not isinstance(v, int) or not 0 <= v < len(self.versions):
            raise VersionNotFound(f"version {v} does not exist")
        return self.versions[v]

    @property
    def latest(self) -> VersionRoot:
        if not self.versions:
            raise VersionNotFound("forest has no versions")
        return self.versions[-1]


def build_initial_tree(forest: Forest, blocks: Sequence[EncryptedBlock]) -> VersionRoot:
    if not blocks:
        raise EmptyFile("no blocks to build a tree from")
    if forest.versions:
        raise AlreadyInitialized("forest already holds version 0")
    for i, block in enumerate(blocks):
        if block.index != i:
            raise InvalidBlock(f"expected block index {i}, got {block.index}")

    level = [forest.insert(Leaf.of(b)) for b in blocks]
    while len(level) > 1:
        paired = [
            forest.insert(Internal.of(level[i], level[i + 1]))
            for i in range(0, len(level) - 1, 2)
        ]
        if len(level) % 2:
            paired.append(level[-1])
        level = paired

    root = VersionRoot(0, level[0], len(blocks), None)
    forest.versions.append(root)
    return root


def locate(forest: Forest, base: VersionRoot, index: int) -> tuple[Leaf, list[PathElement]]:
    """Descend from ``base`` to leaf ``index``; return the leaf and its sibling path (leaf-first)."""
    if not 0 <= index < base.leaf_count:
        raise BlockIndexOutOfRange(f"block index {index} not in [0, {base.leaf_count})")
    shape = path_shape(base.leaf_count, index)
    node = forest.nodes.get(base.root)
    path: list[PathElement] = []
    for side in reversed(shape):
        if side is Side.PROMOTED:
            path.append(PathElement(Side.PROMOTED))
            continue
        if not isinstance(node, Internal) or node.right is None:
            raise NodeCorrupt(f"node {node.digest.hex()} does not match the tree shape")
        if side is Side.LEFT:
            path.append(PathElement(Side.LEFT, node.left))
            node = forest.nodes.get(node.right)
        else:
            path.append(PathElement(Side.RIGHT, node.right))
            node = forest.nodes.get(node.left)
    if not isinstance(node, Leaf):
        raise NodeCorrupt(f"node {node.digest.hex()} should be a leaf")
    path.reverse()
    return node, path


def update_block(
    forest: Forest, base: Union[int, VersionRoot], index: int, block: EncryptedBlock
) -> VersionRoot:
    """Path-copying update: new leaf plus a fresh node per non-promoted level above it."""
    base = forest.version(base)
    if block.index != index:
        raise InvalidBlock(f"block carries index {block.index}, update targets {index}")
    _, path = locate(forest, base, index)

    acc = forest.insert(Leaf.of(block))
    for element in path:
        if element.side is Side.LEFT:
            acc = forest.insert(Internal.of(element.digest, acc))
        elif element.side is Side.RIGHT:
            acc = forest.insert(Internal.of(acc, element.digest))

    new = VersionRoot(len(forest.versions), acc, base.leaf_count, base.version)
    forest.versions.append(new)
    return new


def leaf_at(forest: Forest, version: int, index: int) -> Leaf:
    return locate(forest, forest.version(version), index)[0]


def sibling_path(forest: Forest, version: int, index: int) -> list[PathElement]:
    return locate(forest, forest.version(version), index)[1]


def retrieve_version(forest: Forest, version: int) -> list[EncryptedBlock]:
    vr = forest.version(version)
    blocks: list[EncryptedBlock] = []
    stack = [vr.root]
    while stack:
        node = forest.nodes.get(stack.pop())
        if isinstance(node, Leaf):
            block = node.block
            if block.index != len(blocks):
                # Leaves are keyed by nonce and ciphertext only, so a byte-identical
                # block stored elsewhere may carry another index. Position wins.
                block = EncryptedBlock(len(blocks), block.nonce, block.ciphertext)
            blocks.append(block)
        else:
            if node.right is not None:
                stack.append(node.right)
            stack.append(node.left)
    if len(blocks) != vr.leaf_count:
        raise NodeCorrupt(f"version {vr.version}: found {len(blocks)} leaves, expected {vr.leaf_count}")
    return blocks


def reachable(forest: Forest, root: NodeId) -> set[NodeId]:
    seen: set[NodeId] = set()
    stack = [root]
    while stack:
        nid = stack.pop()
        if nid in seen:
            continue
        seen.add(nid)
        node = forest.nodes.get(nid)
        if isinstance(node, Internal):
            stack.append(node.left)
            if node.right is not None:
                stack.append(node.right)
    return seen


@dataclass(frozen=True)
class NodeStats:
    total_nodes: int
    nodes_per_version: list[int]
    reachable_sets: list[frozenset]

    def shared_node_count(self, a: int, b: int) -> int:
        return len(self.reachable_sets[a] & self.reachable_sets[b])


def node_stats(forest: Forest) -> NodeStats:
    sets = [frozenset(reachable(forest, v.root)) for v in forest.versions]
    union: set[NodeId] = set().union(*sets) if sets else set()
    return NodeStats(len(union), [len(s) for s in sets], sets)
