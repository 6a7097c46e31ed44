"""Sibling-path elements and the tree-shape rules shared by server and auditor.

Trees pair nodes left to right at each level. When a level has an odd count its
last node is promoted unchanged, so no node record exists for the promotion and
the path carries a ``PROMOTED`` marker instead of a sibling digest.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Optional

from .crypto import Digest, hash_internal


class Side(str, enum.Enum):
    LEFT = "left"  # sibling sits to the left of the running node
    RIGHT = "right"
    PROMOTED = "promoted"


@dataclass(frozen=True)
class PathElement:
    side: Side
    digest: Optional[Digest] = None  # None exactly when side is PROMOTED


def level_sizes(leaf_count: int) -> list[int]:
    """Node counts per level, leaves first, root last."""
    sizes = [leaf_count]
    while sizes[-1] > 1:
        sizes.append((sizes[-1] + 1) // 2)
    return sizes


def path_shape(leaf_count: int, index: int) -> list[Side]:
    """Expected side markers, leaf-adjacent first, for ``index`` in a tree of ``leaf_count`` leaves."""
    if not 0 <= index < leaf_count:
        raise IndexError(index)
    shape = []
    for level, size in enumerate(level_sizes(leaf_count)[:-1]):
        pos = index >> level
        if size % 2 == 1 and pos == size - 1:
            shape.append(Side.PROMOTED)
        elif pos % 2 == 0:
            shape.append(Side.RIGHT)
        else:
            shape.append(Side.LEFT)
    return shape


def fold_path(leaf_digest: Digest, path: Iterable[PathElement]) -> Digest:
    acc = leaf_digest
    for element in path:
        if element.side is Side.PROMOTED:
            continue
        if element.digest is None:
            raise ValueError("sibling digest missing on a non-promoted element")
        if element.side is Side.LEFT:
            acc = hash_internal(element.digest, acc)
        else:
            acc = hash_internal(acc, element.digest)
    return acc
