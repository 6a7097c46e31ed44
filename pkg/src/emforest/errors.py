"""Exception hierarchy shared by every layer.

Each error carries a stable ``code`` (the class name) so the network layer can
ship it across the wire and the CLI can print it machine-readably.
"""

from __future__ import annotations


class ForestError(Exception):
    """Base class for all errors raised by this package."""

    @property
    def code(self) -> str:
        return type(self).__name__


# chunking / blocks
class EmptyFile(ForestError):
    pass


class InvalidBlock(ForestError):
    pass


# forest
class AlreadyInitialized(ForestError):
    pass


class BlockIndexOutOfRange(ForestError):
    pass


class VersionNotFound(ForestError):
    pass


# audit registry
class DuplicateRegistration(ForestError):
    pass


class VersionGap(ForestError):
    pass


class NoVersionsRegistered(ForestError):
    pass


class UnknownVersion(ForestError):
    pass


# on-disk store
class StoreCorrupt(ForestError):
    pass


class FormatMismatch(ForestError):
    pass


class NodeMissing(ForestError):
    pass


class NodeCorrupt(ForestError):
    pass


class StoreIOError(ForestError):
    """Disk I/O failed. Kept distinct from corruption on purpose."""


class StoreLocked(ForestError):
    pass


# wire
class ProtocolError(ForestError):
    pass


class RemoteError(ForestError):
    """An error response received from a peer; ``code`` is the remote one."""

    def __init__(self, code: str, message: str = "") -> None:
        super().__init__(f"{code}: {message}" if message else code)
        self._code = code
        self.message = message

    @property
    def code(self) -> str:
        return self._code


class EndpointUnreachable(ForestError):
    pass


_BY_CODE = {
    cls.__name__: cls
    for cls in (
        EmptyFile, InvalidBlock, AlreadyInitialized, BlockIndexOutOfRange,
        VersionNotFound, DuplicateRegistration, VersionGap, NoVersionsRegistered,
        UnknownVersion, StoreCorrupt, FormatMismatch, NodeMissing, NodeCorrupt,
        StoreIOError, StoreLocked, ProtocolError, EndpointUnreachable,
    )
}


def error_class(code: str) -> type[ForestError] | None:
    return _BY_CODE.get(code)
