"""Challenge / proof / verify between the auditor and the storage server.

The auditor side (``Registry``, ``make_challenge``, ``verify``) never touches a
forest: it works from registered version metadata and received proofs only.
"""

from __future__ import annotations

import enum
import json
import random
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .crypto import Digest, hash_leaf
from .errors import (
    DuplicateRegistration,
    ForestError,
    NoVersionsRegistered,
    UnknownVersion,
    VersionGap,
)
from .paths import PathElement, fold_path, path_shape


@dataclass(frozen=True)
class VersionMetadata:
    version: int
    root_digest: Digest
    leaf_count: int


@dataclass(frozen=True)
class Challenge:
    version: int
    block_index: int


@dataclass(frozen=True)
class ProofMessage:
    challenge: Challenge
    leaf_digest: Digest
    path: tuple[PathElement, ...]


class Verdict(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"


@dataclass(frozen=True)
class AuditResult:
    challenge: Challenge
    verdict: Verdict
    reconstructed_root: Optional[Digest]
    expected_root: Optional[Digest]
    reason: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict is Verdict.PASS


class Registry:
    """Per-version root digests and leaf counts as reported by the client.

    With ``path`` set, every registration is appended to a JSON-lines file and
    replayed on construction.
    """

    def __init__(self, path: Optional[Path] = None) -> None:
        self._metas: list[VersionMetadata] = []
        self._lock = threading.Lock()
        self._path = Path(path) if path is not None else None
        if self._path is not None and self._path.exists():
            for line in self._path.read_text().splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self._metas.append(
                        VersionMetadata(rec["version"], bytes.fromhex(rec["root"]), rec["leaf_count"])
                    )

    def register(self, meta: VersionMetadata) -> None:
        with self._lock:
            n = len(self._metas)
            if meta.version < n:
                raise DuplicateRegistration(f"version {meta.version} already registered")
            if meta.version != n:
                raise VersionGap(f"expected version {n}, got {meta.version}")
            if meta.leaf_count < 1 or len(meta.root_digest) != 32:
                raise ValueError("malformed version metadata")
            if self._path is not None:
                with self._path.open("a") as fh:
                    fh.write(json.dumps({
                        "version": meta.version,
                        "root": meta.root_digest.hex(),
                        "leaf_count": meta.leaf_count,
                    }) + "\n")
            self._metas.append(meta)

    def get(self, version: int) -> VersionMetadata:
        metas = self._metas
        if not isinstance(version, int) or not 0 <= version < len(metas):
            raise UnknownVersion(f"version {version} is not registered")
        return metas[version]

    def __len__(self) -> int:
        return len(self._metas)

    def __iter__(self) -> Iterator[VersionMetadata]:
        return iter(list(self._metas))


def register_metadata(registry: Registry, meta: VersionMetadata) -> None:
    registry.register(meta)


def make_challenge(registry: Registry, rng: random.Random) -> Challenge:
    metas = list(registry)
    if not metas:
        raise NoVersionsRegistered("no versions registered with the auditor")
    meta = metas[rng.randrange(len(metas))]
    return Challenge(meta.version, rng.randrange(meta.leaf_count))


def all_challenges(registry: Registry) -> list[Challenge]:
    """Every valid (version, index) pair; used for exhaustive audits."""
    return [Challenge(m.version, i) for m in registry for i in range(m.leaf_count)]


def prove(forest, challenge: Challenge) -> ProofMessage:
    from .forest import locate  # server side only; the auditor path stays forest-free

    leaf, path = locate(forest, forest.version(challenge.version), challenge.block_index)
    # Re-hash the stored payload so a damaged ciphertext cannot hide behind a cached digest.
    return ProofMessage(challenge, hash_leaf(leaf.block), tuple(path))


def verify(registry: Registry, proof: ProofMessage) -> AuditResult:
    meta = registry.get(proof.challenge.version)
    ch = proof.challenge

    def fail(reason: str, reconstructed: Optional[Digest] = None) -> AuditResult:
        return AuditResult(ch, Verdict.FAIL, reconstructed, meta.root_digest, reason)

    if not 0 <= ch.block_index < meta.leaf_count:
        return fail("block index outside registered leaf count")
    # Side markers must match the position of the challenged block, otherwise a
    # server could answer with a valid proof for some other block.
    if [e.side for e in proof.path] != path_shape(meta.leaf_count, ch.block_index):
        return fail("path shape does not match challenged position")
    try:
        reconstructed = fold_path(proof.leaf_digest, proof.path)
    except (ValueError, TypeError) as exc:
        return fail(f"malformed path: {exc}")
    if reconstructed != meta.root_digest:
        return fail("root mismatch", reconstructed)
    return AuditResult(ch, Verdict.PASS, reconstructed, meta.root_digest)


def error_result(registry: Registry, challenge: Challenge, reason: str) -> AuditResult:
    try:
        expected = registry.get(challenge.version).root_digest
    except UnknownVersion:
        expected = None
    return AuditResult(challenge, Verdict.FAIL, None, expected, reason)


def batch_audit(registry: Registry, forest, challenges: Sequence[Challenge]) -> list[AuditResult]:
    results = []
    for ch in challenges:
        try:
            results.append(verify(registry, prove(forest, ch)))
        except ForestError as exc:
            results.append(error_result(registry, ch, f"{exc.code}: {exc}"))
    return results


def tally(results: Iterable[AuditResult]) -> tuple[int, int]:
    passed = failed = 0
    for r in results:
        if r.passed:
            passed += 1
        else:
            failed += 1
    return passed, failed
