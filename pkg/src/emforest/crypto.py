"""Chunking, AES-256-CTR block encryption and domain-separated SHA-256 hashing."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from typing import Callable

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import EmptyFile, InvalidBlock

BLOCK_SIZE = 16384
DIGEST_SIZE = 32
KEY_SIZE = 32
NONCE_SIZE = 16

LEAF_PREFIX = b"\x00"
INTERNAL_PREFIX = b"\x01"

# A digest is a raw 32-byte SHA-256 value; equality is byte-wise.
Digest = bytes

# Anything returning n random bytes: os.urandom, random.Random.randbytes, ...
RandomSource = Callable[[int], bytes]


def check_digest(value: bytes) -> Digest:
    if not isinstance(value, (bytes, bytearray)) or len(value) != DIGEST_SIZE:
        raise ValueError(f"digest must be {DIGEST_SIZE} bytes")
    return bytes(value)


@dataclass(frozen=True)
class FileKey:
    key: bytes

    def __post_init__(self) -> None:
        if not isinstance(self.key, bytes) or len(self.key) != KEY_SIZE:
            raise ValueError(f"file key must be exactly {KEY_SIZE} bytes")

    @classmethod
    def generate(cls, rng: RandomSource = os.urandom) -> "FileKey":
        return cls(rng(KEY_SIZE))

    def __repr__(self) -> str:
        return "FileKey(<redacted>)"


@dataclass(frozen=True)
class PlainBlock:
    index: int
    data: bytes
    is_last: bool

    def __post_init__(self) -> None:
        n = len(self.data)
        if n < 1 or n > BLOCK_SIZE:
            raise InvalidBlock(f"block {self.index}: length {n} not in 1..{BLOCK_SIZE}")
        if not self.is_last and n != BLOCK_SIZE:
            raise InvalidBlock(f"block {self.index}: only the last block may be short")


@dataclass(frozen=True)
class EncryptedBlock:
    index: int
    nonce: bytes
    ciphertext: bytes

    def __post_init__(self) -> None:
        if len(self.nonce) != NONCE_SIZE:
            raise InvalidBlock(f"nonce must be {NONCE_SIZE} bytes")
        if not 1 <= len(self.ciphertext) <= BLOCK_SIZE:
            raise InvalidBlock(f"ciphertext length {len(self.ciphertext)} not in 1..{BLOCK_SIZE}")
        if self.index < 0:
            raise InvalidBlock("negative block index")


def chunk_file(content: bytes) -> list[PlainBlock]:
    """Split ``content`` into 16 KiB blocks; the final block keeps its true length."""
    if not content:
        raise EmptyFile("cannot chunk an empty file")
    view = memoryview(content)
    count = (len(content) + BLOCK_SIZE - 1) // BLOCK_SIZE
    return [
        PlainBlock(i, bytes(view[i * BLOCK_SIZE:(i + 1) * BLOCK_SIZE]), i == count - 1)
        for i in range(count)
    ]


def join_blocks(blocks: list[PlainBlock]) -> bytes:
    return b"".join(b.data for b in sorted(blocks, key=lambda b: b.index))


def _ctr(key: FileKey, nonce: bytes):
    return Cipher(algorithms.AES(key.key), modes.CTR(nonce))


def encrypt_block(block: PlainBlock, key: FileKey, rng: RandomSource = os.urandom) -> EncryptedBlock:
    nonce = rng(NONCE_SIZE)
    enc = _ctr(key, nonce).encryptor()
    return EncryptedBlock(block.index, nonce, enc.update(block.data) + enc.finalize())


def decrypt_block(block: EncryptedBlock, key: FileKey, is_last: bool = False) -> PlainBlock:
    # CTR is unauthenticated: a wrong key yields garbage, never an error.
    dec = _ctr(key, block.nonce).decryptor()
    data = dec.update(block.ciphertext) + dec.finalize()
    return PlainBlock(block.index, data, is_last or len(data) < BLOCK_SIZE)


def hash_leaf(block: EncryptedBlock) -> Digest:
    return hashlib.sha256(LEAF_PREFIX + block.nonce + block.ciphertext).digest()


def hash_internal(left: Digest, right: Digest) -> Digest:
    return hashlib.sha256(INTERNAL_PREFIX + left + right).digest()
