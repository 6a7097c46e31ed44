import hashlib
import random

import pytest
from hypothesis import given, settings, strategies as st

from emforest.crypto import (
    BLOCK_SIZE,
    EncryptedBlock,
    FileKey,
    PlainBlock,
    chunk_file,
    decrypt_block,
    encrypt_block,
    hash_internal,
    hash_leaf,
    join_blocks,
)
from emforest.errors import EmptyFile, InvalidBlock

KEY = FileKey(bytes(range(32)))


def test_single_block_boundary():
    blocks = chunk_file(b"\xaa" * BLOCK_SIZE)
    assert len(blocks) == 1
    assert len(blocks[0].data) == BLOCK_SIZE and blocks[0].is_last


def test_one_past_boundary():
    blocks = chunk_file(bytes(BLOCK_SIZE + 1))
    assert [len(b.data) for b in blocks] == [BLOCK_SIZE, 1]
    assert [b.is_last for b in blocks] == [False, True]


def test_one_gib_block_count():
    size = 2**30
    expected = size // BLOCK_SIZE
    # cross-check by walking the chunk boundaries without materialising 1 GiB
    total = count = 0
    while total < size:
        total += min(BLOCK_SIZE, size - total)
        count += 1
    assert count == expected == 65536


def test_empty_file_rejected():
    with pytest.raises(EmptyFile):
        chunk_file(b"")


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 200_000), st.randoms(use_true_random=False))
def test_chunk_round_trip(length, rnd):
    content = rnd.randbytes(length)
    blocks = chunk_file(content)
    assert b"".join(b.data for b in blocks) == content
    assert join_blocks(list(reversed(blocks))) == content
    assert all(len(b.data) == BLOCK_SIZE for b in blocks[:-1])
    assert [b.index for b in blocks] == list(range(len(blocks)))
    assert [b.is_last for b in blocks].count(True) == 1 and blocks[-1].is_last


def test_plain_block_invariants():
    with pytest.raises(InvalidBlock):
        PlainBlock(0, b"x", is_last=False)
    with pytest.raises(InvalidBlock):
        PlainBlock(0, b"", is_last=True)
    with pytest.raises(InvalidBlock):
        PlainBlock(0, bytes(BLOCK_SIZE + 1), is_last=True)


def test_key_length_enforced():
    for n in (0, 16, 31, 33):
        with pytest.raises(ValueError):
            FileKey(bytes(n))
    assert "redacted" in repr(KEY)


def test_round_trip_zero_block():
    block = PlainBlock(0, bytes(BLOCK_SIZE), True)
    enc = encrypt_block(block, KEY)
    assert len(enc.ciphertext) == BLOCK_SIZE and enc.ciphertext != block.data
    assert decrypt_block(enc, KEY, is_last=True) == block


def test_same_plaintext_twice_uses_fresh_nonce():
    block = PlainBlock(3, bytes(BLOCK_SIZE), False)
    a, b = encrypt_block(block, KEY), encrypt_block(block, KEY)
    assert a.nonce != b.nonce and a.ciphertext != b.ciphertext


def test_one_byte_last_block():
    block = PlainBlock(7, b"\x42", True)
    enc = encrypt_block(block, KEY)
    assert len(enc.ciphertext) == 1
    assert decrypt_block(enc, KEY) == block


@settings(max_examples=40, deadline=None)
@given(st.integers(1, BLOCK_SIZE), st.randoms(use_true_random=False))
def test_round_trip_all_lengths(length, rnd):
    block = PlainBlock(rnd.randrange(1000), rnd.randbytes(length), True)
    enc = encrypt_block(block, KEY, rnd.randbytes)
    dec = decrypt_block(enc, KEY, is_last=True)
    assert dec == block and len(enc.ciphertext) == length


def test_wrong_key_gives_garbage_and_keeps_index():
    block = PlainBlock(5, random.Random(0).randbytes(BLOCK_SIZE), False)
    enc = encrypt_block(block, KEY)
    other = decrypt_block(enc, FileKey(bytes(32)))
    assert other.data != block.data
    assert other.index == 5


def test_hash_leaf_definition_and_determinism():
    enc = EncryptedBlock(0, b"n" * 16, b"payload")
    assert hash_leaf(enc) == hash_leaf(enc)
    assert hash_leaf(enc) == hashlib.sha256(b"\x00" + b"n" * 16 + b"payload").digest()


def test_hash_leaf_sensitive_to_every_bit():
    rnd = random.Random(9)
    enc = EncryptedBlock(0, rnd.randbytes(16), rnd.randbytes(512))
    base = hash_leaf(enc)
    for _ in range(100):
        bit = rnd.randrange(len(enc.ciphertext) * 8)
        flipped = bytearray(enc.ciphertext)
        flipped[bit // 8] ^= 1 << (bit % 8)
        assert hash_leaf(EncryptedBlock(0, enc.nonce, bytes(flipped))) != base


def test_hash_internal_known_answer():
    zero = bytes(32)
    assert hash_internal(zero, zero) == hashlib.sha256(b"\x01" + bytes(64)).digest()
    assert hash_internal(zero, zero).hex() == hashlib.new("sha256", bytes([1]) + zero * 2).hexdigest()


def test_hash_internal_order_sensitive():
    rnd = random.Random(3)
    for _ in range(50):
        a, b = rnd.randbytes(32), rnd.randbytes(32)
        assert hash_internal(a, b) != hash_internal(b, a)
        assert hash_internal(a, b) == hash_internal(a, b)


def test_domain_separation_by_prefix():
    # A leaf whose nonce+ciphertext spell out two child digests still hashes differently.
    left, right = bytes(range(32)), bytes(range(32, 64))
    crafted = EncryptedBlock(0, (left + right)[:16], (left + right)[16:])
    assert hash_leaf(crafted) != hash_internal(left, right)
