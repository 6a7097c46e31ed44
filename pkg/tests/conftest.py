import hashlib
import random

import pytest

from emforest.crypto import EncryptedBlock


def make_blocks(n, seed=0, size=24):
    rng = random.Random(f"blocks-{seed}")
    return [EncryptedBlock(i, rng.randbytes(16), rng.randbytes(size)) for i in range(n)]


def fresh_block(index, rng, size=24):
    return EncryptedBlock(index, rng.randbytes(16), rng.randbytes(size))


# Independent oracles: plain hashlib, recursive halving, no shared code with the package.

def oracle_leaf(block):
    return hashlib.sha256(b"\x00" + block.nonce + block.ciphertext).digest()


def oracle_node(left, right):
    return hashlib.sha256(b"\x01" + left + right).digest()


def oracle_tree(blocks):
    """Return (root digest, set of every node digest) by level pairing with lone-node promotion."""
    level = [oracle_leaf(b) for b in blocks]
    nodes = set(level)
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), 2):
            if i + 1 < len(level):
                d = oracle_node(level[i], level[i + 1])
                nodes.add(d)
                nxt.append(d)
            else:
                nxt.append(level[i])
        level = nxt
    return level[0], nodes


def oracle_root(blocks):
    return oracle_tree(blocks)[0]


@pytest.fixture
def rng():
    return random.Random(1234)


# --- acceptance reporting: one line per criterion -------------------------------

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None and (rep.when == "call" or (rep.when == "setup" and rep.failed)):
        _CRITERIA.append((marker.args[0], marker.args[1], rep.passed, rep.duration))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, title, passed, duration in sorted(_CRITERIA):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status}  criterion {number}: {title}  ({duration:.2f}s)")
