"""Versioned, auditable encrypted block store built on a persistent Merkle forest."""

from .audit import (
    AuditResult,
    Challenge,
    ProofMessage,
    Registry,
    Verdict,
    VersionMetadata,
    batch_audit,
    make_challenge,
    prove,
    register_metadata,
    verify,
)
from .crypto import (
    BLOCK_SIZE,
    EncryptedBlock,
    FileKey,
    PlainBlock,
    chunk_file,
    decrypt_block,
    encrypt_block,
    hash_internal,
    hash_leaf,
)
from .forest import (
    Forest,
    Internal,
    Leaf,
    VersionRoot,
    build_initial_tree,
    node_stats,
    retrieve_version,
    sibling_path,
    update_block,
)
from .paths import PathElement, Side, fold_path
from .store import Store, open_store, verify_store

__version__ = "0.1.0"
