"""DEON: a decentralized data-exchange platform in one package.

Content-addressed storage, a permissioned ledger with private-data
commitments, crash-fault-tolerant ordering, DID/VC identity, and a
deterministic multi-node simulation harness with a benchmark suite.
"""

__version__ = "0.1.0"

from .canonical import canonical_json, sha256_hex
from .cas import BlockStore, CasService, ContentId, compute_cid
from .errors import DeonError
from .identity import Agent, IdentityView, Presentation, VerifiableCredential, Wallet
from .ledger import (
    Block,
    BlockJournal,
    EndorsementPolicy,
    LedgerPeer,
    PrivateRecord,
    PrivateStore,
    TransactionEnvelope,
    WorldState,
    commitment_hex,
)
from .ordering import RaftConfig, RaftOrderer
from .runtime import Future, Scheduler, WallScheduler

__all__ = [
    "Agent",
    "Block",
    "BlockJournal",
    "BlockStore",
    "CasService",
    "ContentId",
    "DeonError",
    "EndorsementPolicy",
    "Future",
    "IdentityView",
    "LedgerPeer",
    "Presentation",
    "PrivateRecord",
    "PrivateStore",
    "RaftConfig",
    "RaftOrderer",
    "Scheduler",
    "TransactionEnvelope",
    "VerifiableCredential",
    "Wallet",
    "WallScheduler",
    "WorldState",
    "canonical_json",
    "commitment_hex",
    "compute_cid",
    "sha256_hex",
    "__version__",
]
