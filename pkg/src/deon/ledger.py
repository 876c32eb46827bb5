"""Permissioned ledger: endorse -> order -> validate, with private data.

Transactions carry read/write sets captured at endorsement time and are
re-checked at commit (MVCC): a transaction is valid only if every key it
read still has the version it saw, folding in earlier valid transactions
of the same block (first writer wins). Private payload references never
enter a transaction: only salted commitments are written on-chain, while
the (salt, cid) pair is staged per-transaction and installed into the
node-local private store at commit for collection members.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

from .canonical import canonical_json, sha256, sha256_hex
from .errors import ChainIntegrityError, ChaincodeError, NotFoundError
from .identity import verify_signature

Version = tuple[int, int]  # (block number, tx index within block)

FLAG_VALID = "valid"
FLAG_MVCC = "mvcc_conflict"
FLAG_POLICY = "policy_fail"
FLAG_SIG = "sig_fail"

DEFAULT_COLLECTION = "deon_private"


# -- private data ------------------------------------------------------------------


@dataclass(frozen=True)
class PrivateRecord:
    """Off-chain half of a private write: random salt plus content id text."""

    salt: bytes
    cid: str

    def commitment(self) -> bytes:
        return sha256(self.salt + self.cid.encode())

    def to_dict(self) -> dict:
        return {"salt": self.salt.hex(), "cid": self.cid}

    @classmethod
    def from_dict(cls, d: dict) -> "PrivateRecord":
        return cls(salt=bytes.fromhex(d["salt"]), cid=d["cid"])


def commitment_hex(salt: bytes, cid: str) -> str:
    return sha256(salt + cid.encode()).hex()


class PrivateStore:
    """Node-local private data. Both committed records and endorsement-time
    staging survive restarts; only chain state is rebuilt by replay."""

    def __init__(self):
        self._data: dict[tuple[str, str], PrivateRecord] = {}
        self._staged: dict[str, list[tuple[str, str, PrivateRecord]]] = {}

    def stage(self, tx_id: str, collection: str, key: str, record: PrivateRecord) -> None:
        self._staged.setdefault(tx_id, []).append((collection, key, record))

    def install(self, tx_id: str, member_collections: set[str],
                expected: dict[tuple[str, str], str] | None = None) -> None:
        for collection, key, record in self._staged.pop(tx_id, []):
            if collection not in member_collections:
                continue
            # a diverging re-endorsement of the same tx id may have staged a
            # second record; only the one the chain committed to may land
            if expected is not None and \
                    expected.get((collection, key)) != record.commitment().hex():
                continue
            self._data[(collection, key)] = record

    def discard_staged(self, tx_id: str) -> None:
        self._staged.pop(tx_id, None)

    def get(self, collection: str, key: str) -> PrivateRecord | None:
        return self._data.get((collection, key))

    def records(self) -> list[tuple[str, str, PrivateRecord]]:
        return [(c, k, r) for (c, k), r in sorted(self._data.items())]

    def _corrupt(self, collection: str, key: str) -> None:
        # Fault injection only: flips one bit of a stored salt.
        rec = self._data[(collection, key)]
        salt = bytearray(rec.salt)
        salt[0] ^= 0x01
        self._data[(collection, key)] = PrivateRecord(salt=bytes(salt), cid=rec.cid)


# -- transactions -------------------------------------------------------------------


def proposal_bytes(chaincode: str, function: str, args: list[str], client_did: str,
                   timestamp_ms: int) -> bytes:
    return canonical_json({
        "chaincode": chaincode,
        "function": function,
        "args": list(args),
        "client_did": client_did,
        "timestamp_ms": timestamp_ms,
    })


def tx_id_for(chaincode: str, function: str, args: list[str], client_did: str,
              timestamp_ms: int) -> str:
    return sha256_hex(proposal_bytes(chaincode, function, args, client_did, timestamp_ms))


@dataclass
class TransactionEnvelope:
    tx_id: str
    chaincode: str
    function: str
    args: list[str]
    client_did: str
    client_signature: str  # hex over proposal_bytes
    timestamp_ms: int
    read_set: list[tuple[str, Version | None]] = field(default_factory=list)
    write_set: list[tuple[str, str]] = field(default_factory=list)  # (key, value hex)
    private_writes: dict[str, list[tuple[str, str]]] = field(default_factory=dict)
    endorsements: list[tuple[str, str]] = field(default_factory=list)  # (org, sig hex)

    def proposal_bytes(self) -> bytes:
        return proposal_bytes(self.chaincode, self.function, self.args, self.client_did,
                              self.timestamp_ms)

    def response_bytes(self) -> bytes:
        # What each endorser signs: the tx identity plus its effects.
        return canonical_json({
            "tx_id": self.tx_id,
            "read_set": _rs_dict(self.read_set),
            "write_set": [[k, v] for k, v in self.write_set],
            "private_writes": {c: [[k, h] for k, h in kv]
                               for c, kv in sorted(self.private_writes.items())},
        })

    def to_dict(self) -> dict:
        return {
            "tx_id": self.tx_id,
            "chaincode": self.chaincode,
            "function": self.function,
            "args": list(self.args),
            "client_did": self.client_did,
            "client_signature": self.client_signature,
            "timestamp_ms": self.timestamp_ms,
            "read_set": _rs_dict(self.read_set),
            "write_set": [[k, v] for k, v in self.write_set],
            "private_writes": {c: [[k, h] for k, h in kv]
                               for c, kv in sorted(self.private_writes.items())},
            "endorsements": [[o, s] for o, s in self.endorsements],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransactionEnvelope":
        return cls(
            tx_id=d["tx_id"],
            chaincode=d["chaincode"],
            function=d["function"],
            args=list(d["args"]),
            client_did=d["client_did"],
            client_signature=d["client_signature"],
            timestamp_ms=d["timestamp_ms"],
            read_set=[(k, tuple(v) if v is not None else None) for k, v in d["read_set"]],
            write_set=[(k, v) for k, v in d["write_set"]],
            private_writes={c: [(k, h) for k, h in kv]
                            for c, kv in d["private_writes"].items()},
            endorsements=[(o, s) for o, s in d["endorsements"]],
        )


def _rs_dict(read_set) -> list:
    return [[k, list(v) if v is not None else None] for k, v in read_set]


# -- blocks --------------------------------------------------------------------------


@dataclass
class Block:
    number: int
    prev_hash: str
    data_hash: str
    term: int
    txs: list[TransactionEnvelope]
    flags: list[str] = field(default_factory=list)

    @staticmethod
    def compute_data_hash(txs: list[TransactionEnvelope]) -> str:
        return sha256_hex(canonical_json([tx.to_dict() for tx in txs]))

    def header_bytes(self) -> bytes:
        return canonical_json({
            "number": self.number,
            "prev_hash": self.prev_hash,
            "data_hash": self.data_hash,
            "term": self.term,
        })

    def header_hash(self) -> str:
        return sha256_hex(self.header_bytes())

    def to_dict(self) -> dict:
        return {
            "number": self.number,
            "prev_hash": self.prev_hash,
            "data_hash": self.data_hash,
            "term": self.term,
            "txs": [tx.to_dict() for tx in self.txs],
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Block":
        return cls(
            number=d["number"],
            prev_hash=d["prev_hash"],
            data_hash=d["data_hash"],
            term=d["term"],
            txs=[TransactionEnvelope.from_dict(t) for t in d["txs"]],
            flags=list(d["flags"]),
        )


class BlockJournal:
    """Append-only on-disk block log: 4-byte big-endian length prefix per
    canonical-JSON block record."""

    def __init__(self, path: str):
        self.path = path
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)

    def append(self, block: Block) -> None:
        record = canonical_json(block.to_dict())
        with open(self.path, "ab") as fh:
            fh.write(struct.pack(">I", len(record)))
            fh.write(record)

    def reset(self) -> None:
        # a restarted node rebuilds its chain copy, and its journal with it
        with open(self.path, "wb"):
            pass

    @staticmethod
    def read_all(path: str) -> list[Block]:
        blocks = []
        with open(path, "rb") as fh:
            while True:
                head = fh.read(4)
                if not head:
                    break
                if len(head) != 4:
                    raise ChainIntegrityError(f"truncated journal {path}")
                (size,) = struct.unpack(">I", head)
                record = fh.read(size)
                if len(record) != size:
                    raise ChainIntegrityError(f"truncated journal {path}")
                blocks.append(Block.from_dict(json.loads(record.decode())))
        return blocks


# -- world state ----------------------------------------------------------------------


class WorldState:
    def __init__(self):
        self._data: dict[str, tuple[bytes, Version]] = {}

    def get(self, key: str) -> bytes | None:
        entry = self._data.get(key)
        return entry[0] if entry else None

    def get_with_version(self, key: str) -> tuple[bytes, Version] | None:
        return self._data.get(key)

    def put(self, key: str, value: bytes, version: Version) -> None:
        self._data[key] = (value, version)

    def items(self) -> list[tuple[str, bytes, Version]]:
        return [(k, v, ver) for k, (v, ver) in sorted(self._data.items())]

    def digest(self) -> str:
        return sha256_hex(canonical_json(
            [[k, v.hex(), list(ver)] for k, v, ver in self.items()]
        ))


# -- endorsement policy -----------------------------------------------------------------


@dataclass(frozen=True)
class EndorsementPolicy:
    required_orgs: tuple[str, ...]

    def evaluate(self, env: TransactionEnvelope, org_verkeys: dict[str, bytes]) -> bool:
        payload = env.response_bytes()
        valid_orgs = set()
        for org, sig_hex in env.endorsements:
            vk = org_verkeys.get(org)
            if vk is None:
                continue
            try:
                sig = bytes.fromhex(sig_hex)
            except ValueError:
                continue
            if verify_signature(vk, sig, payload):
                valid_orgs.add(org)
        return all(org in valid_orgs for org in self.required_orgs)


# -- commit reports ----------------------------------------------------------------------


@dataclass
class CommitReport:
    number: int
    header_hash: str
    flags: list[str]
    state_digest: str
    tx_status: dict[str, str]  # tx_id -> flag


class LedgerPeer:
    """One node's chain copy: builds blocks from ordered batches, validates,
    applies valid writes, and answers queries against committed state.

    ``resolve_verkey`` maps a client DID to its ledger verkey (or None) and is
    consulted against state *as of the transaction's position*, so an identity
    registered earlier in the same block is already visible.
    """

    def __init__(self, node_id: str, org_id: str, genesis: dict,
                 private_store: PrivateStore | None = None,
                 journal: BlockJournal | None = None,
                 chaincodes: dict | None = None):
        if chaincodes is None:
            from .chaincode import BUILTIN_CHAINCODES
            chaincodes = BUILTIN_CHAINCODES
        self.node_id = node_id
        self.org_id = org_id
        self.genesis = genesis
        self.genesis_digest = sha256_hex(canonical_json(genesis))
        self.chaincodes = chaincodes
        self.world_state = WorldState()
        self.blocks: list[Block] = []
        self.private_store = private_store if private_store is not None else PrivateStore()
        self.journal = journal
        self.policy = EndorsementPolicy(tuple(genesis["policy"]["required_orgs"]))
        self.org_verkeys = {
            entry["org"]: _b58vk(entry["verkey"])
            for entry in genesis.get("agents", {}).values()
        }
        self.collections: dict[str, set[str]] = {
            name: set(orgs) for name, orgs in genesis.get("collections", {}).items()
        }
        self.committed_txids: set[str] = set()
        self.on_commit: list = []  # callables (Block, CommitReport)

    # -- endorsement ------------------------------------------------------------------

    def endorse(self, env: TransactionEnvelope, transient: dict[str, str],
                sign) -> TransactionEnvelope:
        """Simulates the chaincode against committed state, fills the
        envelope's effect sets, and signs the response. ``sign`` is the
        org agent's signing callable (payload -> signature bytes)."""
        from .chaincode import TxContext, run_chaincode

        expect = tx_id_for(env.chaincode, env.function, env.args, env.client_did,
                           env.timestamp_ms)
        if expect != env.tx_id:
            raise ChaincodeError("tx id does not match proposal contents")
        ctx = TxContext(self.world_state, self.private_store, read_only=False)
        run_chaincode(self.chaincodes, env.chaincode, env.function, ctx, env.args, transient)
        env.read_set = ctx.read_set()
        env.write_set = ctx.write_set()
        env.private_writes = ctx.private_commitments()
        for collection, key, record in ctx.private_records():
            self.private_store.stage(env.tx_id, collection, key, record)
        env.endorsements = [(self.org_id, sign(env.response_bytes()).hex())]
        return env

    # -- queries ----------------------------------------------------------------------

    def query(self, chaincode: str, function: str, args: list[str]) -> bytes:
        from .chaincode import TxContext, run_chaincode

        ctx = TxContext(self.world_state, self.private_store, read_only=True)
        return run_chaincode(self.chaincodes, chaincode, function, ctx, args, {})

    # -- block intake --------------------------------------------------------------------

    def next_prev_hash(self) -> str:
        return self.blocks[-1].header_hash() if self.blocks else self.genesis_digest

    def append_ordered_batch(self, term: int, txs: list[TransactionEnvelope],
                             resolve_verkey) -> CommitReport:
        block = Block(
            number=len(self.blocks),
            prev_hash=self.next_prev_hash(),
            data_hash=Block.compute_data_hash(txs),
            term=term,
            txs=txs,
        )
        return self.commit_block(block, resolve_verkey)

    def commit_block(self, block: Block, resolve_verkey) -> CommitReport:
        if block.number != len(self.blocks):
            raise ChainIntegrityError(
                f"expected block {len(self.blocks)}, got {block.number}")
        if block.prev_hash != self.next_prev_hash():
            raise ChainIntegrityError(f"block {block.number} breaks the hash chain")
        if block.data_hash != Block.compute_data_hash(block.txs):
            raise ChainIntegrityError(f"block {block.number} data hash mismatch")
        flags = self._validate(block, resolve_verkey)
        self._apply(block, flags)
        block.flags = flags
        self.blocks.append(block)
        if self.journal is not None:
            self.journal.append(block)
        report = CommitReport(
            number=block.number,
            header_hash=block.header_hash(),
            flags=flags,
            state_digest=self.world_state.digest(),
            tx_status={tx.tx_id: flag for tx, flag in zip(block.txs, flags)},
        )
        for cb in list(self.on_commit):
            cb(block, report)
        return report

    def _validate(self, block: Block, resolve_verkey) -> list[str]:
        flags: list[str] = []
        # Effects of earlier valid txs in this block, folded in as we go.
        pending_writes: dict[str, Version] = {}
        seen_in_block: set[str] = set()
        for idx, tx in enumerate(block.txs):
            flags.append(self._validate_tx(block.number, idx, tx, pending_writes,
                                           seen_in_block, resolve_verkey))
            if flags[-1] == FLAG_VALID:
                for key, _ in tx.write_set:
                    pending_writes[key] = (block.number, idx)
                seen_in_block.add(tx.tx_id)
        return flags

    def _validate_tx(self, block_number: int, idx: int, tx: TransactionEnvelope,
                     pending_writes: dict[str, Version], seen_in_block: set[str],
                     resolve_verkey) -> str:
        # 1. client signature over the proposal, and tx_id integrity
        if tx.tx_id != sha256_hex(tx.proposal_bytes()):
            return FLAG_SIG
        vk = resolve_verkey(tx.client_did)
        if vk is None:
            return FLAG_SIG
        try:
            sig = bytes.fromhex(tx.client_signature)
        except ValueError:
            return FLAG_SIG
        if not verify_signature(vk, sig, tx.proposal_bytes()):
            return FLAG_SIG
        # 2. endorsement policy
        if not self.policy.evaluate(tx, self.org_verkeys):
            return FLAG_POLICY
        # 3. MVCC: reads must still see the version captured at endorsement;
        #    a duplicate tx_id is a conflict with its own earlier commit.
        if tx.tx_id in self.committed_txids or tx.tx_id in seen_in_block:
            return FLAG_MVCC
        for key, seen_version in tx.read_set:
            if key in pending_writes:
                return FLAG_MVCC
            entry = self.world_state.get_with_version(key)
            current = entry[1] if entry else None
            if current != seen_version:
                return FLAG_MVCC
        return FLAG_VALID

    def _apply(self, block: Block, flags: list[str]) -> None:
        member_collections = {
            name for name, orgs in self.collections.items() if self.org_id in orgs
        }
        for idx, (tx, flag) in enumerate(zip(block.txs, flags)):
            if flag != FLAG_VALID:
                self.private_store.discard_staged(tx.tx_id)
                continue
            for key, value_hex in tx.write_set:
                self.world_state.put(key, bytes.fromhex(value_hex), (block.number, idx))
            expected = {(c, k): h for c, kv in tx.private_writes.items()
                        for k, h in kv}
            self.private_store.install(tx.tx_id, member_collections, expected)
            self.committed_txids.add(tx.tx_id)

    # -- digests and verification -------------------------------------------------------

    def height(self) -> int:
        return len(self.blocks)

    def state_digest(self) -> str:
        return self.world_state.digest()

    def block_stream_digest(self) -> str:
        return sha256_hex(canonical_json([b.to_dict() for b in self.blocks]))

    def verify_chain(self, resolve_verkey) -> list[str]:
        """Re-validates the whole chain from genesis on a scratch peer and
        reports every discrepancy (hash links, data hashes, flags, digest)."""
        problems: list[str] = []
        fresh = LedgerPeer(self.node_id, self.org_id, self.genesis,
                           private_store=PrivateStore(), chaincodes=self.chaincodes)
        resolver = _replay_resolver(fresh, self.genesis)
        for block in self.blocks:
            copy = Block.from_dict(block.to_dict())
            copy.flags = []
            try:
                report = fresh.commit_block(copy, resolver)
            except ChainIntegrityError as exc:
                problems.append(f"block {block.number}: {exc}")
                break
            if report.flags != block.flags:
                problems.append(
                    f"block {block.number}: stored flags {block.flags} != "
                    f"recomputed {report.flags}")
        if not problems and fresh.state_digest() != self.state_digest():
            problems.append("state digest does not match replayed chain")
        return problems


def _replay_resolver(peer: LedgerPeer, genesis: dict):
    """DID -> verkey lookups against the replaying peer's own state."""
    from .identity import IdentityView

    view = IdentityView(genesis, peer.world_state.get)

    def resolve(did: str) -> bytes | None:
        try:
            return view.resolve(did).verkey_bytes()
        except NotFoundError:
            return None

    return resolve


def _b58vk(verkey_b58: str) -> bytes:
    from .canonical import b58decode

    return b58decode(verkey_b58)
