"""Built-in chaincodes and their execution context.

Chaincode functions run against committed state during endorsement; the
context records every read (with its version) and buffers writes so the
effects travel in the transaction instead of mutating state directly.
Private puts stage a (salt, cid) record off-chain and surface only the
commitment in the public write view.
"""

from __future__ import annotations

import json

from .canonical import canonical_json, sha256
from .errors import BadRequestError, ChaincodeError, NotFoundError
from .ledger import DEFAULT_COLLECTION, PrivateRecord, Version, WorldState


class TxContext:
    def __init__(self, world_state: WorldState, private_store, read_only: bool):
        self._state = world_state
        self._private = private_store
        self._read_only = read_only
        self._reads: dict[str, Version | None] = {}
        self._writes: dict[str, bytes] = {}
        self._private_records: list[tuple[str, str, PrivateRecord]] = []

    # -- public state ------------------------------------------------------------

    def get_state(self, key: str) -> bytes | None:
        if key in self._writes:
            return self._writes[key]
        entry = self._state.get_with_version(key)
        self._reads.setdefault(key, entry[1] if entry else None)
        return entry[0] if entry else None

    def put_state(self, key: str, value: bytes) -> None:
        if self._read_only:
            raise ChaincodeError("query context is read-only")
        self._writes[key] = value

    # -- private collections --------------------------------------------------------

    def get_private(self, collection: str, key: str) -> PrivateRecord | None:
        return self._private.get(collection, key)

    def put_private(self, collection: str, key: str, record: PrivateRecord) -> None:
        if self._read_only:
            raise ChaincodeError("query context is read-only")
        self._private_records.append((collection, key, record))

    # -- captured effects --------------------------------------------------------------

    def read_set(self) -> list[tuple[str, Version | None]]:
        return sorted(self._reads.items())

    def write_set(self) -> list[tuple[str, str]]:
        return sorted((k, v.hex()) for k, v in self._writes.items())

    def private_records(self) -> list[tuple[str, str, PrivateRecord]]:
        return list(self._private_records)

    def private_commitments(self) -> dict[str, list[tuple[str, str]]]:
        out: dict[str, list[tuple[str, str]]] = {}
        for collection, key, record in self._private_records:
            out.setdefault(collection, []).append((key, record.commitment().hex()))
        return {c: sorted(kv) for c, kv in out.items()}


# -- vote_cc: private ballots behind public commitments --------------------------------


def _vote_push(ctx: TxContext, args: list[str], transient: dict[str, str]) -> bytes:
    (vote_id,) = _args(args, 1, "push_vote(voteID)")
    if "::" not in vote_id:
        raise BadRequestError(f"vote id {vote_id!r} is not <pollID>::<voterID>")
    salt_hex = transient.get("salt")
    cid = transient.get("cid")
    if not salt_hex or not cid:
        raise ChaincodeError("push_vote requires transient salt and cid")
    record = PrivateRecord(salt=bytes.fromhex(salt_hex), cid=cid)
    ctx.get_state(vote_id)  # records the read so a concurrent re-vote conflicts
    ctx.put_private(DEFAULT_COLLECTION, vote_id, record)
    ctx.put_state(vote_id, record.commitment().hex().encode())
    return b"ok"


def _vote_get_commitment(ctx: TxContext, args: list[str], transient) -> bytes:
    (vote_id,) = _args(args, 1, "get_commitment(voteID)")
    value = ctx.get_state(vote_id)
    if value is None:
        raise NotFoundError(f"no commitment recorded for {vote_id!r}")
    return bytes.fromhex(value.decode())


def _vote_get_private(ctx: TxContext, args: list[str], transient) -> bytes:
    (vote_id,) = _args(args, 1, "get_private(voteID)")
    record = ctx.get_private(DEFAULT_COLLECTION, vote_id)
    if record is None:
        raise NotFoundError(f"no private record for {vote_id!r} on this node")
    return canonical_json(record.to_dict())


# -- data_cc: public key -> content reference -------------------------------------------


def _data_push(ctx: TxContext, args: list[str], transient) -> bytes:
    key, cid, metadata_json = _args(args, 3, "push(key, cid, metadata)")
    try:
        metadata = json.loads(metadata_json) if metadata_json else {}
    except json.JSONDecodeError as exc:
        raise BadRequestError(f"metadata is not JSON: {exc}") from None
    ctx.get_state(key)
    ctx.put_state(key, canonical_json({"cid": cid, "metadata": metadata}))
    return b"ok"


def _data_get(ctx: TxContext, args: list[str], transient) -> bytes:
    (key,) = _args(args, 1, "get(key)")
    value = ctx.get_state(key)
    if value is None:
        raise NotFoundError(f"no record for {key!r}")
    return value


# -- id_cc: DID registry and credential definitions on the same chain ---------------------


def _id_register_nym(ctx: TxContext, args: list[str], transient) -> bytes:
    from .identity import nym_key

    did, verkey, role = _args(args, 3, "register_nym(did, verkey, role)")
    key = nym_key(did)
    existing = ctx.get_state(key)
    record = canonical_json({"did": did, "verkey": verkey, "role": role})
    if existing is not None:
        if existing == record:
            return b"ok"  # idempotent re-registration
        raise ChaincodeError(f"{did} already registered with different material")
    ctx.put_state(key, record)
    return b"ok"


def _id_register_cred_def(ctx: TxContext, args: list[str], transient) -> bytes:
    from .identity import creddef_key

    schema, attrs_json, issuer_did = _args(args, 3,
                                           "register_cred_def(schema, attrs, issuer)")
    attrs = json.loads(attrs_json)
    if not isinstance(attrs, list) or not all(isinstance(a, str) for a in attrs):
        raise BadRequestError("attrs must be a JSON list of attribute names")
    key = creddef_key(schema)
    record = canonical_json({"schema": schema, "attributes": sorted(attrs),
                             "issuer": issuer_did})
    existing = ctx.get_state(key)
    if existing is not None:
        if existing == record:
            return b"ok"
        raise ChaincodeError(f"credential definition {schema!r} already exists")
    ctx.put_state(key, record)
    return b"ok"


def _id_get_nym(ctx: TxContext, args: list[str], transient) -> bytes:
    from .identity import nym_key

    (did,) = _args(args, 1, "get_nym(did)")
    value = ctx.get_state(nym_key(did))
    if value is None:
        raise NotFoundError(f"unknown did {did}")
    return value


def _args(args: list[str], n: int, signature: str) -> list[str]:
    if len(args) != n:
        raise BadRequestError(f"expected {signature}, got {len(args)} args")
    return args


# function name -> (callable, is_read_only)
BUILTIN_CHAINCODES: dict[str, dict[str, tuple]] = {
    "vote_cc": {
        "push_vote": (_vote_push, False),
        "get_commitment": (_vote_get_commitment, True),
        "get_private": (_vote_get_private, True),
    },
    "data_cc": {
        "push": (_data_push, False),
        "get": (_data_get, True),
    },
    "id_cc": {
        "register_nym": (_id_register_nym, False),
        "register_cred_def": (_id_register_cred_def, False),
        "get_nym": (_id_get_nym, True),
    },
}


def run_chaincode(registry: dict, chaincode: str, function: str, ctx: TxContext,
                  args: list[str], transient: dict[str, str]) -> bytes:
    try:
        fn, read_only = registry[chaincode][function]
    except KeyError:
        raise ChaincodeError(f"no chaincode function {chaincode}.{function}") from None
    if ctx._read_only and not read_only:
        raise ChaincodeError(f"{chaincode}.{function} cannot run as a query")
    return fn(ctx, args, transient)
