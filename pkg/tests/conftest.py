import random

import pytest

from deon.identity import Wallet
from deon.ledger import LedgerPeer, PrivateStore, TransactionEnvelope, tx_id_for


def build_genesis(n_orgs: int = 3, seed: int = 99, max_block_txs: int = 50):
    """Genesis document plus the org agent wallets that signed into it."""
    rng = random.Random(seed)
    orgs = [f"org{i}" for i in range(1, n_orgs + 1)]
    agents = {}
    wallets = {}
    for i, org in enumerate(orgs, start=1):
        w = Wallet(rng)
        doc = w.create_did()
        agents[doc.did] = {"verkey": doc.verkey, "org": org, "node": f"n{i}"}
        wallets[org] = w
    genesis = {
        "orgs": orgs,
        "agents": agents,
        "policy": {"required_orgs": orgs},
        "collections": {"deon_private": orgs},
        "cred_defs": {
            "deon.member": {
                "schema": "deon.member",
                "attributes": ["kind", "name", "node"],
                "issuer": "node_agents",
            }
        },
        "raft": {"election_timeout_ms": [150, 300], "heartbeat_ms": 50},
        "block": {"max_txs": max_block_txs, "timeout_ms": 250},
    }
    return genesis, wallets


@pytest.fixture
def org_setup():
    return build_genesis()


def agent_signer(wallet: Wallet):
    return lambda payload: wallet.sign(wallet.active_did, payload)


def make_envelope(chaincode, function, args, wallet: Wallet, timestamp_ms=1_000):
    """Client-side proposal construction: the signature covers exactly the
    fields that derive the tx id."""
    from deon.ledger import proposal_bytes

    did = wallet.active_did
    env = TransactionEnvelope(
        tx_id=tx_id_for(chaincode, function, args, did, timestamp_ms),
        chaincode=chaincode,
        function=function,
        args=args,
        client_did=did,
        client_signature=wallet.sign(
            did, proposal_bytes(chaincode, function, args, did, timestamp_ms)
        ).hex(),
        timestamp_ms=timestamp_ms,
    )
    return env


def endorse_on_all(peers: dict, wallets: dict, env: TransactionEnvelope,
                   transient: dict) -> TransactionEnvelope:
    """Runs the proposal on every org's peer and merges the endorsements,
    the way the submitting node's middleware does."""
    results = {}
    for org in sorted(peers):
        copy = TransactionEnvelope.from_dict(env.to_dict())
        peers[org].endorse(copy, transient, agent_signer(wallets[org]))
        results[org] = copy
    first = next(iter(results.values()))
    for other in results.values():
        assert other.read_set == first.read_set
        assert other.write_set == first.write_set
        assert other.private_writes == first.private_writes
    merged = TransactionEnvelope.from_dict(first.to_dict())
    merged.endorsements = sorted(
        (org, result.endorsements[0][1]) for org, result in results.items()
    )
    return merged


def make_peers(genesis, wallets):
    return {
        org: LedgerPeer(f"n{i}", org, genesis, private_store=PrivateStore())
        for i, org in enumerate(sorted(wallets), start=1)
    }


def genesis_resolver(genesis):
    from deon.identity import IdentityView

    def resolve(_did, _view=IdentityView(genesis, lambda key: None)):
        try:
            return _view.resolve(_did).verkey_bytes()
        except Exception:
            return None

    return resolve


def state_resolver(genesis, peer):
    from deon.errors import NotFoundError
    from deon.identity import IdentityView

    view = IdentityView(genesis, peer.world_state.get)

    def resolve(did):
        try:
            return view.resolve(did).verkey_bytes()
        except NotFoundError:
            return None

    return resolve
