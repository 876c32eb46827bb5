import hashlib
import json
import random

import pytest

from deon.canonical import canonical_json
from deon.cas import compute_cid
from deon.errors import ChainIntegrityError, NotFoundError
from deon.identity import Wallet
from deon.ledger import (
    Block,
    BlockJournal,
    PrivateRecord,
    TransactionEnvelope,
    commitment_hex,
)

from conftest import (
    build_genesis,
    endorse_on_all,
    genesis_resolver,
    make_envelope,
    make_peers,
    state_resolver,
)


@pytest.fixture
def rig():
    genesis, wallets = build_genesis()
    peers = make_peers(genesis, wallets)
    resolve = genesis_resolver(genesis)
    return genesis, wallets, peers, resolve


def _client(genesis, wallets, peers, seed=5):
    """Registers a fresh client DID on every peer's chain via the id chaincode."""
    client = Wallet(random.Random(seed))
    doc = client.create_did()
    agent_wallet = wallets["org1"]
    env = make_envelope(
        "id_cc", "register_nym", [doc.did, doc.verkey, "member"], agent_wallet,
        timestamp_ms=500,
    )
    env = endorse_on_all(peers, wallets, env, {})
    for org in sorted(peers):
        peers[org].append_ordered_batch(1, [env], genesis_resolver(genesis))
    return client, doc


def test_private_push_commits_commitment_not_secret(rig):
    genesis, wallets, peers, resolve = rig
    client, doc = _client(genesis, wallets, peers)
    payload = b'{"choice":"42"}'
    cid = compute_cid(payload).text
    salt = random.Random(1).randbytes(32)
    env = make_envelope("vote_cc", "push_vote", ["poll::alice"], client, timestamp_ms=900)
    env = endorse_on_all(peers, wallets, env, {"salt": salt.hex(), "cid": cid})

    reports = {
        org: peers[org].append_ordered_batch(
            1, [TransactionEnvelope.from_dict(env.to_dict())],
            state_resolver(genesis, peers[org]))
        for org in sorted(peers)
    }
    assert all(r.flags == ["valid"] for r in reports.values())
    assert len({r.state_digest for r in reports.values()}) == 1

    # on-chain value is exactly sha256(salt || cid-text), never the secret
    oracle = hashlib.sha256(salt + cid.encode()).hexdigest()
    for peer in peers.values():
        assert peer.world_state.get("poll::alice") == oracle.encode()
        rec = peer.private_store.get("deon_private", "poll::alice")
        assert rec == PrivateRecord(salt=salt, cid=cid)
        blob = canonical_json(peer.blocks[-1].to_dict())
        assert salt.hex().encode() not in blob
        assert cid.encode() not in blob

    # query path: get_commitment returns the 32-byte digest
    got = peers["org1"].query("vote_cc", "get_commitment", ["poll::alice"])
    assert got == bytes.fromhex(oracle)
    private = json.loads(peers["org1"].query("vote_cc", "get_private", ["poll::alice"]))
    assert commitment_hex(bytes.fromhex(private["salt"]), private["cid"]) == oracle


def test_unregistered_client_flags_sig_fail(rig):
    genesis, wallets, peers, resolve = rig
    ghost = Wallet(random.Random(77))
    ghost.create_did()
    env = make_envelope("data_cc", "push", ["k", compute_cid(b"v").text, "{}"], ghost)
    env = endorse_on_all(peers, wallets, env, {})
    report = peers["org1"].append_ordered_batch(1, [env], resolve)
    assert report.flags == ["sig_fail"]
    assert peers["org1"].world_state.get("k") is None


def test_missing_endorsement_flags_policy_fail(rig):
    genesis, wallets, peers, resolve = rig
    client, _ = _client(genesis, wallets, peers)
    env = make_envelope("data_cc", "push", ["k", compute_cid(b"v").text, "{}"], client)
    env = endorse_on_all(peers, wallets, env, {})
    env.endorsements = env.endorsements[:2]  # drop one org
    report = peers["org1"].append_ordered_batch(
        1, [env], state_resolver(genesis, peers["org1"]))
    assert report.flags == ["policy_fail"]


def test_endorsement_signature_over_wrong_effects_fails_policy(rig):
    genesis, wallets, peers, resolve = rig
    client, _ = _client(genesis, wallets, peers)
    env = make_envelope("data_cc", "push", ["k", compute_cid(b"v").text, "{}"], client)
    env = endorse_on_all(peers, wallets, env, {})
    env.write_set = [(env.write_set[0][0], canonical_json({"cid": "other"}).hex())]
    report = peers["org1"].append_ordered_batch(
        1, [env], state_resolver(genesis, peers["org1"]))
    assert report.flags == ["policy_fail"]


def test_mvcc_conflict_first_writer_wins(rig):
    genesis, wallets, peers, resolve = rig
    client, _ = _client(genesis, wallets, peers)
    cid = compute_cid(b"v").text
    a = endorse_on_all(peers, wallets,
                       make_envelope("data_cc", "push", ["k", cid, "{}"], client,
                                     timestamp_ms=901), {})
    b = endorse_on_all(peers, wallets,
                       make_envelope("data_cc", "push", ["k", cid, "{}"], client,
                                     timestamp_ms=902), {})
    report = peers["org1"].append_ordered_batch(
        1, [a, b], state_resolver(genesis, peers["org1"]))
    assert report.flags == ["valid", "mvcc_conflict"]


def test_duplicate_tx_id_flags_conflict_on_second_commit(rig):
    genesis, wallets, peers, resolve = rig
    client, _ = _client(genesis, wallets, peers)
    env = endorse_on_all(peers, wallets,
                         make_envelope("data_cc", "push",
                                       ["k", compute_cid(b"v").text, "{}"], client), {})
    peer = peers["org1"]
    r1 = peer.append_ordered_batch(1, [env],
                                   state_resolver(genesis, peer))
    dup = TransactionEnvelope.from_dict(env.to_dict())
    r2 = peer.append_ordered_batch(1, [dup], state_resolver(genesis, peer))
    assert r1.flags == ["valid"]
    assert r2.flags == ["mvcc_conflict"]


def test_mvcc_flags_match_serial_reexecution_oracle():
    """Oracle: replay the batch serially against a plain dict, marking a tx
    valid iff every read it captured still matches what the serial run sees."""
    genesis, wallets = build_genesis()
    peers = make_peers(genesis, wallets)
    client, _ = _client(genesis, wallets, peers)
    rng = random.Random(42)
    keys = [f"key{i}" for i in range(6)]

    envs = []
    for i in range(40):
        key = rng.choice(keys)
        env = make_envelope("data_cc", "push",
                            [key, compute_cid(str(i).encode()).text, "{}"],
                            client, timestamp_ms=2_000 + i)
        envs.append(endorse_on_all(peers, wallets, env, {}))

    peer = peers["org1"]
    resolve = state_resolver(genesis, peer)
    base_versions = {}  # endorsement-time view: key -> version (None everywhere here)
    flags = []
    oracle_state: dict[str, tuple] = {
        k: v for k, v, _ in peer.world_state.items()
    }
    oracle_versions = {k: ver for k, _, ver in peer.world_state.items()}

    # split into two blocks to exercise cross-block versions too
    b0 = peer.append_ordered_batch(1, envs[:20], resolve)
    b1 = peer.append_ordered_batch(1, envs[20:], resolve)
    got = b0.flags + b1.flags

    expected = []
    for block_number, batch in ((b0.number, envs[:20]), (b1.number, envs[20:])):
        for idx, env in enumerate(batch):
            ok = all(oracle_versions.get(k) == v for k, v in env.read_set)
            expected.append("valid" if ok else "mvcc_conflict")
            if ok:
                for k, _ in env.write_set:
                    oracle_versions[k] = (block_number, idx)
    assert got == expected
    assert "mvcc_conflict" in got and "valid" in got


def test_chain_hash_links_and_tamper_detection(rig):
    genesis, wallets, peers, resolve = rig
    client, _ = _client(genesis, wallets, peers)
    peer = peers["org1"]
    for i in range(3):
        env = endorse_on_all(
            peers, wallets,
            make_envelope("data_cc", "push",
                          [f"k{i}", compute_cid(str(i).encode()).text, "{}"],
                          client, timestamp_ms=3_000 + i), {})
        peer.append_ordered_batch(1, [env], state_resolver(genesis, peer))
    assert peer.verify_chain(resolve) == []
    for i, block in enumerate(peer.blocks[1:], start=1):
        assert block.prev_hash == peer.blocks[i - 1].header_hash()

    # flip one byte inside a committed tx: replay must notice
    peer.blocks[2].txs[0].args[0] = "kX"
    problems = peer.verify_chain(resolve)
    assert problems and "block 2" in problems[0]


def test_commit_rejects_wrong_prev_hash_and_number(rig):
    genesis, wallets, peers, resolve = rig
    peer = peers["org1"]
    block = Block(number=5, prev_hash="00" * 32, data_hash=Block.compute_data_hash([]),
                  term=1, txs=[])
    with pytest.raises(ChainIntegrityError):
        peer.commit_block(block, resolve)
    bad_prev = Block(number=0, prev_hash="00" * 32,
                     data_hash=Block.compute_data_hash([]), term=1, txs=[])
    with pytest.raises(ChainIntegrityError):
        peer.commit_block(bad_prev, resolve)


def test_journal_round_trip(tmp_path, rig):
    genesis, wallets, peers, resolve = rig
    client, _ = _client(genesis, wallets, peers)
    path = str(tmp_path / "chain" / "blocks.log")
    journal = BlockJournal(path)
    peer = peers["org1"]
    peer.journal = journal
    env = endorse_on_all(peers, wallets,
                         make_envelope("data_cc", "push",
                                       ["k", compute_cid(b"v").text, "{}"], client), {})
    peer.append_ordered_batch(1, [env], state_resolver(genesis, peer))
    blocks = BlockJournal.read_all(path)
    assert [b.to_dict() for b in blocks] == [b.to_dict() for b in peer.blocks[1:]]


def test_query_rejects_write_functions(rig):
    genesis, wallets, peers, resolve = rig
    from deon.errors import ChaincodeError

    with pytest.raises(ChaincodeError):
        peers["org1"].query("data_cc", "push", ["k", "cid:sha256:" + "0" * 64, "{}"])
    with pytest.raises(NotFoundError):
        peers["org1"].query("data_cc", "get", ["nope"])
