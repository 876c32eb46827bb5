"""Core service: the node middleware between clients and the platform.

One service runs on every node. It owns the full write path — identity
check, content-store put, fan-out endorsement, submission to the ordering
service with idempotent resubmission, and receipt assembly once the
transaction commits locally — and the verified read path, which re-derives
the on-chain commitment from the private record and the fetched payload
before releasing anything to the caller.
"""

from __future__ import annotations

import base64
import json

from .canonical import canonical_json, sha256_hex
from .cas import compute_cid
from .chaincode import DEFAULT_COLLECTION
from .errors import (
    BadRequestError,
    CommitTimeoutError,
    EndorsementError,
    IdentityError,
    InternalError,
    NotFoundError,
    TamperError,
    UnavailableError,
)
from .ledger import (
    FLAG_VALID,
    TransactionEnvelope,
    commitment_hex,
    proposal_bytes,
    tx_id_for,
)
from .identity import verify_signature
from .ordering import SUBMIT_ACK, SUBMIT_REDIRECT
from .runtime import Future, gather

VOTE_SEP = "::"


def vote_key(poll_id: str, voter_id: str) -> str:
    if VOTE_SEP in poll_id or VOTE_SEP in voter_id:
        raise BadRequestError("poll and voter ids must not contain '::'")
    return f"{poll_id}{VOTE_SEP}{voter_id}"


def encode_ballot(poll_id: str, voter_id: str, choice: str) -> bytes:
    return canonical_json({"poll": poll_id, "voter": voter_id, "choice": choice})


# -- request builders (shared by the in-process client, the HTTP client and CLI) --


def build_push_request(wallet, key: str, payload: bytes, *, private: bool,
                       use_cas: bool, metadata: dict | None, timestamp_ms: int,
                       presentation: dict | None) -> dict:
    did = wallet.active_did
    cid_text = compute_cid(payload).text
    if private:
        chaincode, function, args = "vote_cc", "push_vote", [key]
    else:
        chaincode, function, args = "data_cc", "push", [
            key, cid_text, canonical_json(metadata or {}).decode()]
    signature = wallet.sign(
        did, proposal_bytes(chaincode, function, args, did, timestamp_ms)).hex()
    return {
        "type": "core.push",
        "proposal": {
            "chaincode": chaincode, "function": function, "args": args,
            "client_did": did, "timestamp_ms": timestamp_ms,
        },
        "signature": signature,
        "presentation": presentation,
        "payload_b64": base64.b64encode(payload).decode(),
        "private": private,
        "use_cas": use_cas,
    }


def build_query_request(wallet, key: str, *, private: bool, nonce: str,
                        presentation: dict | None) -> dict:
    did = wallet.active_did
    signature = wallet.sign(
        did, canonical_json({"key": key, "nonce": nonce, "did": did})).hex()
    return {
        "type": "core.query",
        "key": key,
        "private": private,
        "did": did,
        "nonce": nonce,
        "signature": signature,
        "presentation": presentation,
    }


class CoreService:
    def __init__(self, rt):
        self.rt = rt  # the node runtime: scheduler, peer, cas, agent, transport
        self._watchers: dict[str, Future] = {}
        self._history: dict[str, tuple[int, str]] = {}  # tx_id -> (block, flag)
        rt.peer.on_commit.append(self._on_commit)

    # -- commit watching ------------------------------------------------------------

    def _on_commit(self, block, report) -> None:
        for tx_id, flag in report.tx_status.items():
            if tx_id not in self._history:
                self._history[tx_id] = (report.number, flag)
            fut = self._watchers.pop(tx_id, None)
            if fut is not None:
                fut.set_result(self._history[tx_id])

    def watch(self, tx_id: str) -> Future:
        fut = Future()
        if tx_id in self._history:
            fut.set_result(self._history[tx_id])
            return fut
        existing = self._watchers.get(tx_id)
        if existing is not None:
            existing.add_done_callback(
                lambda f: fut.set_result(f.result()) if f.exception() is None
                else fut.set_exception(f.exception()))
            return fut
        self._watchers[tx_id] = fut
        return fut

    # -- endorsement fan-out ------------------------------------------------------------

    def handle_endorse(self, req: dict):
        """Coroutine; runs on every endorsing node (including the submitter's
        own). Before signing, the org takes custody of any referenced payload
        — fetch, digest-check, pin — so the content outlives the submitter."""
        p = req["proposal"]
        env = TransactionEnvelope(
            tx_id=tx_id_for(p["chaincode"], p["function"], p["args"],
                            p["client_did"], p["timestamp_ms"]),
            chaincode=p["chaincode"], function=p["function"], args=list(p["args"]),
            client_did=p["client_did"], client_signature=req["signature"],
            timestamp_ms=p["timestamp_ms"],
        )
        self.rt.agent.verify_transactor(env.client_did, req.get("presentation"),
                                        tx_ref=env.tx_id)
        vk = self._resolve_verkey(env.client_did)
        if vk is None or not verify_signature(
                vk, bytes.fromhex(env.client_signature), env.proposal_bytes()):
            raise IdentityError("client signature check failed at endorsement")
        transient = req.get("transient") or {}
        if req.get("use_cas"):
            cid_text = transient.get("cid")
            if cid_text is None and p["chaincode"] == "data_cc" and \
                    p["function"] == "push" and len(p["args"]) > 1:
                cid_text = p["args"][1]
            if cid_text is not None:
                from .cas import ContentId

                yield self.rt.cas.get_async(ContentId.parse(cid_text))
        op = "endorse_private" if transient else "endorse"
        yield self.rt.execute(
            op, 1, lambda: self.rt.peer.endorse(env, transient, self.rt.agent_sign))
        return {
            "read_set": [[k, list(v) if v is not None else None]
                         for k, v in env.read_set],
            "write_set": [[k, v] for k, v in env.write_set],
            "private_writes": {c: [[k, h] for k, h in kv]
                               for c, kv in sorted(env.private_writes.items())},
            "endorsement": [env.endorsements[0][0], env.endorsements[0][1]],
        }

    def _resolve_verkey(self, did: str) -> bytes | None:
        try:
            return self.rt.identity_view.resolve(did).verkey_bytes()
        except NotFoundError:
            return None

    # -- the write path -----------------------------------------------------------------

    def handle_push(self, req: dict):
        """Coroutine: full push flow, resolves to a receipt dict."""
        p = req["proposal"]
        payload = base64.b64decode(req["payload_b64"])
        private = bool(req.get("private", True))
        use_cas = bool(req.get("use_cas", True))

        # identity gate before anything is stored or endorsed
        self.rt.agent.verify_transactor(
            p["client_did"], req.get("presentation"),
            tx_ref=tx_id_for(p["chaincode"], p["function"], p["args"],
                             p["client_did"], p["timestamp_ms"]))

        if use_cas:
            cid = yield self.rt.execute("cas_put", 1, lambda: self.rt.cas.put(payload))
        else:
            cid = compute_cid(payload)

        transient = {}
        if private:
            if p["chaincode"] != "vote_cc" or p["function"] != "push_vote":
                raise BadRequestError("private pushes go through vote_cc.push_vote")
            transient = {"salt": self.rt.rng.randbytes(32).hex(), "cid": cid.text}
        else:
            if p["chaincode"] != "data_cc" or p["function"] != "push":
                raise BadRequestError("public pushes go through data_cc.push")
            if p["args"][1] != cid.text:
                raise BadRequestError("args carry a different cid than the payload")

        env_dict, tx_id = yield from self._endorse_all(
            p, req["signature"], req.get("presentation"), transient,
            use_cas=use_cas)
        block, flag = yield from self._submit_until_committed(env_dict, tx_id)
        key = p["args"][0]
        receipt = {
            "tx_id": tx_id,
            "key": key,
            "block": block,
            "flag": flag,
            "cid": cid.text,
        }
        if flag == FLAG_VALID:
            # receipts describe what the chain committed, which — because two
            # proposals with identical identity fields share a tx id — is not
            # necessarily what this request carried
            committed = self._committed_tx(block, tx_id)
            if private:
                chain_c = dict(committed.private_writes.get(
                    DEFAULT_COLLECTION, []))
                ours = commitment_hex(bytes.fromhex(transient["salt"]),
                                      transient["cid"])
                if chain_c.get(key) != ours:
                    raise BadRequestError(
                        f"tx id {tx_id[:12]} committed with a different payload; "
                        "resubmit to get a fresh tx id")
                receipt["commitment"] = ours
            else:
                value = dict(committed.write_set).get(key)
                chain_cid = json.loads(bytes.fromhex(value).decode())["cid"] \
                    if value else None
                if chain_cid != cid.text:
                    raise BadRequestError(
                        f"tx id {tx_id[:12]} committed with a different payload; "
                        "resubmit to get a fresh tx id")
        elif private:
            receipt["commitment"] = commitment_hex(
                bytes.fromhex(transient["salt"]), transient["cid"])
        return receipt

    def _committed_tx(self, block_number: int, tx_id: str) -> TransactionEnvelope:
        for tx in self.rt.peer.blocks[block_number].txs:
            if tx.tx_id == tx_id:
                return tx
        raise InternalError(f"tx {tx_id} missing from its commit block")

    def _endorse_all(self, proposal: dict, signature: str, presentation: dict | None,
                     transient: dict, use_cas: bool = False):
        """Fans the signed proposal to every required org and merges the
        endorsements; all effect sets must agree bit-for-bit."""
        req = {
            "type": "endorse.request",
            "proposal": proposal,
            "signature": signature,
            "presentation": presentation,
            "transient": transient,
            "use_cas": use_cas,
            "_private": True,  # transient salt rides the point-to-point channel
        }
        futs = []
        orgs = sorted(self.rt.required_orgs)
        for org in orgs:
            node = self.rt.org_nodes[org]
            if node == self.rt.node_id:
                futs.append(self.rt.spawn(self.handle_endorse(req)))
            else:
                futs.append(self.rt.request(node, req, timeout=self.rt.endorse_timeout))
        try:
            responses = yield gather(futs)
        except IdentityError:
            raise  # caller can retry with a fresh presentation
        except Exception as exc:
            raise EndorsementError(f"endorsement failed: {exc}") from exc

        first = responses[0]
        for other in responses[1:]:
            for field in ("read_set", "write_set", "private_writes"):
                if canonical_json(other[field]) != canonical_json(first[field]):
                    raise EndorsementError("endorsers disagree on transaction effects")

        p = proposal
        tx_id = tx_id_for(p["chaincode"], p["function"], p["args"], p["client_did"],
                          p["timestamp_ms"])
        env_dict = {
            "tx_id": tx_id,
            "chaincode": p["chaincode"], "function": p["function"],
            "args": list(p["args"]),
            "client_did": p["client_did"], "client_signature": signature,
            "timestamp_ms": p["timestamp_ms"],
            "read_set": first["read_set"],
            "write_set": first["write_set"],
            "private_writes": first["private_writes"],
            "endorsements": sorted(
                [resp["endorsement"] for resp in responses]),
        }
        return env_dict, tx_id

    def _submit_until_committed(self, env_dict: dict, tx_id: str):
        """Submit to the ordering service and wait for the local commit.
        Resubmission reuses the identical envelope, so a leader change can
        never duplicate the transaction — the same tx id dedups everywhere."""
        watcher = self.watch(tx_id)
        deadline = self.rt.sched.now() + self.rt.receipt_timeout
        target = self.rt.node_id
        while True:
            if watcher.done():
                return watcher.result()
            now = self.rt.sched.now()
            if now >= deadline:
                raise CommitTimeoutError(
                    f"transaction {tx_id[:16]} not committed within "
                    f"{self.rt.receipt_timeout:g}s")
            if target == self.rt.node_id:
                status, hint = self.rt.submit_local(env_dict)
            else:
                try:
                    resp = yield self.rt.request(
                        target, {"type": "order.submit", "env": env_dict},
                        timeout=min(1.0, deadline - now))
                    status, hint = resp["status"], resp.get("leader")
                except Exception:
                    status, hint = "unavailable", None
            if status == SUBMIT_REDIRECT and hint and hint != target:
                target = hint
                continue
            if status != SUBMIT_ACK:
                target = self.rt.node_id
                yield self.rt.sched.sleep(0.1)
                continue
            # acknowledged: give the commit a resubmission interval to land
            try:
                yield self.rt.sched.with_timeout(
                    self.watch(tx_id), min(self.rt.resubmit_interval, deadline - now),
                    lambda: TimeoutError())
            except TimeoutError:
                continue
            return watcher.result()

    # -- the verified read path ------------------------------------------------------------

    def handle_query(self, req: dict):
        """Coroutine: authenticated read with end-to-end tamper checks."""
        did = req["did"]
        self.rt.agent.verify_transactor(did, req.get("presentation"),
                                        tx_ref=f"query:{req['nonce']}")
        vk = self._resolve_verkey(did)
        payload_sig = canonical_json({"key": req["key"], "nonce": req["nonce"],
                                      "did": did})
        if vk is None or not verify_signature(
                vk, bytes.fromhex(req["signature"]), payload_sig):
            raise IdentityError("query signature check failed")
        key = req["key"]
        if req.get("private", True):
            return (yield from self._query_private(key))
        return (yield from self._query_public(key))

    def _query_private(self, key: str):
        import json

        rec_bytes = yield self.rt.execute(
            "query", 1, lambda: self.rt.peer.query("vote_cc", "get_private", [key]))
        record = json.loads(rec_bytes.decode())
        onchain = self.rt.peer.query("vote_cc", "get_commitment", [key])
        recomputed = commitment_hex(bytes.fromhex(record["salt"]), record["cid"])
        if recomputed != onchain.hex():
            raise TamperError(
                f"private record for {key!r} does not match its on-chain commitment")
        from .cas import ContentId

        payload = yield self.rt.cas.get_async(ContentId.parse(record["cid"]))
        entry = self.rt.peer.world_state.get_with_version(key)
        return {
            "payload_b64": base64.b64encode(payload).decode(),
            "report": {
                "commitment": onchain.hex(),
                "commitment_ok": True,
                "cid": record["cid"],
                "cas_integrity_ok": True,
                "block": entry[1][0] if entry else None,
            },
            "_private": True,
        }

    def _query_public(self, key: str):
        import json

        value = yield self.rt.execute(
            "query", 1, lambda: self.rt.peer.query("data_cc", "get", [key]))
        record = json.loads(value.decode())
        from .cas import ContentId

        payload = yield self.rt.cas.get_async(ContentId.parse(record["cid"]))
        entry = self.rt.peer.world_state.get_with_version(key)
        return {
            "payload_b64": base64.b64encode(payload).decode(),
            "report": {
                "cid": record["cid"],
                "metadata": record.get("metadata", {}),
                "cas_integrity_ok": True,
                "block": entry[1][0] if entry else None,
            },
        }

    # -- onboarding -----------------------------------------------------------------------

    def handle_onboard(self, req: dict):
        """Coroutine: registers the client-generated DID on chain, then
        issues a membership credential. Private keys never reach the node."""
        did, verkey = req["did"], req["verkey"]
        kind, name = req.get("kind", "user"), req.get("name", "")
        ts = self.rt.timestamp_ms()
        args = [did, verkey, "member"]
        proposal = {
            "chaincode": "id_cc", "function": "register_nym", "args": args,
            "client_did": self.rt.agent.did, "timestamp_ms": ts,
        }
        signature = self.rt.agent_sign(
            proposal_bytes("id_cc", "register_nym", args, self.rt.agent.did, ts)).hex()
        env_dict, tx_id = yield from self._endorse_all(proposal, signature, None, {})
        block, flag = yield from self._submit_until_committed(env_dict, tx_id)
        if flag != FLAG_VALID:
            # an identical concurrent registration is fine — state has the nym
            existing = self.rt.peer.world_state.get(f"nym/{did}")
            if existing is None:
                raise UnavailableError(f"did registration flagged {flag}")
        # don't hand out the credential until every endorsing org can resolve
        # the new DID, or the holder's first push would race replication
        yield from self._await_visibility(did)
        vc = self.rt.agent.issue_credential(
            did, "deon.member", {"kind": kind, "name": name, "node": self.rt.node_id},
            rng=self.rt.rng)
        return {
            "did": did,
            "nym_block": block,
            "credential": vc.to_dict(),
            "_private": True,  # issuance delivery carries attribute salts
        }

    def _await_visibility(self, did: str):
        deadline = self.rt.sched.now() + self.rt.receipt_timeout
        while True:
            missing = []
            for org in sorted(self.rt.required_orgs):
                node = self.rt.org_nodes[org]
                if node == self.rt.node_id:
                    found = self._resolve_verkey(did) is not None
                else:
                    try:
                        resp = yield self.rt.request(
                            node, {"type": "id.resolve", "did": did}, timeout=1.0)
                        found = bool(resp.get("found"))
                    except Exception:
                        found = False
                if not found:
                    missing.append(node)
            if not missing:
                return
            if self.rt.sched.now() >= deadline:
                raise UnavailableError(
                    f"did not yet resolvable on {missing} after registration")
            yield self.rt.sched.sleep(0.05)

    # -- vote sugar (server side validates the key shape) -------------------------------------

    def handle_vote(self, req: dict):
        p = req["proposal"]
        key = p["args"][0]
        if VOTE_SEP not in key:
            raise BadRequestError("vote key must be <pollID>::<voterID>")
        return (yield from self.handle_push(req))
