"""Multi-node network harness: in-process nodes over a virtual bus.

The whole platform — every node's store, ledger, orderer, agent and core
service plus every client — runs on one scheduler. In sim mode the clock
is virtual and a run is a pure function of its seed: same seed, same
message trace, same blocks, byte for byte. In wall mode the identical
object graph is paced by the real clock so HTTP servers and the CLI can
talk to it.

Faults are first-class: links have configurable latency, jitter and loss;
nodes can be killed (losing all volatile state — raft log, chain copy,
world state — while keeping disk-like state: content store, private
store, wallet), partitioned and healed; stored bytes can be corrupted to
exercise every tamper detector. A TraceLog records every message, block
and fault, and ``audit()`` checks the run end to end.
"""

from __future__ import annotations

import itertools
import json
import random
import time
from dataclasses import dataclass, field, replace

from .canonical import canonical_json, sha256_hex
from .cas import DEFAULT_MAX_PAYLOAD, BlockStore, CasService, ContentId
from .core import CoreService, build_push_request, build_query_request, encode_ballot, vote_key
from .errors import (BadRequestError, DeonError, IdentityError, UnavailableError,
                     error_from_dict)
from .identity import Agent, IdentityView, VerifiableCredential, Wallet
from .ledger import Block, BlockJournal, LedgerPeer, PrivateStore, TransactionEnvelope
from .ordering import RaftConfig, RaftOrderer
from .runtime import Future, Scheduler, WallScheduler


# -- configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class LinkSpec:
    base_ms: float = 1.0
    jitter_ms: float = 0.2
    loss: float = 0.0


# a constrained deployment: slower links, lossier network
OFFGRID_LINK = LinkSpec(base_ms=5.0, jitter_ms=3.0, loss=0.01)


@dataclass(frozen=True)
class ServiceProfile:
    """Per-operation service times (ms). Each node is a single-server queue;
    zero everywhere means infinitely fast nodes (protocol-only simulation)."""

    endorse_ms: float = 0.0
    endorse_private_ms: float = 0.0
    validate_per_tx_ms: float = 0.0
    commit_ms: float = 0.0
    cas_put_ms: float = 0.0
    cas_serve_ms: float = 0.0
    query_ms: float = 0.0

    def is_zero(self) -> bool:
        return all(v == 0.0 for v in (
            self.endorse_ms, self.endorse_private_ms, self.validate_per_tx_ms,
            self.commit_ms, self.cas_put_ms, self.cas_serve_ms, self.query_ms))


PROFILES = {
    # development desktop: node compute is negligible next to the protocol
    "desk": ServiceProfile(),
    # small-board deployment: endorsement and content stores dominate
    "rpi": ServiceProfile(
        endorse_ms=4.0, endorse_private_ms=7.0, validate_per_tx_ms=2.0,
        commit_ms=2.0, cas_put_ms=12.0, cas_serve_ms=3.0, query_ms=2.0),
}


@dataclass
class NetConfig:
    n_nodes: int = 3
    seed: int = 42
    mode: str = "sim"  # "sim" | "wall"
    link: LinkSpec = field(default_factory=LinkSpec)
    election_timeout: tuple[float, float] = (0.150, 0.300)
    heartbeat: float = 0.050
    batch_timeout: float = 0.250
    max_block_txs: int = 50
    profile: str | ServiceProfile = "desk"
    max_payload: int = DEFAULT_MAX_PAYLOAD
    journal_dir: str | None = None
    endorse_timeout: float = 3.0
    receipt_timeout: float = 10.0
    resubmit_interval: float = 1.0
    cas_timeout: float = 0.5
    tick_interval: float = 0.010
    trace: bool = True

    def profile_obj(self) -> ServiceProfile:
        return PROFILES[self.profile] if isinstance(self.profile, str) else self.profile

    def raft_config(self) -> RaftConfig:
        return RaftConfig(
            election_timeout_min=self.election_timeout[0],
            election_timeout_max=self.election_timeout[1],
            heartbeat_interval=self.heartbeat,
            batch_timeout=self.batch_timeout,
            max_block_txs=self.max_block_txs,
        )


# -- trace ------------------------------------------------------------------------

# message types that legitimately carry secrets point-to-point: client<->node
# application traffic, endorsement transients, content transfers (the
# provider index names cids, like a DHT), and credential issuance. The
# ordering plane (raft.*, order.submit) and chain sync stay public and are
# held to the no-secrets invariant.
PRIVATE_CHANNEL_TYPES = {
    "core.push", "core.vote", "core.query", "core.onboard",
    "endorse.request", "cas.fetch", "cas.announce",
}


@dataclass
class MessageRecord:
    t_us: int
    src: str
    dst: str
    type: str
    private: bool
    dropped: bool
    data: bytes


class TraceLog:
    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.messages: list[MessageRecord] = []
        self.blocks: list[tuple[int, str, int, str]] = []
        self.faults: list[tuple[int, str, str]] = []

    def message(self, t: float, src: str, dst: str, msg: dict, private: bool,
                dropped: bool) -> None:
        if not self.enabled:
            return
        self.messages.append(MessageRecord(
            t_us=int(round(t * 1e6)), src=src, dst=dst, type=msg.get("type", "?"),
            private=private, dropped=dropped, data=canonical_json(msg)))

    def block(self, t: float, node: str, number: int, header_hash: str) -> None:
        if self.enabled:
            self.blocks.append((int(round(t * 1e6)), node, number, header_hash))

    def fault(self, t: float, kind: str, detail: str) -> None:
        if self.enabled:
            self.faults.append((int(round(t * 1e6)), kind, detail))

    def fingerprint(self) -> str:
        return sha256_hex(canonical_json({
            "messages": [[m.t_us, m.src, m.dst, m.type, m.dropped, m.data.hex()]
                         for m in self.messages],
            "blocks": [list(b) for b in self.blocks],
            "faults": [list(f) for f in self.faults],
        }))


# -- the bus -----------------------------------------------------------------------


class Bus:
    """Point-to-point links with latency, jitter, loss, partitions and a
    per-link FIFO clamp so jitter can never reorder one link's messages."""

    def __init__(self, sched, rng: random.Random, trace: TraceLog, link: LinkSpec):
        self.sched = sched
        self.rng = rng
        self.trace = trace
        self.link = link
        self.handlers: dict[str, callable] = {}
        self.is_node: dict[str, bool] = {}
        self.alive: dict[str, bool] = {}
        self.groups: dict[str, int] | None = None
        self._last_at: dict[tuple[str, str], float] = {}

    def register(self, endpoint: str, handler, node: bool) -> None:
        self.handlers[endpoint] = handler
        self.is_node[endpoint] = node
        self.alive[endpoint] = True

    def reachable(self, src: str, dst: str) -> bool:
        if not self.alive.get(src, False) or not self.alive.get(dst, False):
            return False
        if self.groups is None:
            return True
        if not (self.is_node.get(src) and self.is_node.get(dst)):
            return True  # clients are not partitioned away from nodes
        return self.groups.get(src) == self.groups.get(dst)

    def send(self, src: str, dst: str, msg: dict) -> None:
        now = self.sched.now()
        private = bool(msg.get("_private")) or msg.get("type") in PRIVATE_CHANNEL_TYPES
        if not self.reachable(src, dst):
            self.trace.message(now, src, dst, msg, private, dropped=True)
            return
        if self.link.loss and self.rng.random() < self.link.loss:
            self.trace.message(now, src, dst, msg, private, dropped=True)
            return
        self.trace.message(now, src, dst, msg, private, dropped=False)
        delay = (self.link.base_ms + self.rng.uniform(0.0, self.link.jitter_ms)) / 1000.0
        at = max(now + delay, self._last_at.get((src, dst), 0.0))
        self._last_at[(src, dst)] = at
        self.sched.call_at(at, lambda: self._deliver(src, dst, msg))

    def _deliver(self, src: str, dst: str, msg: dict) -> None:
        # re-checked at delivery: a partition or kill applied mid-flight
        # swallows messages that were already on the wire
        if not self.reachable(src, dst):
            return
        self.handlers[dst](msg, src)


# -- node runtime ------------------------------------------------------------------


class NodeRuntime:
    """Everything one node runs. Volatile state (raft log, chain copy, world
    state, verifier caches) dies with ``kill``; the content store, private
    store, journal and wallet survive like a disk."""

    def __init__(self, network: "Network", node_id: str, org_id: str,
                 wallet: Wallet, seed: int):
        self.net = network
        self.sched = network.sched
        self.bus = network.bus
        self.config = network.config
        self.genesis = network.genesis
        self.node_id = node_id
        self.org_id = org_id
        self.wallet = wallet
        self._seed = seed
        self.rng = random.Random(seed)

        # disk-like state
        self.cas_store = BlockStore(max_payload=self.config.max_payload)
        self.private_store = PrivateStore()
        self.journal: BlockJournal | None = None
        if self.config.journal_dir:
            self.journal = BlockJournal(f"{self.config.journal_dir}/{node_id}.blocks")

        self.alive = False
        self.epoch = 0
        self._busy_until = 0.0
        self._rid = itertools.count(1)
        self._pending: dict[int, Future] = {}

        agents = self.genesis["agents"]
        self.org_nodes = {entry["org"]: entry["node"] for entry in agents.values()}
        self.required_orgs = list(self.genesis["policy"]["required_orgs"])
        self.endorse_timeout = self.config.endorse_timeout
        self.receipt_timeout = self.config.receipt_timeout
        self.resubmit_interval = self.config.resubmit_interval

        self.peer: LedgerPeer | None = None
        self.orderer: RaftOrderer | None = None
        self.cas: CasService | None = None
        self.agent: Agent | None = None
        self.core: CoreService | None = None
        self.identity_view: IdentityView | None = None

    # -- lifecycle --------------------------------------------------------------

    def start(self, recover: bool) -> None:
        self.alive = True
        self.epoch += 1
        self.bus.alive[self.node_id] = True
        if recover and self.journal is not None:
            self.journal.reset()  # the chain copy is rebuilt from peers
        self.peer = LedgerPeer(self.node_id, self.org_id, self.genesis,
                               private_store=self.private_store, journal=self.journal)
        self.identity_view = IdentityView(
            self.genesis, lambda key: self.peer.world_state.get(key))
        self.agent = Agent(self.node_id, self.org_id, self.wallet, self.identity_view)
        self.cas = CasService(self, self.cas_store,
                              fetch_timeout=self.config.cas_timeout)
        self.orderer = RaftOrderer(
            self.node_id, sorted(self.org_nodes.values()),
            random.Random((self._seed, self.epoch).__hash__() & 0x7FFFFFFF),
            self.config.raft_config(), now=self.sched.now())
        self.core = CoreService(self)
        self._busy_until = self.sched.now()
        if recover:
            self.spawn(self._recover())
        else:
            self._schedule_tick()

    def kill(self) -> None:
        self.alive = False
        self.epoch += 1
        self.bus.alive[self.node_id] = False
        self._pending.clear()
        self.peer = self.orderer = self.cas = self.agent = self.core = None
        self.identity_view = None

    def _recover(self):
        """Fetch the chain from any live peer and replay it through the
        normal validation path, then rejoin ordering."""
        while self.alive:
            for other in sorted(n for n in self.org_nodes.values()
                                if n != self.node_id):
                try:
                    resp = yield self.request(
                        other, {"type": "ledger.sync",
                                "from_number": self.peer.height()}, timeout=1.0)
                except Exception:
                    continue
                for raw in resp["blocks"]:
                    block = Block.from_dict(raw)
                    if block.number != self.peer.height():
                        continue
                    block.flags = []
                    report = self.peer.commit_block(block, self._resolver())
                    self.net.trace.block(self.sched.now(), self.node_id,
                                         report.number, report.header_hash)
                self._schedule_tick()
                return
            yield self.sched.sleep(0.5)

    def _schedule_tick(self) -> None:
        epoch = self.epoch

        def tick():
            if not self.alive or self.epoch != epoch:
                return
            self._apply_effects(self.orderer.tick(self.sched.now()))
            self.sched.call_later(self.config.tick_interval, tick)

        self.sched.call_later(self.config.tick_interval, tick)

    # -- transport facade ---------------------------------------------------------

    def broadcast(self, msg: dict) -> None:
        for other in sorted(self.org_nodes.values()):
            if other != self.node_id:
                self.bus.send(self.node_id, other, msg)

    def request(self, dst: str, msg: dict, timeout: float) -> Future:
        rid = next(self._rid)
        fut = Future()
        self._pending[rid] = fut
        out = dict(msg)
        out["rid"] = rid
        self.bus.send(self.node_id, dst, out)
        wrapped = self.sched.with_timeout(
            fut, timeout, lambda: UnavailableError(f"{dst} did not respond"))
        wrapped.add_done_callback(lambda _: self._pending.pop(rid, None))
        return wrapped

    def _reply(self, dst: str, rid: int, *, value=None, error: dict | None = None,
               private: bool = False) -> None:
        msg = {"type": "rpc.resp", "rid": rid, "ok": error is None}
        if error is None:
            msg["value"] = value
            if isinstance(value, dict) and value.get("_private"):
                private = True
        else:
            msg["error"] = error
        if private:
            msg["_private"] = True
        self.bus.send(self.node_id, dst, msg)

    def _reply_from_future(self, dst: str, rid: int, fut: Future,
                           private: bool = False) -> None:
        def _done(f: Future):
            exc = f.exception()
            if exc is None:
                self._reply(dst, rid, value=f.result(), private=private)
            elif isinstance(exc, DeonError):
                self._reply(dst, rid, error=exc.to_dict(), private=private)
            else:
                self._reply(dst, rid,
                            error={"code": "internal", "message": repr(exc)},
                            private=private)

        fut.add_done_callback(_done)

    # -- inbound dispatch -------------------------------------------------------------

    def on_message(self, msg: dict, src: str) -> None:
        if not self.alive:
            return
        kind = msg["type"]
        if kind == "rpc.resp":
            fut = self._pending.pop(msg["rid"], None)
            if fut is not None:
                if msg["ok"]:
                    fut.set_result(msg.get("value"))
                else:
                    fut.set_exception(error_from_dict(msg["error"]))
            return
        if kind == "cas.announce":
            self.cas.on_announce(msg)
            return
        if kind.startswith("raft."):
            if self.orderer is not None:
                self._apply_effects(self.orderer.handle(msg, self.sched.now()))
            return
        rid = msg.get("rid")
        if kind == "cas.fetch":
            fut = self.execute("cas_serve", 1, lambda: self.cas.serve_fetch(msg))
            self._reply_from_future(src, rid, fut, private=True)
        elif kind == "order.submit":
            status, hint, eff = self.orderer.submit(msg["env"], self.sched.now())
            self._apply_effects(eff)
            self._reply(src, rid, value={"status": status, "leader": hint})
        elif kind == "ledger.sync":
            blocks = [b.to_dict() for b in self.peer.blocks[msg["from_number"]:]]
            self._reply(src, rid, value={"blocks": blocks})
        elif kind == "id.resolve":
            try:
                doc = self.identity_view.resolve(msg["did"])
                self._reply(src, rid, value={"found": True, "document": doc.to_dict()})
            except DeonError:
                self._reply(src, rid, value={"found": False})
        elif kind == "endorse.request":
            self._reply_from_future(src, rid,
                                    self.spawn(self.core.handle_endorse(msg)),
                                    private=True)
        elif kind in ("core.push", "core.vote"):
            handler = self.core.handle_vote if kind == "core.vote" else self.core.handle_push
            self._reply_from_future(src, rid, self.spawn(handler(msg)), private=True)
        elif kind == "core.query":
            self._reply_from_future(src, rid, self.spawn(self.core.handle_query(msg)),
                                    private=True)
        elif kind == "core.onboard":
            self._reply_from_future(src, rid, self.spawn(self.core.handle_onboard(msg)),
                                    private=True)

    # -- effects and batches ---------------------------------------------------------------

    def _apply_effects(self, eff) -> None:
        for dst, msg in eff.messages:
            self.bus.send(self.node_id, dst, msg)
        for seq, term, txs in eff.deliveries:
            self._deliver_batch(seq, term, txs)

    def _deliver_batch(self, seq: int, term: int, txs: list[dict]) -> None:
        def apply():
            if seq < self.peer.height():
                return  # already replayed from a peer during recovery
            envs = [TransactionEnvelope.from_dict(t) for t in txs]
            report = self.peer.append_ordered_batch(term, envs, self._resolver())
            self.net.trace.block(self.sched.now(), self.node_id, report.number,
                                 report.header_hash)

        self.execute("validate", len(txs), apply)

    def _resolver(self):
        view = self.identity_view

        def resolve(did: str):
            try:
                return view.resolve(did).verkey_bytes()
            except Exception:
                return None

        return resolve

    def submit_local(self, env_dict: dict) -> tuple[str, str | None]:
        status, hint, eff = self.orderer.submit(env_dict, self.sched.now())
        self._apply_effects(eff)
        return status, hint

    # -- node compute model --------------------------------------------------------------------

    def execute(self, op: str, units: int, fn) -> Future:
        """Runs ``fn`` after the node's single-server queue frees up, charging
        the profile's service time for ``op``."""
        profile = self.config.profile_obj()
        cost_ms = {
            "endorse": profile.endorse_ms,
            "endorse_private": profile.endorse_private_ms,
            "cas_put": profile.cas_put_ms,
            "cas_serve": profile.cas_serve_ms,
            "query": profile.query_ms,
            "validate": profile.validate_per_tx_ms * units + profile.commit_ms,
        }[op]
        fut = Future()
        epoch = self.epoch

        def run():
            if not self.alive or self.epoch != epoch:
                return
            try:
                fut.set_result(fn())
            except Exception as exc:  # noqa: BLE001 - surfaced via the future
                fut.set_exception(exc)

        if cost_ms <= 0.0:
            run()
        else:
            now = self.sched.now()
            start = max(now, self._busy_until)
            self._busy_until = start + cost_ms / 1000.0
            self.sched.call_at(self._busy_until, run)
        return fut

    def spawn(self, gen) -> Future:
        """Like sched.spawn but the coroutine dies silently if the node is
        killed or restarted, the way a process's threads would."""
        return self.sched.spawn(self._guarded(gen, self.epoch))

    def _guarded(self, gen, epoch):
        value, exc = None, None
        while True:
            if self.epoch != epoch or not self.alive:
                return None
            try:
                fut = gen.send(value) if exc is None else gen.throw(exc)
            except StopIteration as stop:
                return stop.value
            value, exc = None, None
            try:
                value = yield fut
            except Exception as e:  # noqa: BLE001 - rethrown into the coroutine
                exc = e

    # -- support used by CoreService ------------------------------------------------------------

    def agent_sign(self, payload: bytes) -> bytes:
        return self.wallet.sign(self.wallet.active_did, payload)

    def timestamp_ms(self) -> int:
        return int(round(self.sched.now() * 1000))


# -- clients -----------------------------------------------------------------------------------


class BusClient:
    """An external participant: generates its own keys, onboards through a
    node, then pushes and queries over the bus."""

    def __init__(self, network: "Network", name: str, home: str, seed: int):
        self.net = network
        self.sched = network.sched
        self.name = name
        self.client_id = f"client:{name}"
        self.home = home
        self.wallet = Wallet(random.Random(seed))
        self.doc = self.wallet.create_did()
        self.did = self.doc.did
        self._rid = itertools.count(1)
        self._pending: dict[int, Future] = {}
        self._nonce = itertools.count(1)
        self._presented: set[str] = set()
        network.bus.register(self.client_id, self._on_message, node=False)

    def _on_message(self, msg: dict, src: str) -> None:
        if msg.get("type") != "rpc.resp":
            return
        fut = self._pending.pop(msg["rid"], None)
        if fut is None:
            return
        if msg["ok"]:
            fut.set_result(msg.get("value"))
        else:
            fut.set_exception(error_from_dict(msg["error"]))

    def request(self, dst: str, msg: dict, timeout: float) -> Future:
        rid = next(self._rid)
        fut = Future()
        self._pending[rid] = fut
        out = dict(msg)
        out["rid"] = rid
        self.net.bus.send(self.client_id, dst, out)
        wrapped = self.sched.with_timeout(
            fut, timeout, lambda: UnavailableError(f"{dst} did not respond"))
        wrapped.add_done_callback(lambda _: self._pending.pop(rid, None))
        return wrapped

    # -- operations (coroutines) ----------------------------------------------------

    def onboard(self, kind: str = "user", node: str | None = None):
        node = node or self.home
        resp = yield self.request(node, {
            "type": "core.onboard", "kind": kind, "name": self.name,
            "did": self.did, "verkey": self.doc.verkey,
        }, timeout=self.net.config.receipt_timeout + 5.0)
        self.wallet.store_credential(
            VerifiableCredential.from_dict(resp["credential"]))
        return resp

    def push(self, key: str, payload: bytes, *, private: bool = True,
             use_cas: bool = True, metadata: dict | None = None,
             node: str | None = None):
        """Coroutine resolving to a receipt. The proposal is signed once, so
        every retry — to the same node after a verifier-cache miss, or to
        another node after a crash — carries the same tx id and can never
        commit twice."""
        from .ledger import tx_id_for

        first = node or self.home
        candidates = [first] + [n for n in self.net.node_ids() if n != first]
        timestamp_ms = int(round(self.sched.now() * 1000))
        req = build_push_request(
            self.wallet, key, payload, private=private, use_cas=use_cas,
            metadata=metadata, timestamp_ms=timestamp_ms, presentation=None)
        tx_id = tx_id_for(req["proposal"]["chaincode"], req["proposal"]["function"],
                          req["proposal"]["args"], self.did, timestamp_ms)
        presentation = self.wallet.present(
            "deon.member", disclose=[], nonce=tx_id).to_dict()
        deadline = self.sched.now() + 2.5 * self.net.config.receipt_timeout
        identity_retried = False
        target = 0
        while True:
            dst = candidates[target % len(candidates)]
            out = dict(req)
            if dst not in self._presented or identity_retried or target > 0:
                out["presentation"] = presentation
            try:
                receipt = yield self.request(
                    dst, out, timeout=self.net.config.receipt_timeout + 5.0)
            except IdentityError:
                # the node lost its verifier cache (e.g. restart): present again
                if identity_retried:
                    raise
                identity_retried = True
                continue
            except UnavailableError:
                if self.sched.now() >= deadline:
                    raise
                target += 1  # fail over; identical envelope, identical tx id
                yield self.sched.sleep(0.2)
                continue
            self._presented.add(dst)
            return receipt

    def query(self, key: str, *, private: bool = True, node: str | None = None):
        first = node or self.home
        candidates = [first] + [n for n in self.net.node_ids() if n != first]
        last_exc: Exception | None = None
        for attempt, dst in enumerate(candidates):
            nonce = f"{self.name}:{next(self._nonce)}"
            presentation = (
                self.wallet.present("deon.member", disclose=[], nonce=nonce).to_dict()
                if attempt or dst not in self._presented else None)
            req = build_query_request(self.wallet, key, private=private,
                                      nonce=nonce, presentation=presentation)
            try:
                resp = yield self.request(dst, req, timeout=10.0)
            except IdentityError:
                nonce = f"{self.name}:{next(self._nonce)}"
                req = build_query_request(
                    self.wallet, key, private=private, nonce=nonce,
                    presentation=self.wallet.present(
                        "deon.member", disclose=[], nonce=nonce).to_dict())
                resp = yield self.request(dst, req, timeout=10.0)
            except UnavailableError as exc:
                last_exc = exc
                continue
            self._presented.add(dst)
            return resp
        raise last_exc

    def cast_vote(self, poll_id: str, voter_id: str, choice: str,
                  node: str | None = None):
        receipt = yield from self.push(
            vote_key(poll_id, voter_id), encode_ballot(poll_id, voter_id, choice),
            private=True, use_cas=True, node=node)
        return receipt

    def get_vote(self, poll_id: str, voter_id: str, node: str | None = None):
        import base64

        resp = yield from self.query(vote_key(poll_id, voter_id), private=True,
                                     node=node)
        ballot = json.loads(base64.b64decode(resp["payload_b64"]).decode())
        return {"choice": ballot["choice"], "report": resp["report"]}


# -- scenarios -----------------------------------------------------------------------------


@dataclass
class ScenarioScript:
    """Timed fault actions, loadable from JSON:
    {"actions": [{"t": 2.0, "kind": "kill", "node": "n2"}, ...]}"""

    actions: list[dict] = field(default_factory=list)

    KINDS = ("kill", "restart", "partition", "heal", "inject_corruption")

    @classmethod
    def from_json(cls, text: str) -> "ScenarioScript":
        try:
            actions = list(json.loads(text)["actions"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise BadRequestError(f"scenario script is not {{'actions': [...]}}: {exc}")
        for a in actions:
            if not isinstance(a, dict) or "t" not in a or a.get("kind") not in cls.KINDS:
                raise BadRequestError(
                    f"scenario action needs 't' and 'kind' in {cls.KINDS}: {a!r}")
        return cls(actions=actions)

    def to_json(self) -> str:
        return json.dumps({"actions": self.actions}, indent=2)

    def kill(self, t: float, node: str) -> "ScenarioScript":
        self.actions.append({"t": t, "kind": "kill", "node": node})
        return self

    def restart(self, t: float, node: str) -> "ScenarioScript":
        self.actions.append({"t": t, "kind": "restart", "node": node})
        return self

    def partition(self, t: float, groups: list[list[str]]) -> "ScenarioScript":
        self.actions.append({"t": t, "kind": "partition", "groups": groups})
        return self

    def heal(self, t: float) -> "ScenarioScript":
        self.actions.append({"t": t, "kind": "heal"})
        return self

    def corrupt(self, t: float, target: str, node: str, **params) -> "ScenarioScript":
        self.actions.append({"t": t, "kind": "inject_corruption", "target": target,
                             "node": node, **params})
        return self


# -- audit ----------------------------------------------------------------------------------


@dataclass
class AuditReport:
    checks: dict[str, list[str]]

    @property
    def ok(self) -> bool:
        return all(not problems for problems in self.checks.values())

    def to_dict(self) -> dict:
        return {"ok": self.ok, "checks": self.checks}

    def summary(self) -> str:
        lines = []
        for name in sorted(self.checks):
            problems = self.checks[name]
            lines.append(f"{'PASS' if not problems else 'FAIL'} {name}")
            lines.extend(f"  - {p}" for p in problems[:10])
        return "\n".join(lines)


# -- the network ------------------------------------------------------------------------------


class Network:
    def __init__(self, config: NetConfig | None = None):
        self.config = config or NetConfig()
        self.sched = WallScheduler() if self.config.mode == "wall" else Scheduler()
        master = random.Random(self.config.seed)

        node_ids = [f"n{i}" for i in range(1, self.config.n_nodes + 1)]
        agent_wallets = {}
        agents = {}
        for i, node_id in enumerate(node_ids, start=1):
            w = Wallet(random.Random(master.randrange(2**63)))
            doc = w.create_did()
            agent_wallets[node_id] = w
            agents[doc.did] = {"verkey": doc.verkey, "org": f"org{i}", "node": node_id}
        orgs = [f"org{i}" for i in range(1, self.config.n_nodes + 1)]
        self.genesis = {
            "orgs": orgs,
            "agents": agents,
            "policy": {"required_orgs": orgs},
            "collections": {"deon_private": orgs},
            "cred_defs": {
                "deon.member": {"schema": "deon.member",
                                "attributes": ["kind", "name", "node"],
                                "issuer": "node_agents"},
            },
            "raft": {
                "election_timeout_ms": [int(self.config.election_timeout[0] * 1000),
                                        int(self.config.election_timeout[1] * 1000)],
                "heartbeat_ms": int(self.config.heartbeat * 1000),
            },
            "block": {"max_txs": self.config.max_block_txs,
                      "timeout_ms": int(self.config.batch_timeout * 1000)},
        }

        self.trace = TraceLog(enabled=self.config.trace)
        self.bus = Bus(self.sched, random.Random(master.randrange(2**63)),
                       self.trace, self.config.link)
        self.nodes: dict[str, NodeRuntime] = {}
        for node_id in node_ids:
            org = agents[agent_wallets[node_id].active_did]["org"]
            rt = NodeRuntime(self, node_id, org, agent_wallets[node_id],
                             master.randrange(2**63))
            self.nodes[node_id] = rt
            self.bus.register(node_id, rt.on_message, node=True)
        self._client_seeds = random.Random(master.randrange(2**63))
        self.clients: dict[str, BusClient] = {}
        self._planted: list[bytes] = []
        for rt in self.nodes.values():
            rt.start(recover=False)

    # -- lifecycle ------------------------------------------------------------------

    def start(self) -> None:
        if isinstance(self.sched, WallScheduler):
            self.sched.start()

    def stop(self) -> None:
        if isinstance(self.sched, WallScheduler):
            self.sched.stop()

    def node_ids(self) -> list[str]:
        return sorted(self.nodes)

    def make_client(self, name: str, home: str | None = None) -> BusClient:
        if home is None:
            ids = self.node_ids()
            home = ids[len(self.clients) % len(ids)]
        client = BusClient(self, name, home, self._client_seeds.randrange(2**63))
        self.clients[name] = client
        return client

    # -- running ----------------------------------------------------------------------

    def run_for(self, seconds: float) -> None:
        if isinstance(self.sched, WallScheduler):
            time.sleep(seconds)
        else:
            self.sched.run_until(self.sched.now() + seconds)

    def settle(self, timeout: float = 15.0, step: float = 0.25) -> bool:
        """Run until every live node reports the same chain twice in a row.

        Receipts resolve on the submitting node's local commit, so an audit
        taken immediately afterwards can catch the other nodes mid-apply;
        call this first."""
        deadline = self.sched.now() + timeout
        stable = 0
        while self.sched.now() < deadline:
            self.run_for(step)
            live = self.live_nodes()
            digests = {rt.peer.block_stream_digest() for rt in live}
            heights = {rt.peer.height() for rt in live}
            stable = stable + 1 if len(digests) == 1 and len(heights) == 1 else 0
            if stable >= 2:
                return True
        return False

    def call(self, gen, timeout: float = 60.0):
        """Drive a client coroutine to completion (sim: virtual time)."""
        if isinstance(self.sched, WallScheduler):
            return self.sched.post_blocking(lambda: self.sched.spawn(gen), timeout)
        fut = self.sched.spawn(gen)
        return self.sched.run_until_done(fut, deadline=self.sched.now() + timeout)

    # -- faults -----------------------------------------------------------------------

    def kill(self, node_id: str) -> None:
        self.trace.fault(self.sched.now(), "kill", node_id)
        self.nodes[node_id].kill()

    def restart(self, node_id: str) -> None:
        self.trace.fault(self.sched.now(), "restart", node_id)
        self.nodes[node_id].start(recover=True)

    def partition(self, groups: list[list[str]]) -> None:
        self.trace.fault(self.sched.now(), "partition", json.dumps(groups))
        mapping = {}
        for idx, group in enumerate(groups):
            for node in group:
                mapping[node] = idx
        self.bus.groups = mapping

    def heal(self) -> None:
        self.trace.fault(self.sched.now(), "heal", "")
        self.bus.groups = None

    def inject_corruption(self, target: str, node: str, **params) -> None:
        self.trace.fault(self.sched.now(), "inject_corruption",
                         json.dumps({"target": target, "node": node, **params}))
        rt = self.nodes[node]
        if target == "cas":
            rt.cas_store._corrupt(ContentId.parse(params["cid"]))
        elif target == "private":
            rt.private_store._corrupt(params.get("collection", "deon_private"),
                                      params["key"])
        elif target == "block":
            block = rt.peer.blocks[params["number"]]
            if block.txs:
                sig = block.txs[0].client_signature
                block.txs[0].client_signature = (
                    ("0" if sig[0] != "0" else "1") + sig[1:])
            else:
                block.data_hash = ("0" if block.data_hash[0] != "0" else "1") + \
                    block.data_hash[1:]
        else:
            raise ValueError(f"unknown corruption target {target!r}")

    def plant_secret(self, data: bytes) -> None:
        """Negative control for the leakage detector: writes a known secret
        into the public trace."""
        self._planted.append(data)
        self.trace.messages.append(MessageRecord(
            t_us=int(round(self.sched.now() * 1e6)), src="n1", dst="n2",
            type="raft.append", private=False, dropped=False,
            data=b'{"planted":"' + data.hex().encode() + b'"}'))

    def apply_scenario(self, script: ScenarioScript) -> None:
        handlers = {
            "kill": lambda a: self.kill(a["node"]),
            "restart": lambda a: self.restart(a["node"]),
            "partition": lambda a: self.partition(a["groups"]),
            "heal": lambda a: self.heal(),
            "inject_corruption": lambda a: self.inject_corruption(
                a["target"], a["node"],
                **{k: v for k, v in a.items() if k not in ("t", "kind", "target", "node")}),
        }
        for action in sorted(script.actions, key=lambda a: a["t"]):
            self.sched.call_at(action["t"], lambda a=action: handlers[a["kind"]](a))

    # -- introspection -----------------------------------------------------------------

    def leader_id(self) -> str | None:
        leaders = {rt.orderer.leader_id for rt in self.nodes.values()
                   if rt.alive and rt.orderer is not None and rt.orderer.leader_id}
        return leaders.pop() if len(leaders) == 1 else None

    def live_nodes(self) -> list[NodeRuntime]:
        return [self.nodes[n] for n in self.node_ids() if self.nodes[n].alive]

    def heights(self) -> dict[str, int]:
        return {rt.node_id: rt.peer.height() for rt in self.live_nodes()}

    # -- the audit ----------------------------------------------------------------------

    def audit(self) -> AuditReport:
        checks: dict[str, list[str]] = {
            "chain_equality": [],
            "state_equality": [],
            "ordering_safety": [],
            "chain_verification": [],
            "no_leakage": [],
            "salt_uniqueness": [],
            "membership_consistency": [],
        }
        live = self.live_nodes()

        digests = {rt.node_id: rt.peer.block_stream_digest() for rt in live}
        if len(set(digests.values())) > 1:
            heights = {rt.node_id: rt.peer.height() for rt in live}
            checks["chain_equality"].append(
                f"block streams differ: digests={digests} heights={heights}")

        states = {rt.node_id: rt.peer.state_digest() for rt in live}
        if len(set(states.values())) > 1:
            checks["state_equality"].append(f"state digests differ: {states}")

        entries = {rt.node_id: rt.orderer.committed_entries() for rt in live
                   if rt.orderer is not None}
        ids = sorted(entries)
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                shared = min(len(entries[a]), len(entries[b]))
                if entries[a][:shared] != entries[b][:shared]:
                    checks["ordering_safety"].append(
                        f"{a} and {b} disagree on a committed prefix")

        for rt in live:
            for problem in rt.peer.verify_chain(rt._resolver()):
                checks["chain_verification"].append(f"{rt.node_id}: {problem}")

        checks["no_leakage"] = self._leakage_scan()
        checks["salt_uniqueness"] = self._salt_check()
        checks["membership_consistency"] = self._membership_check()
        return AuditReport(checks=checks)

    def _secret_inventory(self) -> list[tuple[str, bytes]]:
        secrets: list[tuple[str, bytes]] = []
        wallets = [rt.wallet for rt in self.nodes.values()]
        wallets += [c.wallet for c in self.clients.values()]
        for w in wallets:
            for did, key_hex in w.export_secrets()["keys"].items():
                secrets.append((f"signing key {did[:24]}", key_hex.encode()))
        for c in self.clients.values():
            for vc in c.wallet.credentials:
                for attr in vc.attributes:
                    secrets.append(
                        (f"credential salt {vc.subject_did[:24]}/{attr.name}",
                         attr.salt.hex().encode()))
        seen = set()
        for rt in self.nodes.values():
            for collection, key, record in rt.private_store.records():
                if (collection, key) in seen:
                    continue
                seen.add((collection, key))
                secrets.append((f"private salt {key}", record.salt.hex().encode()))
                secrets.append((f"private cid {key}", record.cid.encode()))
        for i, planted in enumerate(self._planted):
            secrets.append((f"planted #{i}", planted.hex().encode()))
        return secrets

    def _leakage_scan(self) -> list[str]:
        problems = []
        secrets = self._secret_inventory()
        # serialized chain copies and journals: no secret may appear at all
        for rt in self.live_nodes():
            blob = b"".join(canonical_json(b.to_dict()) for b in rt.peer.blocks)
            for label, needle in secrets:
                if needle in blob:
                    problems.append(f"{label} appears in {rt.node_id}'s chain")
        if self.config.journal_dir:
            for rt in self.nodes.values():
                if rt.journal is None:
                    continue
                try:
                    with open(rt.journal.path, "rb") as fh:
                        blob = fh.read()
                except FileNotFoundError:
                    continue
                for label, needle in secrets:
                    if needle in blob:
                        problems.append(f"{label} appears in {rt.node_id}'s journal")
        # the public trace: everything except explicit point-to-point channels
        for record in self.trace.messages:
            if record.private:
                continue
            for label, needle in secrets:
                if needle in record.data:
                    problems.append(
                        f"{label} appears on the wire in a {record.type} "
                        f"message {record.src}->{record.dst}")
        return problems[:20]

    def _salt_check(self) -> list[str]:
        problems = []
        by_key: dict[str, set[bytes]] = {}
        for rt in self.nodes.values():
            for collection, key, record in rt.private_store.records():
                by_key.setdefault(key, set()).add(record.salt)
        for key, salts in sorted(by_key.items()):
            if len(salts) != 1:
                problems.append(f"nodes hold different salts for {key!r}")
        all_salts = [(k, s) for k, salts in sorted(by_key.items()) for s in salts]
        seen: dict[bytes, str] = {}
        for key, salt in all_salts:
            if salt in seen and seen[salt] != key:
                problems.append(f"salt reused across {seen[salt]!r} and {key!r}")
            seen[salt] = key
        return problems

    def _membership_check(self) -> list[str]:
        problems = []
        live = self.live_nodes()
        if not live:
            return problems
        committed_valid: dict[str, str] = {}
        for block in live[0].peer.blocks:
            for tx, flag in zip(block.txs, block.flags):
                if flag == "valid":
                    committed_valid[tx.tx_id] = tx.client_did
        for rt in live:
            if rt.agent is None:
                continue
            # a rejection is only a finding if the node never accepted that
            # transactor afterwards (present-again retries are legitimate)
            accepted_later: set[tuple[str, str]] = {
                (tx_ref, did) for tx_ref, did, ok, _ in rt.agent.decision_log if ok}
            for tx_ref, did, accepted, reason in rt.agent.decision_log:
                if not accepted and (tx_ref, did) not in accepted_later \
                        and committed_valid.get(tx_ref) == did:
                    problems.append(
                        f"{rt.node_id} rejected {did[:24]} for committed tx "
                        f"{tx_ref[:16]} ({reason})")
        return problems
