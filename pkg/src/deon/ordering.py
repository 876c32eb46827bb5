"""Crash-fault-tolerant ordering: a compact Raft core plus a batch cutter.

The orderer is a pure state machine — ``tick(now)`` and ``handle(msg, now)``
return the messages to send and the batches newly committed, and never touch
a clock, socket, or thread. That keeps every run exactly replayable: same
seed and same inputs mean the same elections, the same batch boundaries, and
the same delivery order on every node.

Submitted transactions accumulate on the leader and are cut into one log
entry per batch when the batch fills or its timeout lapses. Followers
redirect submissions to the leader they last heard from; batch sequence
numbers (dense from 0, counting only batch entries) let the consumer map
deliveries onto block numbers.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

FOLLOWER = "follower"
CANDIDATE = "candidate"
LEADER = "leader"

SUBMIT_ACK = "ack"
SUBMIT_REDIRECT = "redirect"
SUBMIT_UNAVAILABLE = "unavailable"


@dataclass
class RaftConfig:
    election_timeout_min: float = 0.150
    election_timeout_max: float = 0.300
    heartbeat_interval: float = 0.050
    batch_timeout: float = 0.250
    max_block_txs: int = 50


@dataclass
class LogEntry:
    term: int
    kind: str  # "noop" | "batch"
    txs: list = field(default_factory=list)  # envelope dicts for batch entries


@dataclass
class Effects:
    messages: list = field(default_factory=list)  # (dst, msg dict)
    deliveries: list = field(default_factory=list)  # (batch_seq, term, txs)

    def extend(self, other: "Effects") -> None:
        self.messages.extend(other.messages)
        self.deliveries.extend(other.deliveries)


class RaftOrderer:
    def __init__(self, node_id: str, peers: list[str], rng: random.Random,
                 cfg: RaftConfig | None = None, now: float = 0.0):
        self.node_id = node_id
        self.peers = sorted(p for p in peers if p != node_id)
        self.cluster_size = len(self.peers) + 1
        self.rng = rng
        self.cfg = cfg or RaftConfig()

        self.term = 0
        self.voted_for: str | None = None
        self.role = FOLLOWER
        self.leader_id: str | None = None
        self.log: list[LogEntry] = []
        self.commit_index = -1

        self._votes: set[str] = set()
        self._next_index: dict[str, int] = {}
        self._match_index: dict[str, int] = {}
        self._election_deadline = now + self._election_timeout()
        self._heartbeat_due = now

        self._pending: list[dict] = []
        self._batch_deadline: float | None = None
        self._txids_in_log: set[str] = set()
        self._delivered_txids: set[str] = set()
        self._delivered_upto = -1
        self._batch_seq = 0

    # -- timers ---------------------------------------------------------------

    def _election_timeout(self) -> float:
        return self.rng.uniform(self.cfg.election_timeout_min,
                                self.cfg.election_timeout_max)

    def tick(self, now: float) -> Effects:
        eff = Effects()
        if self.role in (FOLLOWER, CANDIDATE) and now >= self._election_deadline:
            self._start_election(now, eff)
        if self.role == LEADER:
            if self._batch_deadline is not None and now >= self._batch_deadline:
                self._cut_batch(now, eff)
            if now >= self._heartbeat_due:
                self._heartbeat_due = now + self.cfg.heartbeat_interval
                for peer in self.peers:
                    self._send_append(peer, eff)
        return eff

    # -- submission -------------------------------------------------------------

    def submit(self, env: dict, now: float) -> tuple[str, str | None, Effects]:
        eff = Effects()
        if self.role != LEADER:
            if self.leader_id is not None and self.leader_id != self.node_id:
                return SUBMIT_REDIRECT, self.leader_id, eff
            return SUBMIT_UNAVAILABLE, None, eff
        tx_id = env["tx_id"]
        if (tx_id in self._delivered_txids or tx_id in self._txids_in_log
                or any(p["tx_id"] == tx_id for p in self._pending)):
            return SUBMIT_ACK, self.node_id, eff  # idempotent resubmission
        self._pending.append(env)
        if self._batch_deadline is None:
            self._batch_deadline = now + self.cfg.batch_timeout
        if len(self._pending) >= self.cfg.max_block_txs:
            self._cut_batch(now, eff)
        return SUBMIT_ACK, self.node_id, eff

    def _cut_batch(self, now: float, eff: Effects) -> None:
        if not self._pending:
            self._batch_deadline = None
            return
        batch = self._pending[: self.cfg.max_block_txs]
        self._pending = self._pending[self.cfg.max_block_txs:]
        self._append_entry(LogEntry(term=self.term, kind="batch", txs=batch))
        self._batch_deadline = (now + self.cfg.batch_timeout) if self._pending else None
        for peer in self.peers:
            self._send_append(peer, eff)
        self._maybe_advance_commit(eff)  # single-node clusters commit immediately

    def _append_entry(self, entry: LogEntry) -> None:
        self.log.append(entry)
        for tx in entry.txs:
            self._txids_in_log.add(tx["tx_id"])

    # -- message handling ----------------------------------------------------------

    def handle(self, msg: dict, now: float) -> Effects:
        eff = Effects()
        kind = msg["type"]
        if msg["term"] > self.term:
            self._become_follower(msg["term"], now)
        if kind == "raft.request_vote":
            self._on_request_vote(msg, now, eff)
        elif kind == "raft.vote":
            self._on_vote(msg, now, eff)
        elif kind == "raft.append":
            self._on_append(msg, now, eff)
        elif kind == "raft.append_ack":
            self._on_append_ack(msg, eff)
        return eff

    def _become_follower(self, term: int, now: float) -> None:
        if self.role == LEADER:
            # demoted leaders abandon their uncut batch; clients will resubmit
            self._pending = []
            self._batch_deadline = None
        self.term = term
        self.role = FOLLOWER
        self.voted_for = None
        self._votes = set()
        self._election_deadline = now + self._election_timeout()

    def _start_election(self, now: float, eff: Effects) -> None:
        self.term += 1
        self.role = CANDIDATE
        self.voted_for = self.node_id
        self.leader_id = None
        self._votes = {self.node_id}
        self._election_deadline = now + self._election_timeout()
        last_index = len(self.log) - 1
        last_term = self.log[-1].term if self.log else 0
        for peer in self.peers:
            eff.messages.append((peer, {
                "type": "raft.request_vote", "term": self.term, "from": self.node_id,
                "last_log_index": last_index, "last_log_term": last_term,
            }))
        if self._votes_sufficient():
            self._become_leader(now, eff)

    def _on_request_vote(self, msg: dict, now: float, eff: Effects) -> None:
        grant = False
        if msg["term"] == self.term and self.voted_for in (None, msg["from"]):
            last_index = len(self.log) - 1
            last_term = self.log[-1].term if self.log else 0
            candidate_up_to_date = (msg["last_log_term"], msg["last_log_index"]) >= (
                last_term, last_index)
            if candidate_up_to_date:
                grant = True
                self.voted_for = msg["from"]
                self._election_deadline = now + self._election_timeout()
        eff.messages.append((msg["from"], {
            "type": "raft.vote", "term": self.term, "from": self.node_id,
            "granted": grant,
        }))

    def _on_vote(self, msg: dict, now: float, eff: Effects) -> None:
        if self.role != CANDIDATE or msg["term"] != self.term or not msg["granted"]:
            return
        self._votes.add(msg["from"])
        if self._votes_sufficient():
            self._become_leader(now, eff)

    def _votes_sufficient(self) -> bool:
        return len(self._votes) * 2 > self.cluster_size

    def _become_leader(self, now: float, eff: Effects) -> None:
        self.role = LEADER
        self.leader_id = self.node_id
        self._next_index = {p: len(self.log) for p in self.peers}
        self._match_index = {p: -1 for p in self.peers}
        # a no-op entry lets the new leader commit anything left from older terms
        self._append_entry(LogEntry(term=self.term, kind="noop"))
        self._heartbeat_due = now + self.cfg.heartbeat_interval
        for peer in self.peers:
            self._send_append(peer, eff)
        self._maybe_advance_commit(eff)

    def _send_append(self, peer: str, eff: Effects) -> None:
        next_idx = self._next_index[peer]
        prev_index = next_idx - 1
        prev_term = self.log[prev_index].term if prev_index >= 0 else 0
        entries = [
            {"term": e.term, "kind": e.kind, "txs": e.txs}
            for e in self.log[next_idx:]
        ]
        eff.messages.append((peer, {
            "type": "raft.append", "term": self.term, "from": self.node_id,
            "prev_index": prev_index, "prev_term": prev_term,
            "entries": entries, "commit": self.commit_index,
        }))

    def _on_append(self, msg: dict, now: float, eff: Effects) -> None:
        if msg["term"] < self.term:
            eff.messages.append((msg["from"], {
                "type": "raft.append_ack", "term": self.term, "from": self.node_id,
                "ok": False, "match": -1,
            }))
            return
        if self.role != FOLLOWER:
            self._become_follower(msg["term"], now)
        self.leader_id = msg["from"]
        self._election_deadline = now + self._election_timeout()
        prev_index = msg["prev_index"]
        if prev_index >= 0 and (prev_index >= len(self.log)
                                or self.log[prev_index].term != msg["prev_term"]):
            eff.messages.append((msg["from"], {
                "type": "raft.append_ack", "term": self.term, "from": self.node_id,
                "ok": False, "match": -1,
            }))
            return
        index = prev_index
        for raw in msg["entries"]:
            index += 1
            entry = LogEntry(term=raw["term"], kind=raw["kind"], txs=list(raw["txs"]))
            if index < len(self.log):
                if self.log[index].term == entry.term:
                    continue
                del self.log[index:]
                self._rebuild_txid_index()
            self._append_entry(entry)
        if msg["commit"] > self.commit_index:
            self.commit_index = min(msg["commit"], len(self.log) - 1)
            self._deliver_committed(eff)
        eff.messages.append((msg["from"], {
            "type": "raft.append_ack", "term": self.term, "from": self.node_id,
            "ok": True, "match": index,
        }))

    def _rebuild_txid_index(self) -> None:
        self._txids_in_log = {
            tx["tx_id"] for entry in self.log for tx in entry.txs
        }

    def _on_append_ack(self, msg: dict, eff: Effects) -> None:
        if self.role != LEADER or msg["term"] != self.term:
            return
        peer = msg["from"]
        if msg["ok"]:
            self._match_index[peer] = max(self._match_index.get(peer, -1), msg["match"])
            self._next_index[peer] = self._match_index[peer] + 1
            self._maybe_advance_commit(eff)
        else:
            self._next_index[peer] = max(0, self._next_index.get(peer, 1) - 1)
            self._send_append(peer, eff)

    def _maybe_advance_commit(self, eff: Effects) -> None:
        for idx in range(self.commit_index + 1, len(self.log)):
            if self.log[idx].term != self.term:
                continue  # only entries from the current term commit by counting
            replicated = 1 + sum(
                1 for p in self.peers if self._match_index.get(p, -1) >= idx)
            if replicated * 2 > self.cluster_size:
                self.commit_index = idx
        self._deliver_committed(eff)

    def _deliver_committed(self, eff: Effects) -> None:
        while self._delivered_upto < self.commit_index:
            self._delivered_upto += 1
            entry = self.log[self._delivered_upto]
            if entry.kind == "batch":
                eff.deliveries.append((self._batch_seq, entry.term, list(entry.txs)))
                self._batch_seq += 1
                for tx in entry.txs:
                    self._delivered_txids.add(tx["tx_id"])

    # -- introspection ----------------------------------------------------------------

    def committed_entries(self) -> list[tuple[int, str, tuple[str, ...]]]:
        """(term, kind, tx_ids) for every committed log position — the safety
        audit compares these across nodes."""
        return [
            (e.term, e.kind, tuple(tx["tx_id"] for tx in e.txs))
            for e in self.log[: self.commit_index + 1]
        ]

    def status(self) -> dict:
        return {
            "role": self.role,
            "term": self.term,
            "leader": self.leader_id,
            "log_length": len(self.log),
            "commit_index": self.commit_index,
            "pending": len(self._pending),
        }
