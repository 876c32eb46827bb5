"""Content-addressed storage with a replicated provider index.

Payloads are named by the SHA-256 of their bytes. Each node keeps a local
append-only block store; a ``put`` announces the content id to every peer,
and a ``get`` for content not held locally fetches it from any announced
provider, verifies the digest before returning, then caches and announces
the local copy.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass

from .canonical import sha256_hex
from .errors import BadRequestError, IntegrityError, NotFoundError, StorageFullError
from .runtime import Future

CID_PREFIX = "cid:sha256:"

DEFAULT_MAX_PAYLOAD = 16 * 1024 * 1024


@dataclass(frozen=True)
class ContentId:
    """Digest-derived name of an immutable payload: ``cid:sha256:<64 hex>``."""

    digest_hex: str

    def __post_init__(self):
        if len(self.digest_hex) != 64 or any(c not in "0123456789abcdef" for c in self.digest_hex):
            raise BadRequestError(f"malformed content id digest {self.digest_hex!r}")

    @property
    def text(self) -> str:
        return CID_PREFIX + self.digest_hex

    @classmethod
    def parse(cls, text: str) -> "ContentId":
        if not text.startswith(CID_PREFIX):
            raise BadRequestError(f"malformed content id {text!r}")
        return cls(text[len(CID_PREFIX):])

    def __str__(self) -> str:
        return self.text


def compute_cid(payload: bytes) -> ContentId:
    return ContentId(sha256_hex(payload))


class BlockStore:
    """Node-local mapping ContentId -> immutable payload bytes."""

    def __init__(self, max_payload: int = DEFAULT_MAX_PAYLOAD, capacity_bytes: int | None = None):
        self._data: dict[str, bytes] = {}
        self._bytes = 0
        self.max_payload = max_payload
        self.capacity_bytes = capacity_bytes

    def put(self, payload: bytes) -> ContentId:
        if len(payload) > self.max_payload:
            raise StorageFullError(f"payload of {len(payload)} bytes exceeds max {self.max_payload}")
        cid = compute_cid(payload)
        if cid.text in self._data:
            return cid
        if self.capacity_bytes is not None and self._bytes + len(payload) > self.capacity_bytes:
            raise StorageFullError("block store capacity exhausted")
        self._data[cid.text] = payload
        self._bytes += len(payload)
        return cid

    def get(self, cid: ContentId) -> bytes:
        try:
            return self._data[cid.text]
        except KeyError:
            raise NotFoundError(f"{cid.text} not stored locally") from None

    def __contains__(self, cid: ContentId) -> bool:
        return cid.text in self._data

    def discard(self, cid: ContentId) -> None:
        payload = self._data.pop(cid.text, None)
        if payload is not None:
            self._bytes -= len(payload)

    def __len__(self) -> int:
        return len(self._data)

    def _corrupt(self, cid: ContentId, byte_index: int = 0, mask: int = 0x01) -> None:
        # Fault injection only: flips one bit of a stored payload in place.
        raw = bytearray(self._data[cid.text])
        raw[byte_index % len(raw)] ^= mask
        self._data[cid.text] = bytes(raw)


class CasService:
    """One node's view of the content network.

    ``transport`` is the node's bus facade: ``broadcast(msg)``,
    ``request(dst, msg, timeout) -> Future`` and ``node_id``.
    """

    def __init__(self, transport, store: BlockStore, fetch_timeout: float = 0.5):
        self.transport = transport
        self.store = store
        self.fetch_timeout = fetch_timeout
        self._providers: dict[str, set[str]] = {}

    # -- local + announce ------------------------------------------------------

    def put(self, payload: bytes) -> ContentId:
        cid = self.store.put(payload)
        self._announce(cid)
        return cid

    def _announce(self, cid: ContentId) -> None:
        self._providers.setdefault(cid.text, set()).add(self.transport.node_id)
        self.transport.broadcast(
            {"type": "cas.announce", "cid": cid.text, "provider": self.transport.node_id}
        )

    def providers(self, cid: ContentId) -> set[str]:
        return set(self._providers.get(cid.text, set()))

    # -- network handlers --------------------------------------------------------

    def on_announce(self, msg: dict) -> None:
        self._providers.setdefault(msg["cid"], set()).add(msg["provider"])

    def serve_fetch(self, msg: dict) -> dict:
        cid = ContentId.parse(msg["cid"])
        if cid in self.store:
            return {"found": True, "data": base64.b64encode(self.store.get(cid)).decode()}
        return {"found": False}

    # -- fetch-from-any-provider ---------------------------------------------------

    def get_async(self, cid: ContentId) -> Future:
        return self.transport.sched.spawn(self._get(cid))

    def _get(self, cid: ContentId):
        saw_corruption = False
        if cid in self.store:
            payload = self.store.get(cid)
            if compute_cid(payload) == cid:
                return payload
            # local copy rotted on disk: drop it and re-fetch from the network
            self.store.discard(cid)
            saw_corruption = True
        candidates = sorted(self._providers.get(cid.text, set()) - {self.transport.node_id})
        for provider in candidates:
            try:
                resp = yield self.transport.request(
                    provider, {"type": "cas.fetch", "cid": cid.text}, timeout=self.fetch_timeout
                )
            except Exception:
                continue
            if not resp.get("found"):
                continue
            payload = base64.b64decode(resp["data"])
            if compute_cid(payload) != cid:
                # Corrupt provider: drop its index entry, keep looking.
                self._providers.get(cid.text, set()).discard(provider)
                saw_corruption = True
                continue
            self.store.put(payload)
            self._announce(cid)
            return payload
        if saw_corruption:
            raise IntegrityError(f"all providers returned corrupted bytes for {cid.text}")
        raise NotFoundError(f"no live provider for {cid.text}")
