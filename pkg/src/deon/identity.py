"""Decentralized identity: DIDs, salted-commitment credentials, presentations.

A DID is derived from an Ed25519 verkey. Credentials commit to each
attribute with a per-attribute random salt so a holder can later disclose
any subset; undisclosed attributes stay hidden behind their commitments.
DID/verkey bindings and credential definitions live on the shared chain
(``nym/<did>`` and ``creddef/<schema>`` keys) so every node resolves
identities from replicated state rather than a registry service.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .canonical import b58decode, b58encode, canonical_json, sha256
from .errors import BadRequestError, IdentityError, NotFoundError

DID_PREFIX = "did:deon:"

NYM_PREFIX = "nym/"
CREDDEF_PREFIX = "creddef/"

MEMBER_SCHEMA = "deon.member"
MEMBER_ATTRS = ("kind", "name", "node")

ROLE_MEMBER = "member"
ROLE_NODE_AGENT = "node_agent"


# -- keys and DIDs ---------------------------------------------------------------


def new_signing_key(rng: random.Random | None = None) -> Ed25519PrivateKey:
    if rng is None:
        return Ed25519PrivateKey.generate()
    return Ed25519PrivateKey.from_private_bytes(rng.randbytes(32))


def verkey_bytes(key: Ed25519PrivateKey) -> bytes:
    from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

    return key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


def did_from_verkey(verkey: bytes) -> str:
    return DID_PREFIX + b58encode(sha256(verkey)[:16])


def verify_signature(verkey: bytes, signature: bytes, payload: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(verkey).verify(signature, payload)
        return True
    except (InvalidSignature, ValueError):
        return False


@dataclass(frozen=True)
class DidDocument:
    did: str
    verkey: str  # base58 of the raw 32-byte Ed25519 public key
    role: str = ROLE_MEMBER

    def verkey_bytes(self) -> bytes:
        return b58decode(self.verkey)

    def to_dict(self) -> dict:
        return {"did": self.did, "verkey": self.verkey, "role": self.role}

    @classmethod
    def from_dict(cls, d: dict) -> "DidDocument":
        return cls(did=d["did"], verkey=d["verkey"], role=d.get("role", ROLE_MEMBER))


# -- credentials -----------------------------------------------------------------


@dataclass(frozen=True)
class Attribute:
    name: str
    value: str
    salt: bytes  # 32 random bytes, unique per attribute

    def commitment(self) -> bytes:
        return sha256(self.salt + self.name.encode() + self.value.encode())

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "salt": self.salt.hex()}

    @classmethod
    def from_dict(cls, d: dict) -> "Attribute":
        return cls(name=d["name"], value=d["value"], salt=bytes.fromhex(d["salt"]))


def credential_signing_bytes(subject_did: str, schema: str, commitments: list[str]) -> bytes:
    return canonical_json(
        {"subject": subject_did, "schema": schema, "commitments": sorted(commitments)}
    )


@dataclass
class VerifiableCredential:
    issuer_did: str
    subject_did: str
    schema: str
    attributes: list[Attribute]
    signature: str  # hex, issuer key over credential_signing_bytes

    def commitments(self) -> list[str]:
        return sorted(a.commitment().hex() for a in self.attributes)

    def to_dict(self) -> dict:
        # Full form including salts: wallet/issuance only, never on-chain.
        return {
            "issuer": self.issuer_did,
            "subject": self.subject_did,
            "schema": self.schema,
            "attributes": [a.to_dict() for a in self.attributes],
            "signature": self.signature,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VerifiableCredential":
        return cls(
            issuer_did=d["issuer"],
            subject_did=d["subject"],
            schema=d["schema"],
            attributes=[Attribute.from_dict(a) for a in d["attributes"]],
            signature=d["signature"],
        )


def presentation_signing_bytes(commitments: list[str], disclosed: list[dict], nonce: str) -> bytes:
    return canonical_json(
        {"commitments": sorted(commitments), "disclosed": disclosed, "nonce": nonce}
    )


@dataclass
class Presentation:
    """Holder-bound disclosure of a subset of credential attributes.

    ``disclosed`` may be empty: that is a pure possession proof (the issuer
    signature over the commitments plus the holder binding), which is all a
    membership check needs.
    """

    subject_did: str
    issuer_did: str
    schema: str
    commitments: list[str]
    disclosed: list[dict]  # [{name, value, salt}] for each revealed attribute
    nonce: str
    issuer_signature: str
    holder_signature: str

    def to_dict(self) -> dict:
        return {
            "subject": self.subject_did,
            "issuer": self.issuer_did,
            "schema": self.schema,
            "commitments": sorted(self.commitments),
            "disclosed": self.disclosed,
            "nonce": self.nonce,
            "issuer_signature": self.issuer_signature,
            "holder_signature": self.holder_signature,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Presentation":
        return cls(
            subject_did=d["subject"],
            issuer_did=d["issuer"],
            schema=d["schema"],
            commitments=list(d["commitments"]),
            disclosed=list(d["disclosed"]),
            nonce=d["nonce"],
            issuer_signature=d["issuer_signature"],
            holder_signature=d["holder_signature"],
        )


# -- wallet ----------------------------------------------------------------------


class Wallet:
    """Holds private keys and credentials. Keys never leave the wallet;
    callers get signatures, not key material."""

    def __init__(self, rng: random.Random | None = None):
        self._rng = rng
        self._keys: dict[str, Ed25519PrivateKey] = {}
        self.credentials: list[VerifiableCredential] = []
        self.active_did: str | None = None

    def create_did(self) -> DidDocument:
        key = new_signing_key(self._rng)
        vk = verkey_bytes(key)
        did = did_from_verkey(vk)
        self._keys[did] = key
        if self.active_did is None:
            self.active_did = did
        return DidDocument(did=did, verkey=b58encode(vk))

    def dids(self) -> list[str]:
        return sorted(self._keys)

    def verkey(self, did: str) -> bytes:
        return verkey_bytes(self._key(did))

    def sign(self, did: str, payload: bytes) -> bytes:
        return self._key(did).sign(payload)

    def _key(self, did: str) -> Ed25519PrivateKey:
        try:
            return self._keys[did]
        except KeyError:
            raise IdentityError(f"wallet holds no key for {did}") from None

    def store_credential(self, vc: VerifiableCredential) -> None:
        self.credentials.append(vc)

    def find_credential(self, schema: str) -> VerifiableCredential:
        for vc in self.credentials:
            if vc.schema == schema and vc.subject_did in self._keys:
                return vc
        raise NotFoundError(f"no credential for schema {schema!r} in wallet")

    def present(
        self, schema: str, disclose: list[str] | None = None, nonce: str = ""
    ) -> Presentation:
        vc = self.find_credential(schema)
        disclose = disclose or []
        by_name = {a.name: a for a in vc.attributes}
        missing = [n for n in disclose if n not in by_name]
        if missing:
            raise BadRequestError(f"credential lacks attributes {missing}")
        disclosed = [by_name[n].to_dict() for n in sorted(disclose)]
        commitments = vc.commitments()
        holder_sig = self.sign(
            vc.subject_did, presentation_signing_bytes(commitments, disclosed, nonce)
        )
        return Presentation(
            subject_did=vc.subject_did,
            issuer_did=vc.issuer_did,
            schema=vc.schema,
            commitments=commitments,
            disclosed=disclosed,
            nonce=nonce,
            issuer_signature=vc.signature,
            holder_signature=holder_sig.hex(),
        )

    # -- serialization (used by the encrypted wallet file; plaintext never hits disk)

    def export_secrets(self) -> dict:
        from cryptography.hazmat.primitives.serialization import (
            Encoding,
            NoEncryption,
            PrivateFormat,
        )

        keys = {
            did: key.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption()).hex()
            for did, key in self._keys.items()
        }
        return {
            "keys": keys,
            "credentials": [vc.to_dict() for vc in self.credentials],
            "active_did": self.active_did,
        }

    @classmethod
    def from_secrets(cls, d: dict) -> "Wallet":
        w = cls()
        for did, key_hex in d["keys"].items():
            w._keys[did] = Ed25519PrivateKey.from_private_bytes(bytes.fromhex(key_hex))
        w.credentials = [VerifiableCredential.from_dict(v) for v in d["credentials"]]
        w.active_did = d.get("active_did")
        return w


# -- ledger-backed resolution ------------------------------------------------------


def nym_key(did: str) -> str:
    return NYM_PREFIX + did


def creddef_key(schema: str) -> str:
    return CREDDEF_PREFIX + schema


class IdentityView:
    """Resolves DIDs and credential definitions from genesis plus world state.

    ``get_state`` is a callable key -> bytes | None over the node's committed
    world state, so resolution is exactly as fresh as the local chain copy.
    """

    def __init__(self, genesis: dict, get_state):
        self._genesis_agents: dict[str, DidDocument] = {
            did: DidDocument(did=did, verkey=entry["verkey"], role=ROLE_NODE_AGENT)
            for did, entry in genesis.get("agents", {}).items()
        }
        self._genesis_creddefs: dict[str, dict] = dict(genesis.get("cred_defs", {}))
        self._get_state = get_state

    def resolve(self, did: str) -> DidDocument:
        doc = self._genesis_agents.get(did)
        if doc is not None:
            return doc
        raw = self._get_state(nym_key(did))
        if raw is None:
            raise NotFoundError(f"unknown did {did}")
        import json

        return DidDocument.from_dict(json.loads(raw.decode()))

    def is_node_agent(self, did: str) -> bool:
        try:
            return self.resolve(did).role == ROLE_NODE_AGENT
        except NotFoundError:
            return False

    def cred_def(self, schema: str) -> dict:
        cd = self._genesis_creddefs.get(schema)
        if cd is not None:
            return cd
        raw = self._get_state(creddef_key(schema))
        if raw is None:
            raise NotFoundError(f"unknown credential definition {schema!r}")
        import json

        return json.loads(raw.decode())


# -- node agent: issuer + verifier ---------------------------------------------------


class Agent:
    """Per-node cloud agent. Issues membership credentials against a
    replicated credential definition and verifies transactors on behalf of
    the node's endorsement checks."""

    def __init__(self, node_id: str, org_id: str, wallet: Wallet, view: IdentityView):
        self.node_id = node_id
        self.org_id = org_id
        self.wallet = wallet
        self.view = view
        self.did = wallet.active_did
        # nonce -> digest of the accepted presentation (replay guard)
        self._seen_nonces: dict[str, str] = {}
        # cached accepted presentations per (did, schema)
        self._cached: dict[tuple[str, str], Presentation] = {}
        # audit trail: (tx_ref, did, accepted, reason)
        self.decision_log: list[tuple[str, str, bool, str]] = []

    # -- issuance ------------------------------------------------------------------

    def issue_credential(self, subject_did: str, schema: str, values: dict[str, str],
                         rng: random.Random) -> VerifiableCredential:
        cd = self.view.cred_def(schema)
        expected = set(cd["attributes"])
        if set(values) != expected:
            raise BadRequestError(
                f"attribute set {sorted(values)} does not match definition {sorted(expected)}"
            )
        attrs = [
            Attribute(name=n, value=str(values[n]), salt=rng.randbytes(32))
            for n in sorted(values)
        ]
        sig = self.wallet.sign(
            self.did,
            credential_signing_bytes(subject_did, schema, [a.commitment().hex() for a in attrs]),
        )
        return VerifiableCredential(
            issuer_did=self.did,
            subject_did=subject_did,
            schema=schema,
            attributes=attrs,
            signature=sig.hex(),
        )

    # -- verification -----------------------------------------------------------------

    def verify_presentation(self, pres: Presentation, expected_schema: str | None = None,
                            expected_nonce: str | None = None) -> None:
        """Raises IdentityError on any defect; returns silently when valid."""
        if expected_schema is not None and pres.schema != expected_schema:
            raise IdentityError(f"presentation is for schema {pres.schema!r}")
        if expected_nonce is not None and pres.nonce != expected_nonce:
            raise IdentityError("presentation nonce mismatch")
        if not self.view.is_node_agent(pres.issuer_did):
            raise IdentityError(f"issuer {pres.issuer_did} is not a recognized node agent")
        issuer_vk = self.view.resolve(pres.issuer_did).verkey_bytes()
        if not verify_signature(
            issuer_vk,
            bytes.fromhex(pres.issuer_signature),
            credential_signing_bytes(pres.subject_did, pres.schema, pres.commitments),
        ):
            raise IdentityError("issuer signature invalid")
        try:
            subject_vk = self.view.resolve(pres.subject_did).verkey_bytes()
        except NotFoundError:
            raise IdentityError(f"subject {pres.subject_did} not on ledger") from None
        if not verify_signature(
            subject_vk,
            bytes.fromhex(pres.holder_signature),
            presentation_signing_bytes(pres.commitments, pres.disclosed, pres.nonce),
        ):
            raise IdentityError("holder signature invalid")
        try:
            schema_attrs = set(self.view.cred_def(pres.schema)["attributes"])
        except NotFoundError:
            raise IdentityError(f"no credential definition for {pres.schema!r}") from None
        commitments = set(pres.commitments)
        for item in pres.disclosed:
            attr = Attribute.from_dict(item)
            if attr.name not in schema_attrs:
                raise IdentityError(f"disclosed attribute {attr.name!r} not in schema")
            if attr.commitment().hex() not in commitments:
                raise IdentityError(f"disclosed attribute {attr.name!r} fails its commitment")
        # Replay guard: a nonce may only ever carry one presentation.
        digest = sha256(canonical_json(pres.to_dict())).hex()
        prior = self._seen_nonces.get(pres.nonce)
        if prior is not None and prior != digest:
            raise IdentityError("presentation nonce replayed with different contents")
        self._seen_nonces[pres.nonce] = digest

    def verify_transactor(self, did: str, presentation: dict | None,
                          schema: str = MEMBER_SCHEMA, tx_ref: str = "") -> None:
        """Membership gate run before endorsement: the DID must resolve and
        must either be a node agent or hold a credential for ``schema``
        (shown now, or cached from a previous accepted presentation)."""
        try:
            self.view.resolve(did)
        except NotFoundError:
            self._log(tx_ref, did, False, "unknown did")
            raise IdentityError(f"unknown did {did}") from None
        if self.view.is_node_agent(did):
            self._log(tx_ref, did, True, "node agent")
            return
        if presentation is not None:
            pres = Presentation.from_dict(presentation)
            if pres.subject_did != did:
                self._log(tx_ref, did, False, "presentation subject mismatch")
                raise IdentityError("presentation subject does not match transactor")
            try:
                self.verify_presentation(pres, expected_schema=schema)
            except IdentityError as exc:
                self._log(tx_ref, did, False, str(exc))
                raise
            self._cached[(did, schema)] = pres
            self._log(tx_ref, did, True, "presentation verified")
            return
        if (did, schema) in self._cached:
            self._log(tx_ref, did, True, "cached presentation")
            return
        self._log(tx_ref, did, False, "no membership presentation")
        raise IdentityError(f"{did} has no verified membership for {schema!r}")

    def _log(self, tx_ref: str, did: str, accepted: bool, reason: str) -> None:
        self.decision_log.append((tx_ref, did, accepted, reason))
