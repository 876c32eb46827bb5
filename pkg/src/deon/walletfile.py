"""Encrypted wallet files: signing keys and credentials at rest.

The cleartext is the wallet's canonical-JSON secret export; it is sealed with
AES-GCM under a scrypt-derived key and written with owner-only permissions.
Nothing here ever sends key material anywhere — the file is the only place a
user's private keys persist.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.scrypt import Scrypt

from .canonical import canonical_json
from .errors import BadRequestError, IdentityError
from .identity import Wallet

# fixed KDF cost: interactive-login strength, fast enough for tests
SCRYPT_N = 2**14
SCRYPT_R = 8
SCRYPT_P = 1
_FORMAT = 1


def _derive(passphrase: str, salt: bytes) -> bytes:
    kdf = Scrypt(salt=salt, length=32, n=SCRYPT_N, r=SCRYPT_R, p=SCRYPT_P)
    return kdf.derive(passphrase.encode())


def save_wallet(wallet: Wallet, path: str | Path, passphrase: str) -> None:
    path = Path(path)
    salt = os.urandom(16)
    nonce = os.urandom(12)
    key = _derive(passphrase, salt)
    sealed = AESGCM(key).encrypt(nonce, canonical_json(wallet.export_secrets()),
                                 None)
    doc = {
        "format": _FORMAT,
        "kdf": {"name": "scrypt", "n": SCRYPT_N, "r": SCRYPT_R, "p": SCRYPT_P,
                "salt": salt.hex()},
        "cipher": "aes-256-gcm",
        "nonce": nonce.hex(),
        "sealed": sealed.hex(),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    # owner-only before any secret byte lands on disk
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    try:
        os.write(fd, canonical_json(doc))
    finally:
        os.close(fd)
    os.chmod(path, 0o600)


def load_wallet(path: str | Path, passphrase: str) -> Wallet:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise BadRequestError(f"no wallet file at {path}") from None
    except (OSError, ValueError) as exc:
        raise BadRequestError(f"unreadable wallet file {path}: {exc}") from None
    if doc.get("format") != _FORMAT or doc.get("kdf", {}).get("name") != "scrypt":
        raise BadRequestError(f"{path} is not a wallet file this tool understands")
    kdf = doc["kdf"]
    kdf_key = Scrypt(salt=bytes.fromhex(kdf["salt"]), length=32,
                     n=kdf["n"], r=kdf["r"], p=kdf["p"]).derive(passphrase.encode())
    try:
        clear = AESGCM(kdf_key).decrypt(bytes.fromhex(doc["nonce"]),
                                        bytes.fromhex(doc["sealed"]), None)
    except InvalidTag:
        raise IdentityError("wrong passphrase or tampered wallet file") from None
    return Wallet.from_secrets(json.loads(clear.decode()))


def open_or_create(path: str | Path, passphrase: str) -> Wallet:
    """Load an existing wallet, or mint one (with a fresh DID) and save it."""
    path = Path(path)
    if path.exists():
        return load_wallet(path, passphrase)
    wallet = Wallet()
    wallet.create_did()
    save_wallet(wallet, path, passphrase)
    return wallet
