import json
import os
import stat

import pytest

from deon.errors import BadRequestError, IdentityError
from deon.identity import Wallet
from deon.walletfile import load_wallet, open_or_create, save_wallet


def test_round_trip_preserves_keys_and_credentials(tmp_path):
    w = Wallet()
    doc = w.create_did()
    path = tmp_path / "w.wallet"
    save_wallet(w, path, "hunter2")
    back = load_wallet(path, "hunter2")
    assert back.active_did == doc.did
    assert back.verkey(doc.did) == w.verkey(doc.did)
    # a restored wallet signs identically
    assert back.sign(doc.did, b"msg") == w.sign(doc.did, b"msg")


def test_file_is_owner_only_and_opaque(tmp_path):
    w = Wallet()
    doc = w.create_did()
    path = tmp_path / "w.wallet"
    save_wallet(w, path, "pw")
    mode = stat.S_IMODE(os.stat(path).st_mode)
    assert mode == 0o600
    raw = path.read_bytes()
    # no secret material in the clear
    key_hex = w.export_secrets()["keys"][doc.did]
    assert key_hex.encode() not in raw
    assert json.loads(raw)["cipher"] == "aes-256-gcm"


def test_wrong_passphrase_rejected(tmp_path):
    w = Wallet()
    w.create_did()
    path = tmp_path / "w.wallet"
    save_wallet(w, path, "right")
    with pytest.raises(IdentityError):
        load_wallet(path, "wrong")


def test_tampered_file_rejected(tmp_path):
    w = Wallet()
    w.create_did()
    path = tmp_path / "w.wallet"
    save_wallet(w, path, "pw")
    doc = json.loads(path.read_text())
    sealed = bytearray(bytes.fromhex(doc["sealed"]))
    sealed[0] ^= 0x01
    doc["sealed"] = bytes(sealed).hex()
    path.write_text(json.dumps(doc))
    with pytest.raises(IdentityError):
        load_wallet(path, "pw")


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(BadRequestError):
        load_wallet(tmp_path / "absent.wallet", "pw")
    bad = tmp_path / "bad.wallet"
    bad.write_text("not json at all")
    with pytest.raises(BadRequestError):
        load_wallet(bad, "pw")


def test_open_or_create_is_idempotent(tmp_path):
    path = tmp_path / "w.wallet"
    first = open_or_create(path, "pw")
    second = open_or_create(path, "pw")
    assert first.active_did == second.active_did
