"""Error taxonomy. Every error carries a stable machine-readable code."""

from __future__ import annotations


class DeonError(Exception):
    """Base class; ``code`` is stable across releases, ``message`` is free text."""

    code = "error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message}


class BadRequestError(DeonError):
    code = "bad_request"


class NotFoundError(DeonError):
    code = "not_found"


class IntegrityError(DeonError):
    """Fetched or stored bytes fail their digest check."""

    code = "integrity"


class TamperError(DeonError):
    """On-chain commitment does not match the private record."""

    code = "tamper"


class IdentityError(DeonError):
    """Transactor or presentation rejected by the identity layer."""

    code = "identity_rejected"


class ChaincodeError(DeonError):
    code = "chaincode_error"


class ChainIntegrityError(DeonError):
    """Block refused: height or previous-hash mismatch."""

    code = "chain_integrity"


class UnavailableError(DeonError):
    """Retryable: no leader, no quorum, or peer unreachable."""

    code = "unavailable"


class CommitTimeoutError(DeonError):
    code = "commit_timeout"


class StorageFullError(DeonError):
    code = "resource_exhausted"


class EndorsementError(DeonError):
    code = "endorsement_failed"


class InternalError(DeonError):
    """A local invariant broke; not the caller's fault."""

    code = "internal"


_BY_CODE = {
    cls.code: cls
    for cls in (
        BadRequestError, NotFoundError, IntegrityError, TamperError,
        IdentityError, ChaincodeError, ChainIntegrityError, UnavailableError,
        CommitTimeoutError, StorageFullError, EndorsementError, InternalError,
    )
}

HTTP_STATUS = {
    "bad_request": 400,
    "identity_rejected": 403,
    "not_found": 404,
    "chaincode_error": 409,
    "endorsement_failed": 409,
    "integrity": 502,
    "tamper": 502,
    "chain_integrity": 500,
    "unavailable": 503,
    "commit_timeout": 504,
    "resource_exhausted": 507,
    "internal": 500,
    "error": 500,
}


def error_from_dict(d: dict) -> DeonError:
    """Rebuild a typed error from its wire form {code, message}."""
    cls = _BY_CODE.get(d.get("code", "error"), DeonError)
    err = cls(d.get("message", ""))
    if cls is DeonError:
        err.code = d.get("code", "error")
    return err
