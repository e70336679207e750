"""Error types with stable numeric codes.

Every failure that can cross the wire maps to one subclass of CmsError.
The numeric code is part of the protocol contract: clients branch on it,
never on message text. Codes are append-only; never renumber.
"""

from __future__ import annotations


class CmsError(Exception):
    """Base class for all protocol-visible errors."""

    code = 1000
    http_status = 400

    def __init__(self, message: str = ""):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__

    def to_wire(self) -> dict:
        return {"code": self.code, "error": self.__class__.__name__, "message": self.message}


# -- identity ---------------------------------------------------------------

class UnknownActor(CmsError):
    code = 1001
    http_status = 404


class DuplicateId(CmsError):
    code = 1002
    http_status = 409


class MissingSecondChannelKey(CmsError):
    code = 1003


class NoSuchChannel(CmsError):
    code = 1004


class InvalidSignature(CmsError):
    code = 1005
    http_status = 403


# -- ledger ------------------------------------------------------------------

class SchemaViolation(CmsError):
    code = 1006


class QuorumUnavailable(CmsError):
    code = 1007
    http_status = 503


class NoMajorityPrefix(CmsError):
    code = 1008


# -- workflow ----------------------------------------------------------------

class NoPolicyForTarget(CmsError):
    code = 1010
    http_status = 404


class DuplicateProposalId(CmsError):
    code = 1011
    http_status = 409


class ConcurrentProposal(CmsError):
    code = 1012
    http_status = 409


class NotActiveReviewer(CmsError):
    code = 1013
    http_status = 403


class RoundClosed(CmsError):
    code = 1014
    http_status = 409


class ExcludedDevice(CmsError):
    code = 1015
    http_status = 403


class DuplicateDecision(CmsError):
    code = 1016
    http_status = 409


class IncompleteRound(CmsError):
    code = 1017


class NotAuthorized(CmsError):
    code = 1018
    http_status = 409


class WrongDevice(CmsError):
    code = 1019
    http_status = 403


class NotAdmin(CmsError):
    code = 1020
    http_status = 403


class TerminalState(CmsError):
    code = 1021
    http_status = 409


class EmptyJustification(CmsError):
    code = 1022


class UnknownProposal(CmsError):
    code = 1023
    http_status = 404


# -- policy ------------------------------------------------------------------

class ParseError(CmsError):
    code = 1030


class ValidationError(CmsError):
    code = 1031

    def __init__(self, violations: list[str] | str):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DuplicateSelector(CmsError):
    code = 1032


# -- mediation ---------------------------------------------------------------

class RoundAlreadyOpen(CmsError):
    code = 1040
    http_status = 409


class NotInConflict(CmsError):
    code = 1041
    http_status = 409


class NotBB2Round(CmsError):
    code = 1042
    http_status = 409


class UnknownChallenge(CmsError):
    code = 1043
    http_status = 404


class AlreadyAnswered(CmsError):
    code = 1044
    http_status = 409


class PoolExhausted(CmsError):
    code = 1045


class MissingAttestation(CmsError):
    code = 1046
    http_status = 403


class NotBB5Round(CmsError):
    code = 1047
    http_status = 409


class NoOpenRound(CmsError):
    code = 1048
    http_status = 409


# -- service / clients ---------------------------------------------------------

class AuthRequired(CmsError):
    code = 1050
    http_status = 401


class SessionExpired(CmsError):
    code = 1051
    http_status = 401


class InvalidFilter(CmsError):
    code = 1052


class VerificationFailed(CmsError):
    code = 1060


class ServiceUnreachable(CmsError):
    code = 1061
    http_status = 503


class HookFailed(CmsError):
    code = 1062


class ScriptIncomplete(CmsError):
    code = 1063


ERROR_CODES: dict[int, type[CmsError]] = {
    cls.code: cls
    for cls in list(globals().values())
    if isinstance(cls, type) and issubclass(cls, CmsError)
}


def from_code(code: int, message: str = "") -> CmsError:
    """Rehydrate a wire error into the matching exception type."""
    cls = ERROR_CODES.get(code, CmsError)
    if cls is ValidationError:
        return ValidationError([message] if message else [])
    return cls(message)
