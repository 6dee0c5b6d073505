"""Exception hierarchy shared by every governance module."""

from __future__ import annotations


class GovernanceError(Exception):
    """Base class for all errors raised by iotgov."""


# asset registry
class DuplicateId(GovernanceError):
    pass


class LevelMismatch(GovernanceError):
    pass


class UnknownParent(GovernanceError):
    pass


class UnknownNode(GovernanceError):
    pass


class CycleDetected(GovernanceError):
    pass


class IllegalTransition(GovernanceError):
    pass


class UnknownDevice(GovernanceError):
    pass


class BadCredential(GovernanceError):
    pass


# contracts
class MalformedContract(GovernanceError):
    pass


class UnknownCanonicalConcept(GovernanceError):
    pass


class NonMonotonicVersion(GovernanceError):
    pass


class UnknownContract(GovernanceError):
    pass


class NoEnforcedVersion(GovernanceError):
    pass


# policy
class PolicySyntaxError(GovernanceError):
    """Raised by the DSL parser; carries a 1-based line and column."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        super().__init__(f"{message} (line {line}, column {column})")


class UnknownAttributeRoot(PolicySyntaxError):
    pass


class BadDuration(PolicySyntaxError):
    pass


class ConflictUnresolvable(GovernanceError):
    pass


class DomainTooLarge(GovernanceError):
    pass


# canonical mapping
class UnknownConcept(GovernanceError):
    pass


class NonInvertibleTransform(GovernanceError):
    pass


class UnmappedSignal(GovernanceError):
    pass


class UnitMismatch(GovernanceError):
    pass


class UnsupportedConversion(GovernanceError):
    pass


class UnparseableTimestamp(GovernanceError):
    pass


# boundaries
class IncompatibleContract(GovernanceError):
    def __init__(self, message: str, violations=()):
        self.violations = list(violations)
        super().__init__(message)


class SlaFailure(GovernanceError):
    def __init__(self, message: str, breaches=()):
        self.breaches = list(breaches)
        super().__init__(message)


class UnknownSourceContract(GovernanceError):
    pass


class ResidencyViolation(GovernanceError):
    pass


class MissingPurpose(GovernanceError):
    pass


class UnknownQuarantineId(GovernanceError):
    pass


class IncompleteRecord(GovernanceError):
    pass


class ChainBroken(GovernanceError):
    pass


# quality
class EmptyWindow(GovernanceError):
    pass


class BadWeights(GovernanceError):
    pass


class MissingSla(GovernanceError):
    pass


class UnknownIssueClass(GovernanceError):
    pass


# privacy
class UnknownScope(GovernanceError):
    pass


class AccessDenied(GovernanceError):
    pass


class EmptyInput(GovernanceError):
    pass


class BudgetExhausted(GovernanceError):
    pass


class UnknownJurisdiction(GovernanceError):
    pass


# simulation
class BadSpec(GovernanceError):
    pass


class ScenarioInvalid(GovernanceError):
    pass


class UnknownStream(ScenarioInvalid):
    pass
