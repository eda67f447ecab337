"""Exception hierarchy for the whole package."""

from __future__ import annotations


class NeedSenseError(Exception):
    """Base class for every error raised by needsense."""


# --- parsing -------------------------------------------------------------


class ParseError(NeedSenseError):
    """A model reply could not be turned into a typed value; the pipeline may re-ask."""


class NoJsonFound(ParseError):
    def __init__(self, text: str = ""):
        snippet = text.strip().replace("\n", " ")[:80]
        super().__init__(f"no JSON object found in reply: {snippet!r}")
        self.text = text


class SchemaViolation(ParseError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class MalformedMoveValue(ParseError):
    def __init__(self, text: str):
        super().__init__(f"move value must be 'object, destination', got {text!r}")
        self.text = text


# --- prompts -------------------------------------------------------------


class UnknownVariant(NeedSenseError):
    pass


class EmptySolutions(NeedSenseError):
    pass


class ChecksumMismatch(NeedSenseError):
    pass


# --- gateway -------------------------------------------------------------


class GatewayError(NeedSenseError):
    pass


class Timeout(GatewayError):
    pass


class RateLimited(GatewayError):
    pass


class TransportError(GatewayError):
    pass


class FixtureMissing(GatewayError):
    def __init__(self, scenario: object, variant: object):
        super().__init__(f"no replay fixture for scenario={scenario} variant={variant}")
        self.scenario = scenario
        self.variant = variant


# --- pipeline ------------------------------------------------------------


class ExhaustedRepairs(NeedSenseError):
    def __init__(self, attempts: int, last_error: Exception):
        super().__init__(f"gave up after {attempts} attempts: {last_error}")
        self.attempts = attempts
        self.last_error = last_error


class SolutionPlanMismatch(NeedSenseError):
    pass


class QuotaNotMet(NeedSenseError):
    pass


# --- simulator -----------------------------------------------------------


class SimError(NeedSenseError):
    """A primitive could not be executed. ``reason`` is the trace code."""

    reason = "sim_error"


class ObjectNotFound(SimError):
    reason = "object_not_found"

    def __init__(self, name: str):
        super().__init__(f"no object matches {name!r}")
        self.name = name


class ScanFailed(SimError):
    reason = "scan_failed"


class NotAdjacent(SimError):
    reason = "not_adjacent"


class NoApproach(SimError):
    reason = "no_approach"


class GroundPickup(SimError):
    reason = "ground_pickup"


class GripperOccupied(SimError):
    reason = "gripper_occupied"


class NotGraspable(SimError):
    reason = "not_graspable"


class NotUsable(SimError):
    reason = "not_usable"


class HumanContact(SimError):
    reason = "human_contact"


class GraspFailed(SimError):
    reason = "grasp_failed"


class PlaceFailed(SimError):
    reason = "place_failed"


class UseFailed(SimError):
    reason = "use_failed"


class NoSkill(SimError):
    reason = "no_skill"


# --- evaluation ----------------------------------------------------------


class EvalError(NeedSenseError):
    pass


class ProviderError(EvalError):
    pass


class DimensionMismatch(EvalError):
    pass


class InsufficientPoints(EvalError):
    pass


class EmptyCluster(EvalError):
    pass


class EmptySamples(EvalError):
    pass


class OutOfRange(EvalError):
    pass


class MissingCell(EvalError):
    pass


class CorpusSchemaError(EvalError):
    def __init__(self, message: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
