"""Exception hierarchy shared by all scholar_impact modules"""

from typing import Any, List, Optional


class ScholarImpactError(Exception):
    """Base class for every error raised by this package"""


# Metric and data preconditions

class EmptyCohort(ScholarImpactError, ValueError):
    """A cohort (or citation sample) has no members"""


class DegenerateCohort(ScholarImpactError, ValueError):
    """Every cohort member has zero citations, so the exponential rate is undefined"""


class InvalidCohort(ScholarImpactError, ValueError):
    """A cohort does not match the paper or metric kind it is used with"""


class EmptyInput(ScholarImpactError, ValueError):
    """An evaluation was asked to summarise an empty list"""


class EmptyGroup(ScholarImpactError, ValueError):
    """A journal quartile group has no predictions"""


class TooFewExamples(ScholarImpactError, ValueError):
    """Not enough labeled examples to produce a train/validation/test split"""


class DuplicateExample(ScholarImpactError, ValueError):
    """The same paper_id appears more than once in a dataset"""


class SchemaViolation(ScholarImpactError, ValueError):
    """A dataset record is malformed, has unknown fields or misses required ones"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class AllFailed(ScholarImpactError):
    """No paper in a labeling batch produced a label"""

    def __init__(self, message: str, failures: Optional[List[Any]] = None):
        super().__init__(message)
        self.failures = failures or []


# Prompting

class MissingPlaceholder(ScholarImpactError, ValueError):
    """A prompt template lacks a placeholder or repeats one"""


class ExtrasIncomplete(ScholarImpactError, ValueError):
    """The extras prompt variant was requested but a field is absent"""


class EmptyResponse(ScholarImpactError, ValueError):
    """The chat gateway answered with nothing usable"""


class Unparseable(ScholarImpactError, ValueError):
    """A remote score response carries no numeric token"""


# Regressor

class ShapeMismatch(ScholarImpactError, ValueError):
    """Feature vector and regressor parameters disagree on dimensions"""


class NonFiniteLoss(ScholarImpactError, ArithmeticError):
    """Training diverged"""

    def __init__(self, message: str, epoch: int, step: int):
        super().__init__(f"{message} (epoch {epoch}, step {step})")
        self.epoch = epoch
        self.step = step


class NonDifferentiablePoint(ScholarImpactError, ValueError):
    """Gradient check requested at a kink of a non-smooth loss"""


# Network gateways

class GatewayError(ScholarImpactError):
    """Base class for failures talking to a remote service"""


class RateLimited(GatewayError):
    """The service kept answering 429 after the retry budget was spent"""


class TransportFailure(GatewayError):
    """Connection-level failure or server error after retries"""


class MalformedResponse(GatewayError):
    """The service answered with a payload we cannot interpret"""


class NotFound(GatewayError):
    """The requested paper does not exist upstream"""


class CacheMiss(GatewayError):
    """Offline mode is active and the request is not in the cache"""
