"""
Errors raised by the PRISM app

Validation of files and configuration reuses Django's ValidationError so
callers can read ``code``/``params``/``messages`` the usual way. Numerical
failures inside the engine share the same call signature through PrismError.
"""
from django.core.exceptions import ValidationError


def error_text(exc):
    """ Flattens any PRISM or Django validation error into one line """
    if isinstance(exc, ValidationError):
        return '; '.join(exc.messages)
    return str(exc)


class PrismError(Exception):
    """ Runtime failure with a machine-readable code """

    def __init__(self, message, code=None, params=None):
        self.code = code
        self.params = params or {}
        super().__init__(message % self.params if self.params else message)


''' ---------------------------- VALIDATION ---------------------------- '''


class ConfigurationError(ValidationError):
    """ Bad run configuration or infeasible generator settings """


class DatasetFormatError(ValidationError):
    """ Malformed dataset file (carries the offending line) """


class ReferentialIntegrityError(ValidationError):
    """ Events point at node or edge texts that do not exist """


class EmbeddingFormatError(ValidationError):
    """ Embedding table file does not match the EMB1 layout """


class CoverageError(ValidationError):
    """ An embedding source does not cover every id it is asked for """


class CheckpointMismatchError(ValidationError):
    """ Checkpoint tensors do not fit the configured parameter shapes """


''' ----------------------------- RUNTIME ------------------------------ '''


class DimensionError(PrismError):
    """ Tensor shapes do not conform """


class EmptyEvidenceError(PrismError):
    """ Attention requested over a row with no valid position """


class CausalityError(PrismError):
    """ A history position lies at or after the query time """


class SamplingError(PrismError):
    """ Nothing left to sample from """


class NumericDomainError(PrismError):
    """ Value outside the domain a formula is defined on """


class NonFiniteError(PrismError):
    """ NaN or inf reached a loss term or a gradient """


class UndefinedMetricError(PrismError):
    """ Metric needs both classes present """
