"""Exception types shared across the toolkit."""

from __future__ import annotations


class SynthdetError(Exception):
    """Base class for all toolkit errors."""


class SchemaError(SynthdetError):
    """A manifest or wire payload does not match its schema.

    Carries the path of the offending field so callers can report it.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class TaxonomyError(SynthdetError):
    """A class id or class name cannot be resolved against the taxonomy."""


class DatasetValidationError(SynthdetError):
    """A dataset violates one or more invariants.

    The full :class:`~synthdet.datamodel.ValidationReport` is attached as
    ``report``.
    """

    def __init__(self, report):
        self.report = report
        lines = "; ".join(str(issue) for issue in report.issues[:5])
        more = "" if len(report.issues) <= 5 else f" (+{len(report.issues) - 5} more)"
        super().__init__(f"dataset validation failed: {lines}{more}")


class TemplateError(SynthdetError):
    """A prompt template is malformed or a placeholder was left unbound."""


class BackendError(SynthdetError):
    """A backend call failed at the transport or protocol level."""


class BackendResponseError(BackendError):
    """A backend returned a payload that does not satisfy its contract."""


class ShortfallError(SynthdetError):
    """A backend produced fewer items than requested.

    ``partial`` holds whatever was produced; ``failed_indices`` the request
    indices that never completed (empty when the backend simply returned a
    short list).
    """

    def __init__(self, message: str, produced: int, requested: int,
                 partial=None, failed_indices=()):
        self.produced = produced
        self.requested = requested
        self.partial = partial
        self.failed_indices = list(failed_indices)
        super().__init__(f"{message}: got {produced} of {requested}")


class RegimeMismatchError(SynthdetError):
    """Training-pair count does not match the requested data regime."""


class RegistryError(SynthdetError):
    """A required adapter is missing from the registry."""


class LineageError(SynthdetError):
    """A generated record references guidance that cannot be resolved."""


class CoverageError(SynthdetError):
    """Assembled batches do not cover every class in the taxonomy."""


class InsufficiencyError(SynthdetError):
    """A class has fewer records than a subset selection requires."""


class ConfigError(SynthdetError):
    """Pipeline configuration is invalid; ``field`` is the key path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config {field}: {message}")


class DependencyError(SynthdetError):
    """A stage input is missing; ``required_stage`` must run first."""

    def __init__(self, message: str, required_stage: str):
        self.required_stage = required_stage
        super().__init__(f"{message} (run '{required_stage}' first)")
