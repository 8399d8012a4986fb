from __future__ import annotations

from typing import Any


class EverAdaptError(Exception): ...


class DimensionError(EverAdaptError, ValueError): ...


class SizeError(DimensionError): ...


class ParameterError(EverAdaptError, ValueError): ...


class ContractError(EverAdaptError, RuntimeError): ...


class BatchSizeError(EverAdaptError, ValueError): ...


class LifecycleError(EverAdaptError, RuntimeError): ...


class SpecError(EverAdaptError, ValueError): ...


class LabelError(EverAdaptError, ValueError): ...


class SetSizeError(EverAdaptError, ValueError): ...


class DatasetError(EverAdaptError, ValueError): ...


class DataError(EverAdaptError, ValueError): ...


class StateError(EverAdaptError, RuntimeError): ...


class MetricError(EverAdaptError, ZeroDivisionError): ...


class MissingArtifactError(EverAdaptError, FileNotFoundError): ...


class FormatError(EverAdaptError, ValueError):
    """
    Raised when a signal or artifact file cannot be parsed.

    `offset` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message: str, *, offset: int | None = None) -> None:
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(EverAdaptError, ValueError):
    """
    Raised for invalid configuration files or values.

    `errors` holds one `location: message` string per offending field.
    """

    def __init__(self, message: str, *, errors: list[str] | None = None) -> None:
        self.errors: list[str] = errors or []
        if self.errors:
            message = "\n".join([message, *(f"  {error}" for error in self.errors)])
        super().__init__(message)

    @classmethod
    def from_validation_error(cls, exc: Any, *, prefix: str = "") -> ConfigError:
        """Build from a pydantic `ValidationError`, keeping field-level locations."""
        errors = []
        for error in exc.errors():
            location = ".".join(str(part) for part in (*([prefix] if prefix else []), *error["loc"]))
            errors.append(f"{location}: {error['msg']}")
        return cls("Invalid configuration.", errors=errors)
