from __future__ import annotations


class QueeError(Exception):
    """Base class for every error raised by the routing pipeline."""


class InvalidArgumentError(QueeError, ValueError):
    pass


class ConfigError(QueeError, ValueError):
    pass


class SchemaError(QueeError, ValueError):
    def __init__(self, message: str, record_id: str | None = None) -> None:
        self.record_id = record_id
        if record_id is not None:
            message = f"record {record_id!r}: {message}"
        super().__init__(message)


class DataError(QueeError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class ModelMismatchError(QueeError):
    pass


class StageError(QueeError):
    def __init__(self, stage: str, cause: BaseException) -> None:
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")
