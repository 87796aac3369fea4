from __future__ import annotations


class CocaError(Exception):
    """Base class for every error raised by cocaclaw."""


class ConfigError(CocaError, ValueError):
    pass


class UsageError(CocaError, ValueError):
    pass


class CsvParseError(CocaError, ValueError):
    def __init__(self, message: str, *, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(CocaError, ValueError):
    pass


class EmptyBatchError(CocaError, ValueError):
    pass


class DimensionMismatchError(CocaError, ValueError):
    pass


class LengthMismatchError(CocaError, ValueError):
    pass


class UndefinedSimilarityError(CocaError, ValueError):
    pass


class VarianceUndefinedError(CocaError, ValueError):
    pass


class VariantModeError(CocaError, ValueError):
    pass


class ProtocolMismatchError(CocaError, ValueError):
    pass


class InjectionOverlapError(CocaError, ValueError):
    pass


class CenterNotFrozenError(CocaError, RuntimeError):
    pass


class TrainingDivergedError(CocaError, RuntimeError):
    def __init__(self, message: str, *, epoch: int, batch: int):
        super().__init__(f"epoch={epoch} batch={batch}: {message}")
        self.epoch = epoch
        self.batch = batch
