class LatentForgeError(Exception):
    """Base class for all errors raised by latentforge."""


class InvalidArgument(LatentForgeError, ValueError):
    pass


class FormatError(LatentForgeError, ValueError):
    """A file on disk does not match the expected binary or text layout."""


class NumericError(LatentForgeError, ArithmeticError):
    pass


class ConfigError(LatentForgeError, ValueError):
    pass


class PhaseError(LatentForgeError, RuntimeError):
    """Feature cache used out of order (write after freeze, read before freeze)."""


class InjectionMiss(LatentForgeError, KeyError):
    def __init__(self, t: int, layer: str):
        self.t = t
        self.layer = layer
        super().__init__(f"no cached features for step t={t}, layer={layer!r}")

    def __str__(self) -> str:
        return self.args[0]


class DenoiserError(LatentForgeError, RuntimeError):
    def __init__(self, message: str, t: int):
        self.t = t
        super().__init__(message)


class StageError(LatentForgeError, RuntimeError):
    """Wraps a failure inside one stage of the editing pipeline."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
