class WmlmError(Exception):
    """Base class for user-facing errors (bad input files, bad configs)."""


class FormatError(WmlmError, ValueError):
    """A file does not conform to its documented format."""


class ConfigError(WmlmError, ValueError):
    pass


class SentenceTooLong(WmlmError, ValueError):
    pass


class NonFiniteGradientError(WmlmError, FloatingPointError):
    pass


class TrainingDiverged(WmlmError, FloatingPointError):
    pass
