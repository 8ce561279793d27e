"""Exception hierarchy shared across the package."""


class TransepError(Exception):
    """Base class for all structured errors raised by this package."""


class UsageError(TransepError, ValueError):
    """An operation was called with arguments outside its contract."""


class ConfigError(TransepError, ValueError):
    """A configuration value or file is invalid."""


class FormatError(TransepError, ValueError):
    """A serialized artifact (corpus, checkpoint, report) is malformed."""


class DecodeError(TransepError, RuntimeError):
    """Beam search reached an unrecoverable state (e.g. total score collapse)."""


class TrainingError(TransepError, RuntimeError):
    """Training produced a non-finite loss or gradient."""


class InfeasibleAlignmentError(TransepError, ValueError):
    """The label sequence admits no alignment (more labels than frames)."""
