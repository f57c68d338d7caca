"""Exception hierarchy shared by every mixdiff module."""


class MixdiffError(Exception):
    """Base class for all errors raised by mixdiff."""


class DomainError(MixdiffError, ValueError):
    """A time or parameter lies outside the domain of an operation."""


class ShapeError(MixdiffError, ValueError):
    """Array dimensions do not agree."""


class SingularityError(MixdiffError, ZeroDivisionError):
    """Evaluation would divide by a vanishing variance."""


class ValidationError(MixdiffError, ValueError):
    """An object violates one of its declared invariants."""


class SamplerDivergenceError(MixdiffError, FloatingPointError):
    """The reverse-time chain produced a non-finite state."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite sampler state at step {step}")


class TrainingError(MixdiffError, FloatingPointError):
    """The training objective became non-finite."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite loss at training step {step}")


class ConfigError(MixdiffError, ValueError):
    """An experiment configuration failed to parse or validate.

    ``field`` is the dotted path of the offending key (if known) and ``line``
    the 1-based line of the config file it came from.
    """

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(field)
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
