class ForceAggregationError(Exception):
    """Base class for all errors raised by force_aggregator."""


class ReportLogError(ForceAggregationError, ValueError):
    """A report log line could not be parsed.

    Attributes:
        line: 1-based line number in the log (None when not line based)
        field: name of the offending field (None when the whole line is bad)
    """

    def __init__(self, message: str, line: int = None, field: str = None):
        prefix = []
        if line is not None:
            prefix.append(f"line {line}")
        if field is not None:
            prefix.append(f"field '{field}'")
        if prefix:
            message = f"{', '.join(prefix)}: {message}"
        super().__init__(message)
        self.line = line
        self.field = field


class ClassificationError(ForceAggregationError, ValueError):
    """Unknown class id, malformed classification tree or unrelated classes."""


class TemplateError(ForceAggregationError, ValueError):
    """Malformed unit template or unknown unit type."""


class ConfigError(ForceAggregationError, ValueError):
    """Invalid pipeline configuration."""


class ScenarioError(ForceAggregationError, ValueError):
    """Invalid scenario file or scenario values."""


class ScoringError(ForceAggregationError, ValueError):
    """Scoring is impossible, e.g. reports lack ground-truth names."""


class ConflictRangeError(ForceAggregationError, ValueError):
    """A pairwise conflict function returned a value outside [0, 1]."""


class InadmissibleHypothesisError(ForceAggregationError, ValueError):
    """A group of elements cannot be fitted to a template at all."""


class AnnealingError(ForceAggregationError, RuntimeError):
    """The eigen-decomposition used for the critical temperature failed."""


class NonConvergenceError(ForceAggregationError, RuntimeError):
    """Annealing hit its sweep cap before the spins froze.

    Attributes:
        state: the SpinState reached when the cap was hit
        critical_temperature: starting temperature of the failed run, if known
    """

    def __init__(self, message: str, state=None, critical_temperature: float = None):
        super().__init__(message)
        self.state = state
        self.critical_temperature = critical_temperature
