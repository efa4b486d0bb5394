"""Exception hierarchy for the toolkit."""


class PfaError(Exception):
    """Base class for every error raised by scribble_pfa."""


class NonFiniteValue(PfaError, ValueError):
    pass


class DegeneratePixel(PfaError, ValueError):
    pass


class GridMismatch(PfaError, ValueError):
    pass


class ClassSetMismatch(PfaError, ValueError):
    pass


class InvalidAnnotation(PfaError, ValueError):
    """Scribble entries out of range or conflicting at the same pixel."""


class FormatError(PfaError, ValueError):
    pass


class ShapeMismatch(PfaError, ValueError):
    pass


class EmptyAnnotation(PfaError, ValueError):
    pass


class UnlabeledPixel(PfaError, ValueError):
    pass


class InstanceTooLarge(PfaError, ValueError):
    pass


class EmptyEvaluation(PfaError, ValueError):
    pass


class MissingGroundTruth(PfaError, LookupError):
    pass


class MissingPrediction(PfaError, LookupError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__("missing predictions: " + ", ".join(self.missing))


class ConfigError(PfaError, ValueError):
    pass
