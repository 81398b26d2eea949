class GsmpError(Exception):
    """Base class for all errors raised by gsmp_metric."""


class UniquenessViolation(GsmpError):
    """Two clocks reach zero at the same time."""


class AdvanceBeyondExpiry(GsmpError):
    pass


class DegenerateModel(GsmpError):
    """Clock resets keep producing ties; the retry budget ran out."""


class ZenoGuardExceeded(GsmpError):
    pass


class OutOfHorizon(GsmpError):
    pass


class BadDistribution(GsmpError):
    pass


class InfeasibleWitness(GsmpError):
    pass


class WorkLimitExceeded(GsmpError):
    pass


class NotInLattice(GsmpError):
    """Candidate metric assigns < 1 to a pair whose propositions differ."""


class HorizonTooShort(GsmpError):
    pass


class ModelFormatError(GsmpError):
    """Malformed model / trace / expression input; carries line and column."""

    def __init__(self, msg: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        where = f" (line {line}, column {col})" if line is not None else ""
        super().__init__(msg + where)
