"""Exception hierarchy.

Every error raised by the library derives from :class:`GlateError`. The two
intermediate classes decide the CLI exit code: :class:`ValidationError` maps to
2, :class:`NumericalError` to 3.
"""


class GlateError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ValidationError(GlateError, ValueError):
    exit_code = 2


class NumericalError(GlateError, ArithmeticError):
    exit_code = 3


# regression primitives
class DimensionMismatch(ValidationError):
    pass


class RankDeficient(NumericalError):
    pass


class SingularRestriction(NumericalError):
    pass


class WeakDenominator(NumericalError):
    pass


class ZeroFirstStage(NumericalError):
    pass


class ZeroDenominator(NumericalError):
    pass


# clustering
class TooFewPoints(ValidationError):
    pass


class BadK(ValidationError):
    pass


# clubs / pairs
class EmptyJudge(ValidationError):
    pass


class TooFewClubs(ValidationError):
    pass


class TooFewJudges(ValidationError):
    pass


class EmptySelection(ValidationError):
    pass


# simulation / io
class UnknownPreset(ValidationError):
    pass


class MissingColumn(ValidationError):
    pass


class NonBinaryTreatment(ValidationError):
    pass


class EmptyFile(ValidationError):
    pass


class SingletonJudge(ValidationError):
    pass
