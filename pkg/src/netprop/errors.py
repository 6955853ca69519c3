"""Exception hierarchy.

``ValidationError`` subclasses flag bad inputs or configurations (CLI exit 1);
``NumericalError`` subclasses flag failures of the numerics themselves (exit 2).
"""


class NetpropError(Exception):
    """Base class for all package errors."""


class ValidationError(NetpropError, ValueError):
    pass


class NumericalError(NetpropError, ArithmeticError):
    pass


class InvalidMatrix(ValidationError):
    pass


class TrimmedObservation(ValidationError):
    """An isolated node (no links) reached an operation that needs L >= 1."""


class DegenerateDesign(ValidationError):
    pass


class InconsistentPrimitives(ValidationError):
    pass


class InvalidCovariance(ValidationError):
    pass


class DegenerateNetwork(ValidationError):
    pass


class PanelFormatError(ValidationError):
    """Malformed panel files; the message names the file and line."""


class UnknownNodeRef(PanelFormatError):
    pass


class SingularMatrix(NumericalError):
    pass


class OverlapViolation(NumericalError):
    pass


class RankDeficientSystem(NumericalError):
    pass


class NoLinkMass(NumericalError):
    pass
