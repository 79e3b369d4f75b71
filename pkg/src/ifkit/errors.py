"""Exception types raised across the package."""


class IFKitError(Exception):
    """Base class for all package errors."""


# distributions
class NegativeMass(IFKitError, ValueError):
    pass


class SumNotOne(IFKitError, ValueError):
    pass


class DuplicateAtom(IFKitError, ValueError):
    pass


class EpsOutOfRange(IFKitError, ValueError):
    pass


class EvalFailure(IFKitError, ArithmeticError):
    pass


class UnknownVariable(IFKitError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ZeroConditioningMass(EvalFailure):
    pass


# functional DSL
class DSLSyntaxError(IFKitError, ValueError):
    def __init__(self, message, line=1, column=1):
        super().__init__(f"{message} (line {line}, column {column})")
        self.message = message
        self.line = line
        self.column = column


class UnboundVariable(DSLSyntaxError):
    pass


class RedeclaredBoundVariable(DSLSyntaxError):
    pass


class UnsupportedNode(IFKitError, TypeError):
    pass


class DivideByZero(EvalFailure):
    pass


# catalog / estimation
class UnknownFunctional(IFKitError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class PositivityViolation(IFKitError, ValueError):
    pass


class QuadratureFailure(IFKitError, ArithmeticError):
    pass


class KTooLarge(IFKitError, ValueError):
    pass


class EmptyData(IFKitError, ValueError):
    pass


class GridEmpty(IFKitError, ValueError):
    pass


class KOutOfRange(IFKitError, ValueError):
    pass


class FoldTooSmallForLearner(IFKitError, ValueError):
    pass


class WeakDenominator(IFKitError, ArithmeticError):
    pass


class TruthUnavailable(IFKitError, ValueError):
    pass


class UnknownDGP(IFKitError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class LearnerSpecError(IFKitError, ValueError):
    pass
