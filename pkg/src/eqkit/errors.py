"""Exception hierarchy for eqkit.

Every operational failure raises a named subclass of :class:`EqKitError`,
so callers (and the CLI exit-code table) can dispatch on class.
"""


class EqKitError(Exception):
    """Base class for all eqkit errors."""


# --- core -------------------------------------------------------------

class AlreadyNormalized(EqKitError):
    pass


class NotNormalized(EqKitError):
    pass


class MissingScalars(EqKitError):
    pass


class ZeroElectronDensity(EqKitError):
    pass


class MissingSpecies(EqKitError):
    pass


class DegeneratePsiScale(EqKitError):
    pass


class QuasineutralityViolation(EqKitError):
    pass


# --- gridmap ----------------------------------------------------------

class NonMonotoneInput(EqKitError):
    pass


class SignChangingQ(EqKitError):
    pass


class MissingColumn(EqKitError):
    pass


class ExtrapolationRequired(EqKitError):
    pass


class GridFamilyUnavailable(EqKitError):
    pass


# --- formats ----------------------------------------------------------

class FormatError(EqKitError):
    """Base for malformed or inconsistent data files."""


class MalformedHeader(FormatError):
    pass


class CountMismatch(FormatError):
    pass


class NonFiniteValue(FormatError):
    pass


class ResampleOutOfRange(FormatError):
    pass


class BadTypeCode(FormatError):
    pass


class LengthMismatch(FormatError):
    pass


class HeaderMismatch(FormatError):
    pass


class MissingProfile(FormatError):
    pass


class UnknownBlock(FormatError):
    pass


# --- fluxavg ----------------------------------------------------------

class OpenContour(EqKitError):
    pass


class LevelOutOfRange(EqKitError):
    pass


class DegenerateJacobian(EqKitError):
    pass


class ZeroT(EqKitError):
    pass


class UnknownForm(EqKitError):
    pass


class MissingSource(EqKitError):
    pass


# --- boundary ---------------------------------------------------------

class OpenFieldLine(EqKitError):
    pass


class MaxStepsExceeded(EqKitError):
    pass


# --- solver -----------------------------------------------------------

class NoConvergence(EqKitError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DegenerateBoundary(EqKitError):
    pass


# --- pipeline ---------------------------------------------------------

class RaggedLists(EqKitError):
    pass


class MissingSourceFile(EqKitError):
    pass


class IllegalSourceForProfile(EqKitError):
    pass


class OrphanImport(EqKitError):
    pass


class SolverFailure(EqKitError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class TargetNotReached(EqKitError):
    def __init__(self, message, achieved=None, target=None):
        super().__init__(message)
        self.achieved = achieved
        self.target = target


class ZeroComputedCurrent(EqKitError):
    pass


class CollisionWithoutForce(EqKitError):
    pass


class EmptyShotDirectory(EqKitError):
    pass


class NoIterationFiles(EqKitError):
    pass


class WorkdirLocked(EqKitError):
    pass
