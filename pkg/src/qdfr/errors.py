"""Exception hierarchy shared by all modules."""


class QDFRError(Exception):
    """Base class; ``module`` names the subsystem that raised."""

    module = "qdfr"

    def __str__(self):
        return f"[{self.module}] {super().__str__()}"


class ValidationError(QDFRError, ValueError):
    pass


class NumericalError(QDFRError, ArithmeticError):
    pass


# mat
class NotHermitian(ValidationError):
    module = "mat"


class DimensionMismatch(ValidationError):
    module = "mat"


# proto
class ProtocolInvalid(ValidationError):
    module = "proto"


class DegenerateSpectrum(ProtocolInvalid):
    pass


class BetaNonpositive(ProtocolInvalid):
    pass


# oracle
class IndexOutOfRange(ValidationError):
    module = "oracle"


class ZeroBranchProbability(NumericalError):
    module = "oracle"


class UnpairedAtom(NumericalError):
    module = "oracle"


# circuits
class IncompleteProjectors(ValidationError):
    module = "circuits"


# spectral
class InfeasibleGrid(ValidationError):
    module = "spectral"


class GridMismatch(ValidationError):
    module = "spectral"


class GridTooCoarse(ValidationError):
    module = "spectral"


class OverlappingPeaks(NumericalError):
    module = "spectral"


# verify
class DegeneratePoints(NumericalError):
    module = "verify"


class RankDeficient(NumericalError):
    module = "verify"


# cli
class ConfigInvalid(ValidationError):
    module = "cli"


class MissingArtifact(QDFRError):
    module = "cli"
