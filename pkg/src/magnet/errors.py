"""Exception hierarchy. CLI exit codes are keyed off the two base classes."""


class MagnetError(Exception):
    code = "MAGNET"


class InputError(MagnetError, ValueError):
    """Malformed input: bad dimensions, bad flags, bad files."""

    code = "INPUT"


class NumericalError(MagnetError, ArithmeticError):
    """Computation ran but the math broke down (rank loss, degenerate EM...)."""

    code = "NUMERIC"


class RankDeficientError(NumericalError):
    code = "RANK_DEFICIENT"


class NotOnManifoldError(NumericalError):
    code = "NOT_ON_MANIFOLD"


class FoldingError(NumericalError):
    code = "FOLDING"


class AcceptanceError(NumericalError):
    code = "LOW_ACCEPTANCE"


class DegenerateFitError(NumericalError):
    code = "EM_DEGENERATE"


class ModelFileError(InputError):
    code = "MODEL_FILE"
