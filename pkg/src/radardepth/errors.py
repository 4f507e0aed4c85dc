"""Exception hierarchy.

Each error carries a short machine-readable ``category`` and the process exit
code the CLI uses for it.
"""


class RadarDepthError(Exception):
    category = "error"
    exit_code = 1


class ParameterError(RadarDepthError, ValueError):
    category = "parameter"
    exit_code = 2


class InputError(RadarDepthError, ValueError):
    """Inputs are individually valid but mutually inconsistent (shapes, calibration)."""

    category = "input"
    exit_code = 2


class FormatError(RadarDepthError, ValueError):
    category = "format"
    exit_code = 2

    def __init__(self, message, path=None, offset=None):
        self.path = None if path is None else str(path)
        self.offset = offset
        parts = []
        if self.path is not None:
            parts.append(self.path)
        if offset is not None:
            parts.append(f"byte {offset}")
        prefix = ": ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class DegenerateInputError(RadarDepthError, ValueError):
    category = "degenerate"
    exit_code = 3


class EmptyOverlapError(DegenerateInputError):
    category = "empty-overlap"


class AlignmentUnavailableError(DegenerateInputError):
    category = "alignment-unavailable"


class SolverUnavailableError(DegenerateInputError):
    category = "solver-unavailable"


class UndefinedScoreError(DegenerateInputError):
    category = "undefined-score"


class NumericError(RadarDepthError, ArithmeticError):
    category = "numeric"
    exit_code = 3


class NonConvergenceError(RadarDepthError):
    category = "non-convergence"
    exit_code = 4


class UndefinedLossError(DegenerateInputError):
    category = "undefined-loss"


class UndefinedMetricsError(DegenerateInputError):
    category = "undefined-metrics"
