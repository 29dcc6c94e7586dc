"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line driver can map
error classes onto distinct process exit statuses.
"""
from __future__ import annotations


class StochQMError(Exception):
    exit_code = 10


class ConfigInvalid(StochQMError):
    exit_code = 2

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


class GridMismatch(StochQMError):
    exit_code = 3


class DimensionUnsupported(StochQMError):
    exit_code = 3


class MultivaluedPhase(StochQMError):
    """Phase unwrapping is path dependent: some closed loop has nonzero winding."""

    exit_code = 4

    def __init__(self, winding: int, loop: list[tuple[int, ...]]):
        self.winding = int(winding)
        self.loop = list(loop)
        super().__init__(
            f"phase is multivalued: winding {self.winding} around a loop of "
            f"{len(self.loop)} points"
        )


class AllBelowThreshold(StochQMError):
    exit_code = 4


class LoopThroughNode(StochQMError):
    exit_code = 4


class LinearSolveFailure(StochQMError):
    exit_code = 5


class NoConvergence(StochQMError):
    exit_code = 5


class StepSizeTooLarge(StochQMError):
    exit_code = 5


class NotNormalized(StochQMError):
    exit_code = 6


class DegenerateAbscissae(StochQMError):
    exit_code = 6


class ParticleEscapedGrid(UserWarning):
    """Emitted (not raised) when particles leave the grid and get clamped."""
