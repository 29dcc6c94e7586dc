"""Particle ensembles with a quantum drift, checked against the Schrodinger equation."""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AllBelowThreshold,
    ConfigInvalid,
    DegenerateAbscissae,
    DimensionUnsupported,
    GridMismatch,
    LinearSolveFailure,
    LoopThroughNode,
    MultivaluedPhase,
    NoConvergence,
    NotNormalized,
    ParticleEscapedGrid,
    StepSizeTooLarge,
    StochQMError,
)
from .fields import ComplexField, Grid, ScalarField, VectorField  # noqa: E402
from .schrodinger import PhysicalParams, Potential  # noqa: E402
