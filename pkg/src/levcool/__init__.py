"""Simulation and analysis of coherent-feedback cooling of a levitated nanoparticle."""

from .errors import *  # noqa: F401,F403
from .model import (  # noqa: F401
    CONST,
    BathParams,
    FeedbackParams,
    ParticleParams,
    SystemParams,
    TrapParams,
)

__version__ = "0.1.0"
