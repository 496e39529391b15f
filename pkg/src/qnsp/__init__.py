"""Numerical laboratory for a regularized quantum Navier-Stokes-Poisson system on the torus."""
from .errors import *  # noqa: F401,F403
from .spectral import Grid, SpectralField
from .model import DopingProfile, ModelParams, State

__all__ = ["Grid", "SpectralField", "DopingProfile", "ModelParams", "State"]
__version__ = "0.1.0"
