"""Small-data NLS scattering on R^2 and recovery of the nonlinearity from Gaussian probes."""

__version__ = "0.1.0"

from .errors import ConvergenceError, DomainError, IllConditionedError, RangeError, SimulationGuardError
from .nonlinearity import Nonlinearity, HTable, polynomial, power_law, saturating, zero, from_spec
from .gaussian import GaussianDatum, spacetime_G_direct, spacetime_G_exact
from .pairing import Measurement, MeasurementDataset, ProbeSettings, exact_m, measurement_campaign
from .recovery import RecoveredH, PolyFit, deconvolve_windowed, deconvolve_fourier, fit_polynomial

__all__ = [
    "ConvergenceError", "DomainError", "IllConditionedError", "RangeError", "SimulationGuardError",
    "Nonlinearity", "HTable", "polynomial", "power_law", "saturating", "zero", "from_spec",
    "GaussianDatum", "spacetime_G_direct", "spacetime_G_exact",
    "Measurement", "MeasurementDataset", "ProbeSettings", "exact_m", "measurement_campaign",
    "RecoveredH", "PolyFit", "deconvolve_windowed", "deconvolve_fourier", "fit_polynomial",
]
