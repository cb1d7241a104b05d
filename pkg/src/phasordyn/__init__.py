"""phasordyn: phasor-domain (RMS) dynamics of the IEEE 39-bus system in its
original, reduced-inertia, and reduced-inertia-with-storage configurations."""

__version__ = "0.1.0"

from .network import build_admittance, solve_power_flow  # noqa: F401
from .simulator import System, Trace, run  # noqa: F401
