"""Exception hierarchy for the mixture construction engine."""
from typing import Any, Dict, Optional


class MixtureCraftError(Exception):
    """Base class for every failure raised by the engine.

    ``report`` optionally carries the partial construction report so the CLI
    can emit it on stderr when a run fails.
    """

    def __init__(self, message: str = "", report: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.report = report


class UnknownDensity(MixtureCraftError):
    """Density family name not recognized"""


class InvalidParameter(MixtureCraftError, ValueError):
    """Parameter outside its admissible range"""


class DimensionError(MixtureCraftError, ValueError):
    """Point or vector dimension does not match the density"""


class ZeroOnBall(MixtureCraftError):
    """Lattice maximum of a density on a ball is zero"""


class ParseError(MixtureCraftError, ValueError):
    """Malformed mixture document or density syntax"""


class InvalidMixture(MixtureCraftError, ValueError):
    """Mixture violates the simplex or positivity constraints"""


class ContinuityRequired(MixtureCraftError):
    """Operation needs a continuous density"""


class BandwidthNotFound(MixtureCraftError):
    def __init__(self, k: float, last_error: float, report: Optional[Dict[str, Any]] = None):
        super().__init__(
            f"no bandwidth up to k={k:g} reached the target (last measured error {last_error:.6g})",
            report=report,
        )
        self.k = k
        self.last_error = last_error


class QuadratureInconsistency(MixtureCraftError):
    """Cell weights overshoot the simplex"""


class ZeroKernel(MixtureCraftError):
    """Kernel vanishes on every probed ball around the origin"""


class BudgetExceeded(MixtureCraftError):
    def __init__(
        self,
        delta_needed: float,
        components_needed: int,
        max_components: int,
        report: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(
            f"component budget exceeded: delta={delta_needed:.6g} needs "
            f"{components_needed} components (max {max_components})",
            report=report,
        )
        self.delta_needed = delta_needed
        self.components_needed = components_needed
        self.max_components = max_components


class EssBoundRequired(MixtureCraftError):
    """Kernel must be essentially bounded"""


class QuadratureBudget(MixtureCraftError):
    """Integration tolerance not reached within the subdivision budget"""


class ToleranceNotMet(MixtureCraftError):
    """Constructed mixture misses the requested error tolerance"""
