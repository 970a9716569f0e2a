"""Certified location-scale mixture approximation of probability densities."""
from .analysis import (
    LpNorm,
    Mollified,
    SupNorm,
    SweepTable,
    approximate_identity_curve,
    convergence_sweep,
    convolve,
    convolve_at,
    lp_norm_diff,
    sup_norm_diff_on_grid,
    young_inequality_check,
)
from .constructor import (
    approximate_lp,
    approximate_uniform,
    build_partition,
    certified_bound,
    discretize,
    modulus_of_continuity,
    select_bandwidth,
    truncate,
)
from .densities import DensitySpec, builtin_density, eval_density, ess_sup_on_ball, parse_density
from .mixture import Mixture, MixtureComponent, eval_mixture, parse_mixture, serialize_mixture, shift_mixture
from .schemas import Box, ConstructionOptions, GridSpec

__version__ = "0.1.0"
