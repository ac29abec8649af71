"""Unbounded hierarchical Gaussian filter (uHGF).

Volatility-parent updates that keep the posterior precision positive
everywhere in parameter space, the classic updates they replace, a
quadrature reference posterior to check both against, a small gHGF
network filter and a simulation harness with a command-line front end.
"""

from .approx import (
    Expansion,
    Gaussian,
    NegativePrecision,
    UpdateDiagnostics,
    blend_weight,
    canonical_mode,
    classic_update,
    expansion_l1,
    expansion_l2,
    lambert_mode,
    moment_match,
    uhgf_update,
)
from .energy import (
    CanonicalParams,
    EnergyComponents,
    energy_components,
    energy_J,
    energy_K,
    grad_J,
    grad_K,
    hess_J,
    hess_K,
    vape_delta,
    weight_w,
)
from .network import (
    CLASSIC,
    UHGF,
    Network,
    NetworkError,
    NodeState,
    Trajectory,
    ValueChild,
    VolatilityChild,
    VolatilityUpdateInput,
    filter_sequence,
    filter_step,
    two_level_network,
    volatility_update_classic,
    volatility_update_multi,
    volatility_update_uhgf,
)
from .oracle import (
    DensityTable,
    QuadratureError,
    QuadratureSpec,
    canonical_posterior,
    kl_divergence,
    normalize_posterior,
    posterior_moments,
)
from .special import lambert_w0, lambert_w0_of_exp, log_sum_exp, softmax, stable_sigmoid

__version__ = "0.1.0"
