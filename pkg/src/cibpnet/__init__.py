"""Structure learning for deep sparse belief networks.

Cascading Indian buffet process priors over layered directed graphs,
nonlinear Gaussian belief network densities, and the MCMC machinery to
sample posteriors over structures, parameters, and hidden states.
"""

from cibpnet.prior import (
    CibpSample,
    EdgeMatrix,
    HyperParameters,
    IbpParams,
    WidthTrace,
    drift,
    expected_out_degree,
    ibp_log_prob,
    poisson_rate,
    sample_cibp,
    sample_ibp,
    simulate_width_chain,
    structure_from_text,
    structure_to_text,
)

__version__ = "0.1.0"

__all__ = [
    "CibpSample",
    "EdgeMatrix",
    "HyperParameters",
    "IbpParams",
    "WidthTrace",
    "drift",
    "expected_out_degree",
    "ibp_log_prob",
    "poisson_rate",
    "sample_cibp",
    "sample_ibp",
    "simulate_width_chain",
    "structure_from_text",
    "structure_to_text",
    "__version__",
]
