"""Numerical laboratory for transport distances, coupled diffusions and
quantitative stability bounds.

The heavy lifting lives in the C++ core; this package re-exports the
compiled module.
"""

from ._core import (  # noqa: F401
    calibration_seed,
    coupled_cost_curve,
    distance_relations,
    eval_cost,
    fpe_solve,
    log_moment,
    maximal_function,
    mollify,
    osgood_psi,
    ot_entropic,
    ot_exact,
    phi_delta,
    rhs_osgood,
    run_config_text,
    wasserstein,
    zvonkin_pipeline,
)

__version__ = "0.1.0"
