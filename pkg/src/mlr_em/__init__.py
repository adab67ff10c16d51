"""EM for symmetric two-component mixed linear regression with unknown weights."""

from mlr_em.errors import (
    DegenerateModelError,
    IllConditionedError,
    NumericalError,
    ValidationError,
)
from mlr_em.model import (
    Dataset,
    GroundTruth,
    MixingImbalance,
    generate_dataset,
    make_ground_truth,
    nu_of_weights,
    trial_seed,
    weights_of_nu,
)
from mlr_em.geometry import (
    AngleDiagnostics,
    PlaneFrame,
    angle_diagnostics,
    cycloid_point,
    distance_to_cycloid,
    plane_frame,
)
from mlr_em.quadrature import QuadratureSpec
from mlr_em.population import (
    GeneralSnrContext,
    deviation_from_limit,
    expect_tanh_ax_x,
    k_star,
    m_general,
    m_noiseless,
    m_norm_bound,
    n_general,
    n_noiseless,
    recurrence_step,
    run_population_noiseless,
    sign_product_expectations,
)
from mlr_em.trajectory import TrajectoryRecord
from mlr_em.emcore import (
    EMState,
    Schedule,
    easy_em_step,
    em_step,
    init_easy_split,
    nll,
    nll_gradient_identity_check,
    noiseless_weights,
    run_em,
    statistical_error_sample,
)

__version__ = "0.1.0"

__all__ = [
    "AngleDiagnostics",
    "Dataset",
    "DegenerateModelError",
    "EMState",
    "GeneralSnrContext",
    "GroundTruth",
    "IllConditionedError",
    "MixingImbalance",
    "NumericalError",
    "PlaneFrame",
    "QuadratureSpec",
    "Schedule",
    "TrajectoryRecord",
    "ValidationError",
    "angle_diagnostics",
    "cycloid_point",
    "deviation_from_limit",
    "distance_to_cycloid",
    "easy_em_step",
    "em_step",
    "expect_tanh_ax_x",
    "generate_dataset",
    "init_easy_split",
    "k_star",
    "m_general",
    "m_noiseless",
    "m_norm_bound",
    "make_ground_truth",
    "n_general",
    "n_noiseless",
    "nll",
    "nll_gradient_identity_check",
    "noiseless_weights",
    "nu_of_weights",
    "plane_frame",
    "recurrence_step",
    "run_em",
    "run_population_noiseless",
    "sign_product_expectations",
    "statistical_error_sample",
    "trial_seed",
    "weights_of_nu",
]
