"""Dinkelbach / WMMSE optimizer for joint precoding and feeder-link matching."""

from .matching import harden_matching, inverse_sqrt_gain
from .solver import (
    Algorithm,
    DinkelbachState,
    InnerResult,
    InnerSolveError,
    SolveReport,
    SystemInstance,
    WarmStart,
    Design,
    dinkelbach,
    refine,
    fixed_gain_inner,
    fixed_matching_baseline,
    jpaf_inner,
    jpfbm_inner,
)
from .subproblems import (
    Coefficients,
    assemble_amplify_subproblem,
    assemble_matching_subproblem,
    assemble_precoding_subproblem,
    coefficients,
)
from .wmmse import WmmseState, update_mse_weights, update_receive_coeffs, wmmse_update

__all__ = [
    "Algorithm",
    "Coefficients",
    "DinkelbachState",
    "InnerResult",
    "InnerSolveError",
    "SolveReport",
    "SystemInstance",
    "WarmStart",
    "WmmseState",
    "assemble_amplify_subproblem",
    "assemble_matching_subproblem",
    "assemble_precoding_subproblem",
    "coefficients",
    "Design",
    "dinkelbach",
    "refine",
    "fixed_gain_inner",
    "fixed_matching_baseline",
    "harden_matching",
    "inverse_sqrt_gain",
    "jpaf_inner",
    "jpfbm_inner",
    "update_mse_weights",
    "update_receive_coeffs",
    "wmmse_update",
]
