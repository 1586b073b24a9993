"""Synthetic control estimators with differencing and pairwise penalties.

The public names are re-exported lazily so that light entry points (the
bias lab, ``--help``) do not pay for compiling the solver.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    "errors": ("SynthControlError",),
    "panel": ("PanelData", "StudyDesign", "PredictorMatrices", "load_panel", "write_panel",
              "build_predictor_matrices", "first_difference"),
    "simplex_qp": ("InnerObjective", "solve_weights", "objective_value", "project_simplex", "check_simplex"),
    "estimators": ("EstimatorKind", "SearchConfig", "FittedSyntheticControl", "DEFAULT_LAMBDA_GRID",
                   "fit", "fit_fixed", "select_hyperparameters", "build_objective", "compute_alpha",
                   "effect_series", "validation_mspe"),
    "diagnostics": ("BalanceTable", "balance_table", "pairwise_discrepancy"),
    "inference": ("PlaceboStudy", "in_space_placebos", "in_time_placebo", "rank_p_value", "rmspe_ratio"),
    "evaluation": ("EvaluationReport", "leave_one_out_eval", "rmspe", "sparsity"),
    "bias_lab": ("GenerativeSpec", "UnobservedBlock", "generate_panel", "bias_lower_bound",
                 "associativity_gap", "reproduce_examples"),
    "datasets": ("PRESETS", "load_preset", "load_external"),
}
_OWNER = {name: mod for mod, names in _EXPORTS.items() for name in names}

__all__ = sorted(_OWNER) + ["__version__"]


def __getattr__(name):
    mod = _OWNER.get(name)
    if mod is None:
        raise AttributeError(f"module 'synthcontrol' has no attribute {name!r}")
    value = getattr(import_module(f"synthcontrol.{mod}"), name)
    globals()[name] = value
    return value


def __dir__():
    return __all__
