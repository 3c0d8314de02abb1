"""Near-field 3D localisation and clock synchronisation with a reconfigurable
intelligent surface (RIS) in an uplink OFDM link.

Main entry points: :func:`coarse_estimate` (tensor + sparse recovery),
:func:`sage_refine` (per-path ML refinement), :func:`locate` (weighted
least squares in the position domain), :func:`ulris_estimate` (tiled
surfaces), :func:`bounds` (Cramer-Rao bounds) and
:func:`optimize_profile` (bound-driven phase design).
"""
from .coarse import coarse_estimate, cpd_omp, lasso_distances
from .config import load_config, preset, save_config
from .crb import BoundReport, bounds, fim_channel, reduced_fim
from .exceptions import (DegenerateGeometryError, IllConditionedError, InfeasibleFrequencyError,
                         NonFiniteObjectiveError, OverRegularizedError, UnidentifiableError)
from .geometry import (ChannelParams, PathParams, RisLayout, ScenarioConfig, fresnel_bounds,
                       noiseless_signal, synthesize_received, true_channel)
from .harness import ExperimentSpec, emit_csv, run_experiment
from .phase_opt import fim_from_covariance, load_profile, optimize_profile, save_profile
from .positioning import PositionSolution, locate
from .refine import SageResult, sage_refine
from .tensor import KroneckerProfile, build_kronecker_profile, rank1_cpd
from .ulris import SubRisPlan, make_plan, ulris_estimate

__version__ = "0.1.0"

__all__ = [
    "BoundReport", "ChannelParams", "DegenerateGeometryError", "ExperimentSpec", "IllConditionedError",
    "InfeasibleFrequencyError", "KroneckerProfile", "NonFiniteObjectiveError", "OverRegularizedError",
    "PathParams", "PositionSolution", "RisLayout", "SageResult", "ScenarioConfig", "SubRisPlan",
    "UnidentifiableError", "bounds", "build_kronecker_profile", "coarse_estimate", "cpd_omp", "emit_csv",
    "fim_channel", "fim_from_covariance", "fresnel_bounds", "lasso_distances", "load_config", "load_profile",
    "locate", "make_plan", "noiseless_signal", "optimize_profile", "preset", "rank1_cpd", "reduced_fim",
    "run_experiment", "sage_refine", "save_config", "save_profile", "synthesize_received", "true_channel",
    "ulris_estimate",
]
