"""Replica predictions of regularized least-squares reconstruction in compressive sensing."""

from .ensemble import EnsembleKind, EnsembleSpec, empirical_r_transform, r_integral, r_transform
from .errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    InvalidNegativeDiscriminant,
    MuRootNotBracketed,
    NoMinimizerError,
    NonFiniteError,
    RsbcsError,
    SizeError,
    StateError,
)
from .quadrature import QuadratureRule, gauss_expect, gauss_expect_2d
from .rs import RsOptions, RsSolution, Status, SystemConfig, rs_distortion, rs_effective_params, rs_iterate, solve_rs
from .rsb import RsbOptions, RsbParams, RsbSolution, mu_residual, rsb_distortion, rsb_effective_params, rsb_iterate, solve_1rsb, solve_mu
from .scalar import ChannelParams, PenaltyKind, PenaltySpec, SourcePrior, prior_average, prox, rsb_minimize, rsb_objective
from .simulate import SimConfig, SimReport, reconstruct, run_sim, sample_system

__version__ = "0.1.0"
