"""Sampling and integration on manifolds defined by equality and inequality constraints."""

from .core import (ConstraintManifold, DegenerateConstraintError, Density, NewtonParams,
                   ProjectionResult, TangentFrame, UNIFORM, as_density, cross_jacobian,
                   gradient_check, project, tangent_frame, tangential_decompose)
from .sampler import (ChainResult, ChainState, Outcome, ProposalParams, StepDiagnostics,
                      initial_state, mcmc_step, run_chain, sample_tangent, tangent_density)
from .integrator import (BallSchedule, IntegralEstimate, IntegrationConfig,
                         IntegrationError, InnermostProjectionFailure, NoValidRadiusError,
                         RatioEstimate, StageFailure, choose_center, estimate_innermost,
                         estimate_ratio, integrate, make_schedule, outer_radius,
                         probe_min_radius)

__version__ = "0.1.0"
