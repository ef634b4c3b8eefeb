"""Multiple-model Bayesian state estimation: Kalman, AMM and IMM filters."""

__version__ = "0.1.0"

from .amm import BankState, FusedEstimate, amm_init, amm_step, fuse, update_mode_probabilities
from .engine import HAVE_COMPILED, run_bank
from .errors import (DegenerateLikelihoods, DimensionMismatch, EmptyInput, ImmkitError,
                     InvalidParameter, NotAProbabilityVector, NotPositiveDefinite, NotStochastic,
                     ParseError, SingularCovariance, SingularInnovationCovariance, ValidationError)
from .imm import MixingWeights, imm_init, imm_step, mix_estimates, mixing_weights, predict_mode_probabilities
from .kalman import Innovation, innovate, log_likelihood, predict, update
from .linalg import log_det_spd, solve_spd, symmetrize
from .metrics import NeesInterval, nees, nees_interval, rmse
from .models import GaussianState, ModelSet, StateSpaceModel, ca_model, cv_model, make_model_set
from .simulation import (MonteCarloReport, RunTrace, Scenario, paper_scenario, run_monte_carlo,
                         run_single, sample_mode_sequence, simulate_trajectory)

__all__ = [name for name in dir() if not name.startswith("_")]
