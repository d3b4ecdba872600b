"""Polynomial optimal feedback control by adaptive dynamic programming.

Model-based mode explores a known control-affine system; model-free mode
works from recorded trajectories.  Both fit ``u(x) = W Phi_d(x)`` and
``V(x) = c Phi_{d+1}(x)`` by least-squares policy iteration.
"""
from .adpcore import (AdpProblem, AdpResult, NonConvergenceError, PersistentExcitationError,
                      RankDeficiencyWarning, SegmentBatch, SegmentData, adp_iterate, assemble,
                      merge_stride, solve_least_squares)
from .controller import (PolynomialController, eval_control, eval_value, load, save,
                         simulate_closed_loop)
from .modelbased import ModelBasedOptions, solve_care, solve_model_based
from .modelfree import (ModelFreeOptions, Trajectory, TrajectoryLog, load_trajectories,
                        solve_model_free, write_trajectories)
from .polybasis import BasisSpec, basis_size, enumerate_monomials, eval_basis
from .problem import ControlProblem
from .problemfile import load_problem

__version__ = "0.1.0"
