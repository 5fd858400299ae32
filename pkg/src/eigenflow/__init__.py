"""Principal eigenvalues of linear and HJB elliptic operators: monotone finite
differences, Perron and policy-iteration solvers, certificates and Monte Carlo checks."""

__version__ = "0.1.0"

from .certify import (Certificate, Verdict, cw_lower, cw_upper, gap_check, ground_state_check,
                      minimax_measure, negativity_check)
from .discretize import DiscreteOperator, Grid, apply_nonlinear, assemble, build_grid, select_policy
from .errors import *  # noqa: F401,F403
from .exhaust import ExhaustionResult, lambda_sequence, lyapunov_check
from .expr import Expr, parse_expr
from .hjb import (eigenfunction_at_lambda, perturb_potential, policy_iteration, solve)
from .mc import (MCEstimate, PathConfig, expected_exit_time, feynman_kac_verify,
                 risk_sensitive_estimate, simulate_exit)
from .model import (Box, ControlSet, LyapunovSpec, OperatorSpec, drift_laplacian_spec, isotropic_spec,
                    laplacian_spec, load_problem, load_spec, validate_spec)
from .perron import EigenPair, matrix_cw_bounds, principal_eigenpair
