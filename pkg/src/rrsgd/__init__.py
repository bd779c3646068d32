"""Constant step-size SGD with tail averaging and Richardson-Romberg extrapolation."""
__version__ = "0.1.0"

from .chains import (ChainRun, CoupledRun, DivergenceError, StepSizeWarning, rr_combine,
                     run_coupled_rr, run_tail_averaged, sgd_step)
from .config import ConfigError
from .diagnostics import (DecayCurve, RateFit, cost_function_c, coupling_contraction_curve,
                          decomposition_audit, fit_rate_exponent, m_gamma,
                          stationary_moment_estimate)
from .harness import (DegenerateFitError, ExperimentConfig, ExperimentResult, GammaRule,
                      estimate_error_moments, run_experiment, second_order_residual)
from .problems import (CapabilityError, ProblemSpec, gradient, hessian_at_opt, make_problem,
                       noise_cov_at_opt, stoch_gradient, third_derivative_at_opt)
from .rng import NoiseStream, StreamError
from .theory import (TheoryReport, asymptotic_covariance, eta_residual, first_order_bias,
                     lyapunov_solve, psi_quadratic_term, theory_report)

__all__ = [
    "CapabilityError", "ChainRun", "ConfigError", "CoupledRun", "DecayCurve",
    "DegenerateFitError", "DivergenceError", "ExperimentConfig", "ExperimentResult",
    "GammaRule", "NoiseStream", "ProblemSpec", "RateFit", "StepSizeWarning", "StreamError",
    "TheoryReport", "asymptotic_covariance", "cost_function_c", "coupling_contraction_curve",
    "decomposition_audit", "estimate_error_moments", "eta_residual", "first_order_bias",
    "fit_rate_exponent", "gradient", "hessian_at_opt", "lyapunov_solve", "m_gamma",
    "make_problem", "noise_cov_at_opt", "psi_quadratic_term", "rr_combine", "run_coupled_rr",
    "run_experiment", "run_tail_averaged", "second_order_residual", "sgd_step",
    "stationary_moment_estimate", "stoch_gradient", "theory_report",
    "third_derivative_at_opt",
]
