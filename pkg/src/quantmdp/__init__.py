"""Finite-model approximations of continuous-state controlled Markov models.

Uniform grid quantizers with an overflow bin, finite-model construction and
dynamic programming, quantized Q-learning, error bounds and reference
benchmarks.
"""
from .errors import (CertificateError, ConfigError, ConvergenceError, DegenerateRegionError,
                     EvaluationError, InputError, OracleUnstableError, QuantMdpError,
                     ResourceError)
from .mdp import (Box, ConstantPolicy, ContinuousMdp, FunctionPolicy, LyapunovCertificate,
                  MinorizationCertificate, OutsideBox, StationaryPolicy, TablePolicy, Trajectory,
                  UniformPolicy, default_policy_set, simulate, verify_drift)
from .quantizer import (DiracAtRepresentative, Empirical, GridQuantizer, UniformInBin,
                        build_uniform, loss, loss_batch, make_weighting,
                        set_median_representatives, size_for_average, size_for_discounted,
                        weighted_median)
from .finite_model import (FiniteMdp, ValueSolution, build_finite_model, discounted_vi,
                           extend_values, quantize_measure, relative_vi)
from .learner import (empirical_model, evaluate_policy, greedy_policy, q_from_model,
                      quantized_q_learning)
from .analysis import (BoundReport, OccupationSample, bound_average_occupation,
                       bound_discounted_occupation, bound_learning, bound_lyapunov_average,
                       bound_lyapunov_discounted, discounted_occupation, expected_loss,
                       invariant_occupation, median_optimality_check, overflow_mass_check,
                       rate_fit)
from .benchmarks import (BENCHMARKS, linear_gaussian_1d, linear_gaussian_2d,
                         linear_gaussian_minorized, make_benchmark, reference_solution)

__version__ = "0.1.0"
