"""3P-SPIDER: perturbed, preconditioned, proximal SPIDER for composite finite sums."""
from .exceptions import (CapabilityError, ConfigError, NumericalError, OracleError,
                         ProxConvergenceError, SpiderError)
from .prox import (Callback, ConstantSPD, EllipsoidIndicator, GenericProx, Identity,
                   Preconditioner, Regularizer, Zero, prox_fixed_point_residual,
                   weighted_prox)
from .oracles import (GradientOracle, LinearOracle, LipschitzData, MinibatchSampler,
                      ZeroNoise, estimate_cv, eta_error, mean_field, sample_minibatch,
                      stream)
from .core import (MSchedule, RunConfig, Trajectory, control_variate_telescoping_check,
                   counters_closed_form, draw_stop_time, gamma_star, plan_complexity,
                   run_3p_spider, theorem1_rhs)
from .baselines import OnlineConfig, run_full_prox_gradient, run_prox_online_em

__version__ = "0.1.0"
