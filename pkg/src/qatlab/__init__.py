"""qatlab: quantization-aware-training gradient estimators, the warp map onto
the straight-through estimator, and a lockstep bisimulation harness that
checks the per-step alignment bounds numerically."""

__version__ = "0.1.0"

from .quantizer import (QuantizerConfig, BoundaryPair, NoRepresentableRange,
                        quantize, boundary_points, representable_range)
from .estimator import (EstimatorSpec, EstimatorConstants, PositivityError,
                        derivative, check_cyclical, lipschitz_constants,
                        dsq_bound)
from .transform import (WarpContext, make_warp_context, integrate_reciprocal,
                        alpha, warp, warp_pwl_bounds)
from .optim import (OptimizerState, Schedule, TrainingDiverged, lr_at,
                    sgd_step, momentum_step, adam_step, remap_state_for_ste)
from .net import NetworkState, GradientBundle, init_weights, forward, backward
from .bisim import (BisimConfig, BisimTrace, ScalarToy, build_pair,
                    lockstep_train, warmup_handoff, warmup_train,
                    alignment_error, mean_alignment_error,
                    quantized_agreement, sgd_bound_slack, run_experiment,
                    run_toy, eta_sweep)

__all__ = [name for name in dir() if not name.startswith("_")]
