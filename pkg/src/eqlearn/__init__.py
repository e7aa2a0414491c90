"""eqlearn: neural-network symbolic regression that trains end-to-end.

A small float64 autodiff tape (:mod:`eqlearn.autodiff`) underpins
equation-learner networks (:mod:`eqlearn.network`) whose hidden units are
primitive math functions.  Sparsity penalties (:mod:`eqlearn.sparsity`)
and a multi-phase RMSProp schedule (:mod:`eqlearn.training`) drive the
weights toward readable equations, which :mod:`eqlearn.expressions`
extracts, simplifies and scores.  Convolutional encoders
(:mod:`eqlearn.encoders`) and recurrent decoders (:mod:`eqlearn.dynamics`)
attach the network to images and observed time series;
:mod:`eqlearn.experiments` orchestrates the benchmark suite and the
end-to-end experiments behind the ``eqlearn`` command line.
"""

from .autodiff import (Tensor, Parameter, backward, finite_difference_check,
                       NonFiniteError, ShapeError)
from .network import (Activation, ActivationBank, EqlNetwork, ReluNetwork,
                      build_network, init_weights, standard_bank,
                      oscillator_bank)
from .sparsity import (SmoothedHalfConfig, HardConcreteGate, lq_penalty,
                       smoothed_half_penalty, hard_concrete_sample,
                       hard_concrete_expected_penalty, hard_concrete_test_gate)
from .training import (PhaseConfig, TrainSchedule, RmsPropState, rmsprop_step,
                       freeze_small_weights, run_schedule, DivergenceError)
from .expressions import (Expr, Const, Var, Sum, Prod, Pow, Sin, Exp, Sigmoid,
                          CandidateReport, eval_expr, extract_expression,
                          simplify, complexity, extrapolation_error,
                          select_model, to_infix, expr_to_json, expr_from_json)
from .encoders import (MnistEncoder, DynamicsEncoder, BatchNormHalf,
                       linear_fit, load_idx_images, load_idx_labels)
from .dynamics import (kinematics_step, sho_analytic_step, sho_euler_step,
                       sho_second_order_step, gen_kinematics, gen_sho,
                       PropagatingDecoder, propagate, TimeSeriesDataset)

__version__ = "0.1.0"
