"""RMSProp training with the multi-phase schedule used throughout:
one or more regularized phases, optional freezing of small weights at
phase boundaries, and a final unregularized fine-tuning phase.  Phases
may carry a propagation-length curriculum for recurrent decoders.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import sparsity
from .autodiff import Parameter


class DivergenceError(RuntimeError):
    """Training state blew up; the trial is reported failed, not crashed."""


@dataclass
class PhaseConfig:
    learning_rate: float
    lam: float
    iterations: int
    freeze_threshold_after: float = None
    ty_schedule: tuple = None  # ((phase-local start iteration, T_y), ...)

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.lam < 0:
            raise ValueError("regularization weight must be >= 0")

    def ty_at(self, local_it):
        if not self.ty_schedule:
            return None
        ty = self.ty_schedule[0][1]
        for start, value in self.ty_schedule:
            if local_it >= start:
                ty = value
        return ty


@dataclass
class TrainSchedule:
    phases: list
    seed: int = 0
    batch_size: int = None  # None = full batch

    def __post_init__(self):
        if not self.phases:
            raise ValueError("schedule needs at least one phase")


class RmsPropState:
    """Per-parameter accumulator of squared gradients."""

    def __init__(self, rho=0.9, eps=1e-8):
        self.rho = rho
        self.eps = eps
        self._v = {}

    def v_for(self, param):
        v = self._v.get(id(param))
        if v is None:
            v = np.zeros_like(param.data)
            self._v[id(param)] = v
        return v


def rmsprop_step(state, param, grad, lr):
    """v <- rho v + (1-rho) g^2;  w <- w - lr g / (sqrt(v) + eps).

    Frozen entries are left untouched.
    """
    v = state.v_for(param)
    v *= state.rho
    v += (1.0 - state.rho) * grad * grad
    update = lr * grad / (np.sqrt(v) + state.eps)
    if isinstance(param, Parameter):
        update = np.where(param.frozen_mask, 0.0, update)
    param.data -= update


def freeze_small_weights(params, alpha):
    """Set every entry with |w| < alpha to exactly 0 and freeze it."""
    if alpha <= 0:
        raise ValueError("freeze threshold must be positive")
    count = 0
    for p in params:
        mask = np.abs(p.data) < alpha
        count += int(mask.sum() - (mask & p.frozen_mask).sum())
        p.freeze_where(mask)
    return count


# ---------------------------------------------------------------------------
# regularizer adapters
# ---------------------------------------------------------------------------

class NoRegularizer:
    """Baseline: no penalty, no gates."""

    def trainable_params(self):
        return []

    def weight_nodes(self, rng):
        return None

    def penalty(self):
        return None


class SmoothedHalfRegularizer:
    """Smoothed L0.5 penalty over the given parameters."""

    def __init__(self, params, cfg=sparsity.SmoothedHalfConfig()):
        self.params = list(params)
        self.cfg = cfg

    def trainable_params(self):
        return []

    def weight_nodes(self, rng):
        return None

    def penalty(self):
        return sparsity.smoothed_half_penalty(self.params, self.cfg)


class HardConcreteRegularizer:
    """Relaxed-L0 gates: weights are reparameterized as w * z with one
    stochastic gate per entry, sampled once per training iteration; the
    penalty is the closed-form expected number of open gates."""

    def __init__(self, params, rng, **hyper):
        self.params = list(params)
        self.gates = {id(p): sparsity.HardConcreteGate.for_shape(p.data.shape, rng, **hyper)
                      for p in self.params}

    def trainable_params(self):
        return [g.log_alpha for g in self.gates.values()]

    def weight_nodes(self, rng):
        nodes = {}
        for p in self.params:
            gate = self.gates[id(p)]
            u = rng.uniform(np.finfo(float).tiny, 1.0, p.data.shape)
            nodes[p] = ad.mul(p, sparsity.hard_concrete_sample(gate, u))
        return nodes

    def test_weight_nodes(self):
        """Deterministic gates for evaluation-time graphs."""
        return {p: ad.mul(p, ad.constant(sparsity.hard_concrete_test_gate(self.gates[id(p)])))
                for p in self.params}

    def effective_values(self):
        """Deterministic effective weights (w * test gate) as arrays."""
        return {id(p): p.data * sparsity.hard_concrete_test_gate(self.gates[id(p)])
                for p in self.params}

    def penalty(self):
        return sparsity.hard_concrete_expected_penalty(list(self.gates.values()))


def make_regularizer(kind, params, rng=None, **kw):
    if kind in (None, "none"):
        return NoRegularizer()
    if kind == "l05":
        return SmoothedHalfRegularizer(params, **kw)
    if kind == "l0":
        if rng is None:
            raise ValueError("hard-concrete gates need an RNG for init")
        return HardConcreteRegularizer(params, rng, **kw)
    raise ValueError(f"unknown regularizer kind {kind!r}")


# ---------------------------------------------------------------------------
# schedule runner
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    diverged: bool
    iterations_run: int
    trace: np.ndarray          # columns: iteration, mse, penalty, lambda, T_y
    losses: np.ndarray         # scalar loss per iteration, as optimized
    frozen_counts: list = field(default_factory=list)

    TRACE_HEADER = "iteration,mse,penalty,lambda,ty"

    def write_trace_csv(self, path):
        np.savetxt(path, self.trace, delimiter=",",
                   header=self.TRACE_HEADER, comments="",
                   fmt=["%d", "%.17g", "%.17g", "%.17g", "%d"])


def run_schedule(make_mse, params, schedule, regularizer=None,
                 freeze_params=None, trace_every=1):
    """Execute the phases of ``schedule`` in order.

    ``make_mse(rng, ty, weight_nodes)`` rebuilds the data-fit loss graph
    each iteration and returns a scalar tape node.  ``params`` are all
    trainable parameters of the model; the regularizer's own parameters
    (L0 gate locations) are appended automatically.  ``freeze_params``
    are the parameters the phase-boundary freeze applies to (defaults to
    the regularizer's target parameters).

    Returns a TrainResult; a non-finite loss or a divergence guard marks
    the trial failed instead of raising.
    """
    regularizer = regularizer or NoRegularizer()
    all_params = list(params) + list(regularizer.trainable_params())
    if freeze_params is None:
        freeze_params = getattr(regularizer, "params", [])

    rng = np.random.default_rng(schedule.seed)
    opt = RmsPropState()
    trace = []
    losses = []
    frozen_counts = []
    global_it = 0
    diverged = False

    for phase in schedule.phases:
        for local_it in range(phase.iterations):
            ty = phase.ty_at(local_it)
            ad.zero_grad(all_params)
            try:
                wn = regularizer.weight_nodes(rng)
                mse_node = make_mse(rng, ty, wn)
                if phase.lam > 0.0:
                    pen_node = regularizer.penalty()
                    if pen_node is None:
                        raise ValueError("phase has lambda > 0 but the "
                                         "regularizer provides no penalty")
                    loss = ad.add(mse_node, ad.affine(pen_node, phase.lam, 0.0))
                    pen_val = float(pen_node.data)
                else:
                    loss = mse_node
                    pen_val = 0.0
                ad.backward(loss)
            except (ad.NonFiniteError, DivergenceError):
                diverged = True
                break
            for p in all_params:
                if p.grad is not None:
                    rmsprop_step(opt, p, p.grad, phase.learning_rate)
            if global_it % trace_every == 0:
                trace.append((global_it, float(mse_node.data), pen_val,
                              phase.lam, -1 if ty is None else ty))
                losses.append(float(loss.data))
            global_it += 1
        if diverged:
            break
        if phase.freeze_threshold_after is not None:
            frozen_counts.append(
                freeze_small_weights(freeze_params, phase.freeze_threshold_after))

    return TrainResult(
        diverged=diverged,
        iterations_run=global_it,
        trace=np.asarray(trace, dtype=float) if trace else np.zeros((0, 5)),
        losses=np.asarray(losses, dtype=float),
        frozen_counts=frozen_counts,
    )
