"""Sparsity penalties for equation-learner weights.

Three routes:

* ``lq_penalty`` -- plain element-wise sum of |w|^q.
* ``smoothed_half_penalty`` -- |w|^(1/2) with a piecewise-polynomial
  replacement below a threshold ``a``, removing the gradient singularity
  at zero (for |w| >= a the two agree exactly and the join is C1).
* hard-concrete gates -- a stochastic relaxation of binary per-weight
  masks whose expected number of open gates has a closed form, giving a
  differentiable L0 penalty.

All penalty constructors return scalar tape nodes so they can be added
straight into a training loss.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .autodiff import Parameter


@dataclass(frozen=True)
class SmoothedHalfConfig:
    a: float = 0.01

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("transition threshold must be positive")


def _as_list(params):
    return [params] if isinstance(params, ad.Tensor) else list(params)


def lq_penalty(params, q):
    """sum over all entries of |w|^q.

    The q < 1 gradient is singular at w = 0; entries that are exactly zero
    get gradient 0 (they are normally frozen by then anyway).
    """
    if q <= 0:
        raise ValueError("q must be positive")
    total = None
    for p in _as_list(params):
        absw = np.abs(p.data)

        def bwd(g, p=p, absw=absw):
            with np.errstate(divide="ignore", invalid="ignore"):
                d = q * np.sign(p.data) * absw ** (q - 1.0)
            d = np.where(absw == 0.0, 0.0, d)
            ad._acc(p, float(g) * d)

        node = ad._node(np.asarray((absw ** q).sum()), (p,), bwd)
        total = node if total is None else ad.add(total, node)
    return total


def _smoothed_half_parts(w, a):
    absw = np.abs(w)
    wc = np.minimum(absw, a)  # the polynomial branch is only used below a
    inner = -wc ** 4 / (8.0 * a ** 3) + 3.0 * wc ** 2 / (4.0 * a) + 3.0 * a / 8.0
    return np.where(absw >= a, np.sqrt(absw), np.sqrt(inner))


def smoothed_half_penalty(params, cfg=SmoothedHalfConfig()):
    """Smoothed |w|^(1/2) penalty, summed over all entries.

    Even in w; equals |w|^(1/2) exactly for |w| >= a; below a it follows
    (-w^4/(8a^3) + 3w^2/(4a) + 3a/8)^(1/2), which matches value and first
    derivative at the join.
    """
    a = cfg.a
    total = None
    for p in _as_list(params):
        vals = _smoothed_half_parts(p.data, a)

        def bwd(g, p=p, vals=vals):
            w = p.data
            absw = np.abs(w)
            wc = np.clip(w, -a, a)
            inner_d = -wc ** 3 / (2.0 * a ** 3) + 3.0 * wc / (2.0 * a)
            with np.errstate(divide="ignore", invalid="ignore"):
                d_big = np.sign(w) / (2.0 * np.sqrt(absw))
            d = np.where(absw >= a, d_big, inner_d / (2.0 * vals))
            ad._acc(p, float(g) * d)

        node = ad._node(np.asarray(vals.sum()), (p,), bwd)
        total = node if total is None else ad.add(total, node)
    return total


def smoothed_half_value(w, a=0.01):
    """Plain-number version of the smoothed penalty (no tape)."""
    return float(np.sum(_smoothed_half_parts(np.asarray(w, dtype=float), a)))


@dataclass
class HardConcreteGate:
    """Per-entry stochastic gates for one weight array.

    ``log_alpha`` holds the trainable location of each gate's distribution.
    gamma < 0 < 1 < zeta stretches the underlying concrete variable so the
    clamped sample can land exactly on 0 or 1.
    """

    log_alpha: Parameter
    beta: float = 2.0 / 3.0
    gamma: float = -0.1
    zeta: float = 1.1

    def __post_init__(self):
        if not (self.gamma < 0.0 < 1.0 < self.zeta):
            raise ValueError("need gamma < 0 < 1 < zeta")

    @classmethod
    def for_shape(cls, shape, rng, loc=0.85, scale=0.01, **hyper):
        la = Parameter(rng.normal(loc, scale, shape))
        return cls(la, **hyper)


def hard_concrete_sample(gate, u):
    """Sample gates z in [0, 1] from uniform draws ``u`` (one per entry).

    Differentiable in ``log_alpha``: the gradient is zero wherever the
    clamp is active.
    """
    u = np.asarray(u, dtype=np.float64)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValueError("uniform draws must lie strictly inside (0, 1)")
    la = gate.log_alpha
    logit_u = np.log(u) - np.log1p(-u)
    s = expit((logit_u + la.data) / gate.beta)
    sbar = s * (gate.zeta - gate.gamma) + gate.gamma
    z = np.clip(sbar, 0.0, 1.0)
    interior = (sbar > 0.0) & (sbar < 1.0)

    def bwd(g):
        d = np.where(interior,
                     s * (1.0 - s) * (gate.zeta - gate.gamma) / gate.beta,
                     0.0)
        ad._acc(la, g * d)

    return ad._node(z, (la,), bwd)


def _penalty_shift(gate):
    return gate.beta * math.log(-gate.gamma / gate.zeta)


def hard_concrete_expected_penalty(gates):
    """Closed-form E[number of open gates]: sum of
    sigmoid(log_alpha - beta * log(-gamma/zeta))."""
    total = None
    for gate in _as_list_gates(gates):
        la = gate.log_alpha
        s = expit(la.data - _penalty_shift(gate))

        def bwd(g, la=la, s=s):
            ad._acc(la, float(g) * s * (1.0 - s))

        node = ad._node(np.asarray(s.sum()), (la,), bwd)
        total = node if total is None else ad.add(total, node)
    return total


def hard_concrete_test_gate(gate):
    """Deterministic gate values used at evaluation/extraction time."""
    sbar = expit(gate.log_alpha.data) * (gate.zeta - gate.gamma) + gate.gamma
    return np.clip(sbar, 0.0, 1.0)


def hard_concrete_open_probability(gate):
    """P(z > 0) per gate, the quantity the expected penalty sums."""
    return expit(gate.log_alpha.data - _penalty_shift(gate))


def _as_list_gates(gates):
    return [gates] if isinstance(gates, HardConcreteGate) else list(gates)
