"""Equation-learner networks: fully-connected layers whose hidden units
compute primitive math functions (constants, identity, squares, sines,
exponentials, sigmoids and pairwise products).

Layer ``i`` computes ``g_i = h_{i-1} @ W_i + b_i`` followed by
``h_i = bank(g_i)``, where the bank applies one primitive per hidden unit.
Product units are binary: each consumes a consecutive pair of ``g``
entries at the tail of the layer.  The output layer is affine.
"""

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .autodiff import Parameter, Tensor


@dataclass(frozen=True)
class Activation:
    """One primitive in a bank.  ``scale`` multiplies the argument for
    sine/sigmoid units and the output for product units."""

    kind: str
    scale: float = 1.0

    @property
    def arity(self):
        return 2 if self.kind == "product" else 1


ONE = Activation("one")
IDENTITY = Activation("identity")
SQUARE = Activation("square")
SINE = Activation("sine", 2.0 * math.pi)
EXP = Activation("exp")
SIGMOID = Activation("sigmoid", 20.0)


def product(scale=1.0):
    return Activation("product", scale)


_KINDS = {"one", "identity", "square", "sine", "exp", "sigmoid", "product"}


class ActivationBank:
    """Ordered list of (activation, duplication count) for one hidden layer.

    The order is part of the contract: weight column ``j`` of a layer feeds
    the ``j``-th ``g`` entry, and ``g`` entries map to units in bank order.
    Product entries must come last so that their argument pairs sit at the
    tail of ``g``.
    """

    def __init__(self, entries):
        entries = [(act, int(n)) for act, n in entries]
        if not entries:
            raise ValueError("empty activation bank")
        seen_product = False
        for act, n in entries:
            if act.kind not in _KINDS:
                raise ValueError(f"unknown activation kind {act.kind!r}")
            if n < 1:
                raise ValueError("duplication count must be >= 1")
            if act.kind == "product":
                seen_product = True
            elif seen_product:
                raise ValueError("product entries must come last in the bank")
        self.entries = entries
        self.h_dim = sum(n for _, n in entries)
        self.g_dim = sum(n * act.arity for act, n in entries)
        # contiguous (g-slice, h-slice) per entry, precomputed once
        self._segments = []
        go = ho = 0
        for act, n in entries:
            gw = n * act.arity
            self._segments.append((act, slice(go, go + gw), slice(ho, ho + n)))
            go += gw
            ho += n

    def units(self):
        """Flat list of activations, one per hidden unit, in bank order."""
        out = []
        for act, n in self.entries:
            out.extend([act] * n)
        return out

    def to_json(self):
        return [[act.kind, act.scale, n] for act, n in self.entries]

    @classmethod
    def from_json(cls, data):
        return cls([(Activation(kind, scale), n) for kind, scale, n in data])


def standard_bank():
    """The default bank: [1 x2, id x4, sq x4, sin x2, exp x2, sigmoid x2,
    product x2] (h-dim 18, g-dim 20)."""
    return ActivationBank([
        (ONE, 2), (IDENTITY, 4), (SQUARE, 4), (SINE, 2),
        (EXP, 2), (SIGMOID, 2), (product(1.0), 2),
    ])


def oscillator_bank():
    """Reduced bank used for long recurrent unrolls: [1 x2, id x2, sq,
    sin, exp, product(10) x2] (h-dim 9, g-dim 11)."""
    return ActivationBank([
        (ONE, 2), (IDENTITY, 2), (SQUARE, 1), (SINE, 1),
        (EXP, 1), (product(10.0), 2),
    ])


BANKS = {"standard": standard_bank, "oscillator": oscillator_bank}


def apply_bank(g, bank):
    """Evaluate every unit of ``bank`` on the pre-activations ``g``.

    One fused tape node: cheaper than a node per unit, with the same
    gradients (validated against finite differences).
    """
    G = g.data
    B = G.shape[0]
    H = np.empty((B, bank.h_dim))
    for act, gs, hs in bank._segments:
        gg = G[:, gs]
        k = act.kind
        if k == "one":
            H[:, hs] = 1.0
        elif k == "identity":
            H[:, hs] = gg
        elif k == "square":
            H[:, hs] = gg * gg
        elif k == "sine":
            H[:, hs] = np.sin(act.scale * gg)
        elif k == "exp":
            H[:, hs] = np.exp(np.minimum(gg, ad.EXP_CLAMP))
        elif k == "sigmoid":
            H[:, hs] = expit(act.scale * gg)
        else:  # product
            H[:, hs] = act.scale * gg[:, 0::2] * gg[:, 1::2]

    def bwd(grad_h):
        dG = np.empty_like(G)
        for act, gs, hs in bank._segments:
            gg = G[:, gs]
            gh = grad_h[:, hs]
            k = act.kind
            if k == "one":
                dG[:, gs] = 0.0
            elif k == "identity":
                dG[:, gs] = gh
            elif k == "square":
                dG[:, gs] = 2.0 * gg * gh
            elif k == "sine":
                dG[:, gs] = act.scale * np.cos(act.scale * gg) * gh
            elif k == "exp":
                e = np.exp(np.minimum(gg, ad.EXP_CLAMP))
                dG[:, gs] = np.where(gg <= ad.EXP_CLAMP, e, 0.0) * gh
            elif k == "sigmoid":
                s = expit(act.scale * gg)
                dG[:, gs] = act.scale * s * (1.0 - s) * gh
            else:
                dgs = np.empty_like(gg)
                dgs[:, 0::2] = act.scale * gg[:, 1::2] * gh
                dgs[:, 1::2] = act.scale * gg[:, 0::2] * gh
                dG[:, gs] = dgs
        ad._acc(g, dG)

    return ad._node(H, (g,), bwd)


class EqlNetwork:
    """Weights and banks for one equation-learner network.

    ``weights[i]`` maps the previous layer's ``h`` to layer ``i``'s ``g``;
    the final pair maps ``h_L`` to the output with no activation.
    """

    def __init__(self, banks, input_dim, output_dim):
        if not banks:
            raise ValueError("need at least one hidden layer")
        if input_dim < 1 or output_dim < 1:
            raise ValueError("dimensions must be >= 1")
        self.banks = list(banks)
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.weights = []
        self.biases = []
        prev = input_dim
        for bank in self.banks:
            self.weights.append(Parameter(np.zeros((prev, bank.g_dim))))
            self.biases.append(Parameter(np.zeros(bank.g_dim)))
            prev = bank.h_dim
        self.weights.append(Parameter(np.zeros((prev, output_dim))))
        self.biases.append(Parameter(np.zeros(output_dim)))

    @property
    def n_hidden_layers(self):
        return len(self.banks)

    def parameters(self):
        return self.weights + self.biases

    def forward(self, x, weight_nodes=None):
        """Forward pass on a batch.  ``weight_nodes`` optionally remaps a
        Parameter to a substitute tape node (used for gated weights)."""
        if isinstance(x, np.ndarray):
            x = Tensor(x)
        if x.data.ndim != 2 or x.data.shape[1] != self.input_dim:
            raise ad.ShapeError(
                f"expected (batch, {self.input_dim}), got {x.data.shape}")

        def node(p):
            return weight_nodes[p] if weight_nodes and p in weight_nodes else p

        h = x
        for bank, w, b in zip(self.banks, self.weights, self.biases):
            g = ad.add(ad.matmul(h, node(w)), node(b))
            h = apply_bank(g, bank)
        return ad.add(ad.matmul(h, node(self.weights[-1])), node(self.biases[-1]))

    def weight_values(self):
        """Current weight/bias arrays (copies), one pair per layer."""
        return ([w.data.copy() for w in self.weights],
                [b.data.copy() for b in self.biases])

    def to_json(self):
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "banks": [b.to_json() for b in self.banks],
            "weights": [w.data.tolist() for w in self.weights],
            "biases": [b.data.tolist() for b in self.biases],
            "frozen_weights": [w.frozen_mask.tolist() for w in self.weights],
            "frozen_biases": [b.frozen_mask.tolist() for b in self.biases],
        }

    @classmethod
    def from_json(cls, doc):
        net = cls([ActivationBank.from_json(b) for b in doc["banks"]],
                  doc["input_dim"], doc["output_dim"])
        for p, vals, mask in zip(net.weights, doc["weights"], doc["frozen_weights"]):
            p.data[...] = np.asarray(vals)
            p.frozen_mask[...] = np.asarray(mask, dtype=bool)
        for p, vals, mask in zip(net.biases, doc["biases"], doc["frozen_biases"]):
            p.data[...] = np.asarray(vals)
            p.frozen_mask[...] = np.asarray(mask, dtype=bool)
        return net

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json(json.load(f))


def build_network(bank, input_dim, n_hidden_layers, output_dim, seed=None):
    """Create a network with ``n_hidden_layers`` copies of ``bank`` (or a
    list of per-layer banks) and optionally initialize it."""
    if isinstance(bank, ActivationBank):
        if n_hidden_layers < 1:
            raise ValueError("need at least one hidden layer")
        banks = [bank] * n_hidden_layers
    else:
        banks = list(bank)
        if len(banks) != n_hidden_layers:
            raise ValueError("bank list length must match layer count")
    net = EqlNetwork(banks, input_dim, output_dim)
    if seed is not None:
        init_weights(net, seed)
    return net


def init_weights(net, seed):
    """Draw weights i.i.d. normal with std sqrt(1/fan_in); biases zero."""
    rng = np.random.default_rng(seed)
    for w in net.weights:
        fan_in = w.data.shape[0]
        w.data[...] = rng.normal(0.0, math.sqrt(1.0 / fan_in), w.data.shape)
        w.frozen_mask[...] = False
    for b in net.biases:
        b.data[...] = 0.0
        b.frozen_mask[...] = False


class ReluNetwork:
    """Plain fully-connected ReLU network (baseline head / decoder cell)."""

    def __init__(self, input_dim, hidden, output_dim, seed=None):
        self.input_dim = input_dim
        self.dims = [input_dim] + list(hidden) + [output_dim]
        self.weights = [Parameter(np.zeros((a, b)))
                        for a, b in zip(self.dims[:-1], self.dims[1:])]
        self.biases = [Parameter(np.zeros(b)) for b in self.dims[1:]]
        if seed is not None:
            rng = np.random.default_rng(seed)
            for w in self.weights:
                w.data[...] = rng.normal(0.0, math.sqrt(1.0 / w.data.shape[0]),
                                         w.data.shape)

    def parameters(self):
        return self.weights + self.biases

    def forward(self, x, weight_nodes=None):
        if isinstance(x, np.ndarray):
            x = Tensor(x)
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.add(ad.matmul(h, w), b)
            if i < last:
                h = ad.relu(h)
        return h
