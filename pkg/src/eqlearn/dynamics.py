"""Ground-truth generators and step oracles for the two dynamical
systems (constant-acceleration kinematics and the simple harmonic
oscillator), plus the propagating decoder: a recurrent cell that rolls a
state forward one step at a time conditioned on a latent scalar.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .training import DivergenceError

STATE_GUARD = 1e3  # |state| beyond this marks the trial diverged


# ---------------------------------------------------------------------------
# closed-form steps
# ---------------------------------------------------------------------------

def kinematics_step(u, v, a):
    """One unit-time step under constant acceleration:
    u' = u + v + a/2, v' = v + a."""
    return u + v + 0.5 * a, v + a


def sho_analytic_step(u, v, omega_sq, dt):
    """Exact rotation of the oscillator state over one time step."""
    if np.any(np.asarray(omega_sq) <= 0):
        raise ValueError("omega_sq must be positive")
    w = np.sqrt(omega_sq)
    c, s = np.cos(w * dt), np.sin(w * dt)
    return u * c + (v / w) * s, -u * w * s + v * c


def sho_euler_step(u, v, omega_sq, dt):
    """First-order finite-difference update."""
    return u + v * dt, v - omega_sq * u * dt


def sho_second_order_step(u, v, omega_sq, dt):
    """Second-order expansion of the velocity update; the reference for
    interpreting extracted correction terms.  Returns v' only."""
    return v - dt * omega_sq * u - 0.5 * dt * dt * omega_sq * v


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

@dataclass
class TimeSeriesDataset:
    """Per-instance latent parameter, observed input series, target series
    and the initial condition fed to the decoder."""

    params: np.ndarray         # (n,)
    inputs: np.ndarray         # (n, T_x, 2) observed (u, v) series
    targets: np.ndarray        # (n, T_y, 2) continuation from y0
    y0: np.ndarray             # (n, 2)
    dt: float
    kind: str

    @property
    def n(self):
        return self.params.shape[0]

    @property
    def t_x(self):
        return self.inputs.shape[1]

    @property
    def t_y(self):
        return self.targets.shape[1]

    def write_csv(self, path):
        """Rows: instance id, t, u, v, param (input series then targets,
        with target steps offset by one past t=0)."""
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["instance", "t", "u", "v", "param"])
            for i in range(self.n):
                for t in range(self.t_x):
                    w.writerow([i, t, self.inputs[i, t, 0],
                                self.inputs[i, t, 1], self.params[i]])

    def write_manifest(self, path):
        with open(path, "w") as f:
            json.dump({"kind": self.kind, "n": self.n, "t_x": self.t_x,
                       "t_y": self.t_y, "dt": self.dt}, f, indent=2)


def _roll(step, y0, n_steps):
    """Iterate a step function, returning (n, n_steps+1, 2) incl. t=0."""
    n = y0.shape[0]
    out = np.empty((n, n_steps + 1, 2))
    out[:, 0] = y0
    u, v = y0[:, 0].copy(), y0[:, 1].copy()
    for t in range(1, n_steps + 1):
        u, v = step(u, v)
        out[:, t, 0] = u
        out[:, t, 1] = v
    return out


def gen_kinematics(n=100, t_x=100, t_y=5, seed=0, noise_frac=0.0):
    """u0, v0, a ~ U(-1,1); the series iterates the exact one-step map.

    The target series is the continuation of the same trajectory from its
    initial condition y0 = (u0, v0), which is what the decoder receives.
    """
    if n < 1 or t_x < 1 or t_y < 1:
        raise ValueError("n and series lengths must be >= 1")
    rng = np.random.default_rng(seed)
    u0 = rng.uniform(-1, 1, n)
    v0 = rng.uniform(-1, 1, n)
    a = rng.uniform(-1, 1, n)
    y0 = np.stack([u0, v0], axis=1)
    traj = _roll(lambda u, v: kinematics_step(u, v, a), y0, max(t_x - 1, t_y))
    inputs = traj[:, :t_x].copy()
    targets = traj[:, 1:t_y + 1].copy()
    if noise_frac > 0.0:
        targets = targets + noise_frac * targets.std() * rng.standard_normal(targets.shape)
    return TimeSeriesDataset(a, inputs, targets, y0, dt=1.0, kind="kinematics")


def gen_sho(n=1000, t_x=500, t_y=25, dt=0.1, seed=0, noise_frac=0.0):
    """omega^2 ~ U(0.1, 1), u0, v0 ~ U(-1, 1); series from the analytic
    solution."""
    if n < 1 or t_x < 1 or t_y < 1:
        raise ValueError("n and series lengths must be >= 1")
    rng = np.random.default_rng(seed)
    u0 = rng.uniform(-1, 1, n)
    v0 = rng.uniform(-1, 1, n)
    w2 = rng.uniform(0.1, 1.0, n)
    y0 = np.stack([u0, v0], axis=1)
    traj = _roll(lambda u, v: sho_analytic_step(u, v, w2, dt), y0, max(t_x - 1, t_y))
    inputs = traj[:, :t_x].copy()
    targets = traj[:, 1:t_y + 1].copy()
    if noise_frac > 0.0:
        targets = targets + noise_frac * targets.std() * rng.standard_normal(targets.shape)
    return TimeSeriesDataset(w2, inputs, targets, y0, dt=dt, kind="sho")


def true_continuation(ds, n_steps):
    """Ground-truth trajectory from y0 for n_steps (excluding t=0),
    used as the extrapolation reference."""
    if ds.kind == "kinematics":
        step = lambda u, v: kinematics_step(u, v, ds.params)
    else:
        step = lambda u, v: sho_analytic_step(u, v, ds.params, ds.dt)
    return _roll(step, ds.y0, n_steps)[:, 1:]


def euler_trajectory(ds, n_steps):
    """Euler finite-difference reference using the true parameter."""
    step = lambda u, v: sho_euler_step(u, v, ds.params, ds.dt)
    return _roll(step, ds.y0, n_steps)[:, 1:]


# ---------------------------------------------------------------------------
# propagating decoder
# ---------------------------------------------------------------------------

class PropagatingDecoder:
    """One network per state feature; each maps (u, v, z) to that
    feature's next value.  The same cell weights are reused at every
    unrolled step."""

    def __init__(self, cells):
        self.cells = list(cells)

    def parameters(self):
        return [p for c in self.cells for p in c.parameters()]

    def cell(self, state, z, weight_nodes=None):
        """state: (B, n_features) tensor, z: (B, 1) tensor -> next state."""
        inp = ad.hstack([state, z])
        outs = [c.forward(inp, weight_nodes) for c in self.cells]
        return outs[0] if len(outs) == 1 else ad.hstack(outs)

    def propagate(self, y0, z, t_y, weight_nodes=None):
        return propagate(lambda s, zz: self.cell(s, zz, weight_nodes), y0, z, t_y)


class ReluCell:
    """Baseline: a single fully-connected ReLU network predicting the
    whole next state at once."""

    def __init__(self, net):
        self.net = net

    def parameters(self):
        return self.net.parameters()

    def cell(self, state, z, weight_nodes=None):
        return self.net.forward(ad.hstack([state, z]), weight_nodes)

    def propagate(self, y0, z, t_y, weight_nodes=None):
        return propagate(lambda s, zz: self.cell(s, zz, weight_nodes), y0, z, t_y)


def propagate(cell, y0, z, t_y):
    """Roll the state forward: y_1 = cell(y_0, z), y_{t+1} = cell(y_t, z).

    y0 is a constant (B, d) array; z a (B, 1) tape node (or array).
    Returns the list of t_y state tensors, differentiable through the
    whole unroll.  Raises DivergenceError when the state exceeds the
    guard magnitude.
    """
    if t_y < 1:
        raise ValueError("t_y must be >= 1")
    if isinstance(y0, np.ndarray):
        y0 = Tensor(y0)
    if isinstance(z, np.ndarray):
        z = Tensor(z.reshape(-1, 1))
    states = []
    state = y0
    for _ in range(t_y):
        state = cell(state, z)
        if np.abs(state.data).max() > STATE_GUARD:
            raise DivergenceError("unrolled state exceeded guard magnitude")
        states.append(state)
    return states


def stack_states(states):
    """(B, d) tensors per step -> one (B, t_y * d) tensor for the loss."""
    return ad.hstack(states)


def rollout_values(decoder, y0, z_values, n_steps):
    """Inference-mode rollout to plain arrays: (n, n_steps, d).  The
    divergence guard is off here; extrapolation may legitimately blow up
    (that is what the comparison measures)."""
    y0 = np.asarray(y0, dtype=float)
    z = Tensor(np.asarray(z_values, dtype=float).reshape(-1, 1))
    state = Tensor(y0)
    out = np.empty((y0.shape[0], n_steps, y0.shape[1]))
    flag = ad.check_finite
    ad.check_finite = False
    try:
        for t in range(n_steps):
            state = Tensor(decoder.cell(state, z).data)
            out[:, t] = state.data
    finally:
        ad.check_finite = flag
    return out
