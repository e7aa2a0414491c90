"""Experiment orchestration: the symbolic-regression benchmark suite,
the image-pair arithmetic task, the dynamical-system experiments,
multi-trial model selection and report emission.

Every run is reproducible from (config, seed): data generation, weight
init, minibatch draws and gate samples all derive from the trial seed.
"""

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import dynamics as dyn
from . import encoders as enc
from . import expressions as ex
from .network import EqlNetwork, ReluNetwork, build_network, BANKS
from .training import (PhaseConfig, TrainSchedule, make_regularizer,
                       run_schedule, NoRegularizer)

# ---------------------------------------------------------------------------
# benchmark function table
# ---------------------------------------------------------------------------

V = ex.Var
C = ex.Const


@dataclass(frozen=True)
class BenchmarkFunction:
    label: str
    n_inputs: int
    truth: ex.Expr


BENCHMARK_FUNCTIONS = {
    "x": BenchmarkFunction("x", 1, V(0)),
    "x2": BenchmarkFunction("x^2", 1, ex.Pow(V(0), 2)),
    "x3": BenchmarkFunction("x^3", 1, ex.Pow(V(0), 3)),
    "sin2pix": BenchmarkFunction("sin(2*pi*x)", 1, ex.Sin(V(0), 2 * math.pi)),
    "xy": BenchmarkFunction("x*y", 2, ex.Prod((V(0), V(1)))),
    "sigmoid10x": BenchmarkFunction("1/(1+exp(-10x))", 1, ex.Sigmoid(V(0), 10.0)),
    "xy2_z2": BenchmarkFunction("x*y/2 + z/2", 3, ex.Sum((
        ex.Prod((C(0.5), V(0), V(1))), ex.Prod((C(0.5), V(2)))))),
    "exp_mx2": BenchmarkFunction("exp(-x^2)", 1, ex.Exp(ex.Pow(V(0), 2), -1.0)),
    "x2_sin2piy": BenchmarkFunction("x^2 + sin(2*pi*y)", 2, ex.Sum((
        ex.Pow(V(0), 2), ex.Sin(V(1), 2 * math.pi)))),
    "x2_y_2z": BenchmarkFunction("x^2 + y - 2z", 3, ex.Sum((
        ex.Pow(V(0), 2), V(1), ex.Prod((C(-2.0), V(2)))))),
}

# Success rates reported for 20-trial sweeps, per regularizer, used to set
# pass thresholds for a stochastic method (half the reported rate, at
# least one success; the hardest function gets a doubled trial budget).
REPORTED_RATES = {
    "x": (1.0, 1.0), "x2": (0.6, 0.75), "x3": (0.3, 0.05),
    "sin2pix": (0.45, 0.85), "xy": (0.8, 1.0), "sigmoid10x": (0.3, 0.55),
    "xy2_z2": (0.05, 0.95), "exp_mx2": (0.05, 0.15),
    "x2_sin2piy": (0.2, 0.8), "x2_y_2z": (0.6, 0.9),
}

PRIMARY_L05 = {"x", "x2", "xy", "x2_y_2z"}
PRIMARY_L0 = {"xy2_z2", "x2_sin2piy"}


def required_successes(function_id, reg, n_trials):
    if reg == "l05" and function_id in PRIMARY_L05:
        rate = REPORTED_RATES[function_id][0]
        return max(1, math.ceil(0.5 * rate * n_trials))
    return 1


def eval_benchmark_function(function_id, X):
    truth = BENCHMARK_FUNCTIONS[function_id].truth
    return ex.eval_expr(truth, X)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Shared knobs for all experiments; JSON-loadable, flag-overridable."""

    out_dir: str = "runs"
    seeds: list = field(default_factory=lambda: [0])
    workers: int = 1
    fast: bool = False

    # symbolic-regression benchmarks
    n_points: int = 256
    noise_frac: float = 0.0
    hidden_layers: int = 2
    regularize_biases: bool = True
    simplify_threshold: float = 0.01
    round_digits: int = 3
    eval_points: int = 4096
    l0_lambda: float = 0.02
    mu: float = 1e-4

    # image-pair arithmetic
    data_dir: str = None
    batch_size: int = 32
    generalize: bool = False
    sum_cutoff: int = 15
    eval_pairs: int = 2000

    # dynamics
    sho_batch: int = 256
    sho_phase2_iters: int = 5000
    sho_phase3_iters: int = 5000

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            doc = json.load(f)
        cfg = cls()
        for k, v in doc.items():
            if not hasattr(cfg, k):
                raise ValueError(f"unknown config key {k!r}")
            setattr(cfg, k, v)
        return cfg


@dataclass
class TrialReport:
    seed: int
    converged: bool
    diverged: bool
    expression_text: str
    expression_json: dict
    train_rmse: float
    extrapolation_rmse: float
    complexity: int
    wall_time: float
    success: bool = False
    trace: object = None  # TrainResult, dropped from JSON summaries


def benchmark_schedule(reg, cfg):
    iters1, iters2 = (200, 400) if cfg.fast else (2000, 10000)
    if reg == "l0":
        # gates handle support selection, so no freeze phase; regularization
        # stays on while a lowered rate fine-tunes the surviving weights
        return [PhaseConfig(1e-2, cfg.l0_lambda, iters1),
                PhaseConfig(1e-3, cfg.l0_lambda, iters2)]
    return [PhaseConfig(1e-2, 5e-3, iters1, freeze_threshold_after=0.01),
            PhaseConfig(1e-3, 0.0, iters2)]


def _effective_arrays(net, reg):
    if hasattr(reg, "effective_values"):
        eff = reg.effective_values()
        Ws = [eff.get(id(w), w.data) for w in net.weights]
        bs = [eff.get(id(b), b.data) for b in net.biases]
        return Ws, bs
    return [w.data for w in net.weights], [b.data for b in net.biases]


def benchmark_trial(function_id, reg_kind, seed, cfg):
    """Train one network on one sampled dataset and judge the extracted
    equation against the generating function."""
    t0 = time.perf_counter()
    fn = BENCHMARK_FUNCTIONS[function_id]
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, (cfg.n_points, fn.n_inputs))
    y = eval_benchmark_function(function_id, X)
    if cfg.noise_frac > 0.0:
        y = y + cfg.noise_frac * y.std() * rng.standard_normal(y.shape)
    y = y.reshape(-1, 1)

    net = build_network(BANKS["standard"](), fn.n_inputs, cfg.hidden_layers,
                        1, seed=seed)
    reg_params = net.parameters() if cfg.regularize_biases else net.weights
    reg = make_regularizer(reg_kind, reg_params,
                           rng=np.random.default_rng(seed + 7919))

    def make_mse(_rng, _ty, wn):
        return ad.mse(net.forward(X, wn), y)

    schedule = TrainSchedule(benchmark_schedule(reg_kind, cfg), seed=seed)
    result = run_schedule(make_mse, net.parameters(), schedule, reg)

    if result.diverged:
        return TrialReport(seed, False, True, "", {}, float("inf"),
                           float("inf"), 0, time.perf_counter() - t0,
                           trace=result)

    Ws, bs = _effective_arrays(net, reg)
    raw = ex.extract_expression(net, 0.0, Ws, bs)
    expr = ex.simplify(raw, cfg.simplify_threshold, cfg.round_digits)
    domain = [(-2.0, 2.0)] * fn.n_inputs
    try:
        train_rmse = float(np.sqrt(np.mean(
            (ex.eval_expr(expr, X) - y[:, 0]) ** 2)))
    except ex.ExprEvalError:
        train_rmse = float("inf")
    extrap = ex.extrapolation_error(
        expr, lambda P: ex.eval_expr(fn.truth, P), domain,
        n=cfg.eval_points, seed=7)
    success = ex.numerically_equivalent(expr, fn.truth, domain,
                                        n=cfg.eval_points, seed=7)
    return TrialReport(
        seed=seed, converged=True, diverged=False,
        expression_text=ex.to_infix(expr, cfg.round_digits),
        expression_json=ex.expr_to_json(expr),
        train_rmse=train_rmse, extrapolation_rmse=extrap,
        complexity=ex.complexity(expr),
        wall_time=time.perf_counter() - t0,
        success=success, trace=result)


def _benchmark_worker(args):
    function_id, reg_kind, seed, cfg = args
    try:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=1):
            return benchmark_trial(function_id, reg_kind, seed, cfg)
    except ImportError:
        return benchmark_trial(function_id, reg_kind, seed, cfg)


@dataclass
class BenchmarkRow:
    function_id: str
    regularizer: str
    successes: int
    trials: int
    required: int
    reports: list
    winner: TrialReport = None

    @property
    def passed(self):
        return self.successes >= self.required


def benchmark_run(function_id, n_trials, reg_kind, cfg, base_seed=0):
    if function_id not in BENCHMARK_FUNCTIONS:
        raise ValueError(f"unknown benchmark function {function_id!r}; "
                         f"choose from {sorted(BENCHMARK_FUNCTIONS)}")
    seeds = [base_seed + i for i in range(n_trials)]
    jobs = [(function_id, reg_kind, s, cfg) for s in seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            reports = list(pool.map(_benchmark_worker, jobs))
    else:
        reports = [benchmark_trial(*j[:3], cfg) for j in jobs]
    reports.sort(key=lambda r: r.seed)

    successes = sum(r.success for r in reports)
    candidates = [ex.CandidateReport(ex.expr_from_json(r.expression_json),
                                     r.complexity, r.train_rmse,
                                     r.extrapolation_rmse, r.seed)
                  for r in reports if r.converged]
    winner = None
    if candidates:
        try:
            best = ex.select_model(candidates, mu=cfg.mu)
            winner = next(r for r in reports if r.seed == best.seed)
        except ValueError:
            winner = None
    return BenchmarkRow(function_id, reg_kind, successes, n_trials,
                        required_successes(function_id, reg_kind, n_trials),
                        reports, winner)


# ---------------------------------------------------------------------------
# image-pair arithmetic
# ---------------------------------------------------------------------------

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def build_fallback_digit_corpus(out_dir, seed=0):
    """Write an MNIST-format IDX corpus from scikit-learn's bundled
    handwritten digits (8x8, upscaled to 28x28).  A stand-in for real
    MNIST when the IDX files are not available in this environment."""
    from scipy.ndimage import zoom
    from sklearn.datasets import load_digits

    d = load_digits()
    imgs = np.stack([zoom(im, 3.5, order=1) for im in d.images / 16.0])
    imgs = np.clip(np.round(imgs * 255.0), 0, 255).astype(np.uint8)
    labels = d.target.astype(np.uint8)

    rng = np.random.default_rng(seed)
    test_mask = np.zeros(labels.size, dtype=bool)
    for digit in range(10):
        idx = np.flatnonzero(labels == digit)
        test_mask[rng.choice(idx, size=max(1, idx.size // 5), replace=False)] = True

    os.makedirs(out_dir, exist_ok=True)
    enc.write_idx_images(os.path.join(out_dir, MNIST_FILES["train_images"]),
                         imgs[~test_mask])
    enc.write_idx_labels(os.path.join(out_dir, MNIST_FILES["train_labels"]),
                         labels[~test_mask])
    enc.write_idx_images(os.path.join(out_dir, MNIST_FILES["test_images"]),
                         imgs[test_mask])
    enc.write_idx_labels(os.path.join(out_dir, MNIST_FILES["test_labels"]),
                         labels[test_mask])
    return out_dir


def load_digit_pools(data_dir):
    """Load the four IDX files; returns ((train_imgs, train_labels),
    (test_imgs, test_labels)) with images as uint8."""
    paths = {k: os.path.join(data_dir, v) for k, v in MNIST_FILES.items()}
    missing = [p for p in paths.values() if not os.path.exists(p)]
    if missing:
        raise FileNotFoundError(f"missing IDX files: {missing}")
    tr = (enc.load_idx_images(paths["train_images"]),
          enc.load_idx_labels(paths["train_labels"]))
    te = (enc.load_idx_images(paths["test_images"]),
          enc.load_idx_labels(paths["test_labels"]))
    for imgs, labels in (tr, te):
        if imgs.shape[0] != labels.shape[0]:
            raise ValueError("image/label counts disagree")
        if imgs.shape[1:] != (28, 28):
            raise ValueError(f"expected 28x28 images, got {imgs.shape[1:]}")
    return tr, te


def ensure_digit_data(cfg):
    if cfg.data_dir and os.path.exists(
            os.path.join(cfg.data_dir, MNIST_FILES["train_images"])):
        return cfg.data_dir, False
    fallback = os.path.join(cfg.out_dir, "digit-corpus")
    if not os.path.exists(os.path.join(fallback, MNIST_FILES["train_images"])):
        build_fallback_digit_corpus(fallback)
    return fallback, True


def _sample_pair_indices(rng, labels, batch, cutoff=None):
    n = labels.shape[0]
    i = rng.integers(0, n, batch)
    j = rng.integers(0, n, batch)
    if cutoff is not None:
        for _ in range(1000):
            bad = labels[i].astype(int) + labels[j].astype(int) >= cutoff
            if not bad.any():
                break
            i[bad] = rng.integers(0, n, int(bad.sum()))
            j[bad] = rng.integers(0, n, int(bad.sum()))
    return i, j


def _encode_batched(encoder, imgs, chunk=512):
    zs = []
    for k in range(0, imgs.shape[0], chunk):
        part = imgs[k:k + chunk].astype(np.float64) / 255.0
        zs.append(encoder.encode(part, training=False).data[:, 0])
    return np.concatenate(zs)


def _pair_predictions(encoder, head, imgs, labels, i, j, weight_nodes=None):
    z1 = _encode_batched(encoder, imgs[i])
    z2 = _encode_batched(encoder, imgs[j])
    Z = np.stack([z1, z2], axis=1)
    yhat = head.forward(Z, weight_nodes).data[:, 0] * 9.0 + 9.0
    y = labels[i].astype(float) + labels[j].astype(float)
    return yhat, y


def _accuracy_mae(yhat, y):
    return float(np.mean(np.round(yhat) == y)), float(np.mean(np.abs(yhat - y)))


def train_digit_sum_model(pools, head_kind, cfg, seed):
    """Train encoder + head end-to-end on digit-pair sums; returns the
    trained parts and the schedule trace."""
    (train_imgs, train_labels), _ = pools
    encoder = enc.MnistEncoder(seed=seed)
    if head_kind == "seql":
        head = build_network(BANKS["standard"](), 2, 2, 1, seed=seed + 1)
        reg_params = (head.parameters() if cfg.regularize_biases
                      else head.weights)
        reg = make_regularizer("l05", reg_params)
    else:
        head = ReluNetwork(2, [50, 50], 1, seed=seed + 1)
        reg = NoRegularizer()

    cutoff = cfg.sum_cutoff if cfg.generalize else None
    batch = cfg.batch_size

    def make_mse(rng, _ty, wn):
        i, j = _sample_pair_indices(rng, train_labels, batch, cutoff)
        imgs = np.concatenate([train_imgs[i], train_imgs[j]])
        x = imgs.astype(np.float64) / 255.0
        z = encoder.encode(x, training=True)
        B = batch
        pair = ad.hstack([ad.rows(z, 0, B), ad.rows(z, B, 2 * B)])
        yhat = ad.affine(head.forward(pair, wn), 9.0, 9.0)
        y = (train_labels[i].astype(float) + train_labels[j].astype(float))
        return ad.mse(yhat, y.reshape(-1, 1))

    iters = (500, 500) if cfg.fast else (10000, 10000)
    if head_kind == "seql":
        phases = [PhaseConfig(1e-2, 0.05, iters[0], freeze_threshold_after=0.01),
                  PhaseConfig(1e-4, 0.0, iters[1])]
    else:
        phases = [PhaseConfig(1e-2, 0.0, iters[0]),
                  PhaseConfig(1e-4, 0.0, iters[1])]
    schedule = TrainSchedule(phases, seed=seed)
    params = encoder.parameters() + head.parameters()
    result = run_schedule(make_mse, params, schedule, reg)
    return encoder, head, reg, result


def evaluate_digit_sum_model(encoder, head, pools, cfg, seed=12345):
    """Accuracy/MAE on pairs drawn from the train-digit and test-digit
    pools, latent fits, and the generalization split when configured."""
    rng = np.random.default_rng(seed)
    report = {}
    for source, (imgs, labels) in zip(("train", "test"), pools):
        i, j = _sample_pair_indices(rng, labels, cfg.eval_pairs)
        yhat, y = _pair_predictions(encoder, head, imgs, labels, i, j)
        acc, mae = _accuracy_mae(yhat, y)
        singles = rng.integers(0, labels.shape[0], cfg.eval_pairs)
        z = _encode_batched(encoder, imgs[singles])
        slope, intercept, r = enc.linear_fit(z, labels[singles].astype(float))
        report[source] = {
            "accuracy": acc, "mae": mae,
            "latent_fit": {"slope": slope, "intercept": intercept, "r": r},
            "pred_sample": [list(map(float, t)) for t in zip(y[:200], yhat[:200])],
            "latent_sample": [[float(a), float(b)]
                              for a, b in zip(z[:200], labels[singles][:200])],
        }
        if cfg.generalize:
            sums = labels[i].astype(int) + labels[j].astype(int)
            lo = sums < cfg.sum_cutoff
            hi = ~lo
            report[source]["accuracy_below_cutoff"] = (
                float(np.mean(np.round(yhat[lo]) == y[lo])) if lo.any() else None)
            report[source]["accuracy_at_or_above_cutoff"] = (
                float(np.mean(np.round(yhat[hi]) == y[hi])) if hi.any() else None)
    return report


def mnist_experiment(cfg, seed=0):
    """Full image-pair arithmetic run.  In generalization mode the model
    trains only on pairs whose digit sum is below the cutoff and a ReLU
    head trains under the identical protocol for comparison."""
    data_dir, used_fallback = ensure_digit_data(cfg)
    pools = load_digit_pools(data_dir)

    t0 = time.perf_counter()
    encoder, head, reg, result = train_digit_sum_model(pools, "seql", cfg, seed)
    report = {
        "experiment": "mnist",
        "seed": seed,
        "data_dir": data_dir,
        "fallback_corpus": used_fallback,
        "generalize": cfg.generalize,
        "diverged": result.diverged,
        "eval": evaluate_digit_sum_model(encoder, head, pools, cfg),
    }
    Ws, bs = _effective_arrays(head, reg)
    raw = ex.extract_expression(head, 0.0, Ws, bs)
    scaled = ex.Sum((ex.Prod((ex.Const(9.0), raw)), ex.Const(9.0)))
    expr = ex.simplify(scaled, cfg.simplify_threshold, cfg.round_digits)
    names = ("z1", "z2")
    report["expression_text"] = ex.to_infix(expr, cfg.round_digits, names)
    report["expression_json"] = ex.expr_to_json(expr)
    report["_traces"] = {"seql": result}

    if cfg.generalize:
        r_encoder, r_head, _, r_result = train_digit_sum_model(
            pools, "relu", cfg, seed)
        report["relu_eval"] = evaluate_digit_sum_model(
            r_encoder, r_head, pools, cfg)
        report["relu_diverged"] = r_result.diverged
        report["_traces"]["relu"] = r_result

    report["wall_time"] = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# dynamics experiments
# ---------------------------------------------------------------------------

DYNAMICS_PRESETS = {
    "kinematics": dict(n=100, t_x=100, t_y=5, dt=1.0, bank="standard",
                       relu_hidden=[50, 50], full_batch=True),
    "sho": dict(n=1000, t_x=500, t_y=25, dt=0.1, bank="oscillator",
                relu_hidden=[50, 50, 50, 50], full_batch=False),
}


def dynamics_schedule(kind, cfg, seed):
    if kind == "kinematics":
        iters = (500, 1000) if cfg.fast else (5000, 10000)
        curriculum = ((0, 1), (iters[0] // 5, 5))
        phases = [PhaseConfig(1e-2, 1e-3, iters[0], freeze_threshold_after=0.1,
                              ty_schedule=curriculum),
                  PhaseConfig(1e-3, 0.0, iters[1], ty_schedule=((0, 5),))]
    else:
        if cfg.fast:
            p1, p2, p3 = 400, 500, 500
            curriculum = ((0, 1), (100, 3), (200, 5), (300, 7))
        else:
            p1, p2, p3 = 2000, cfg.sho_phase2_iters, cfg.sho_phase3_iters
            curriculum = ((0, 1), (500, 3), (1000, 5), (1500, 7))
        phases = [PhaseConfig(1e-2, 4e-5, p1, ty_schedule=curriculum),
                  PhaseConfig(2e-3, 2e-4, p2, freeze_threshold_after=0.01,
                              ty_schedule=((0, 25),)),
                  PhaseConfig(1e-3, 0.0, p3, ty_schedule=((0, 25),))]
    return TrainSchedule(phases, seed=seed)


def train_dynamics_model(kind, ds, cell_kind, cfg, seed):
    preset = DYNAMICS_PRESETS[kind]
    de = enc.DynamicsEncoder(ds.t_x, 2, seed=seed)
    if cell_kind == "seql":
        bank = BANKS[preset["bank"]]()
        cells = [build_network(bank, 3, cfg.hidden_layers, 1, seed=seed + 1 + k)
                 for k in range(2)]
        decoder = dyn.PropagatingDecoder(cells)
        reg_params = (decoder.parameters() if cfg.regularize_biases else
                      [p for c in cells for p in c.weights])
        reg = make_regularizer("l05", reg_params)
    else:
        decoder = dyn.ReluCell(ReluNetwork(3, preset["relu_hidden"], 2,
                                           seed=seed + 1))
        reg = NoRegularizer()

    full_batch = preset["full_batch"]
    batch = ds.n if full_batch else min(cfg.sho_batch, ds.n)

    def make_mse(rng, ty, wn):
        if full_batch:
            idx = slice(None)
            b = ds.n
        else:
            idx = rng.integers(0, ds.n, batch)
            b = batch
        z = de.encode(ds.inputs[idx], training=True)
        states = decoder.propagate(ds.y0[idx], z, ty, wn)
        pred = dyn.stack_states(states)
        targ = ds.targets[idx, :ty].reshape(b, ty * 2)
        return ad.mse(pred, targ)

    schedule = dynamics_schedule(kind, cfg, seed)
    params = de.parameters() + decoder.parameters()
    result = run_schedule(make_mse, params, schedule, reg)
    return de, decoder, reg, result


def _latents(de, ds, chunk=250):
    zs = []
    for k in range(0, ds.n, chunk):
        zs.append(de.encode(ds.inputs[k:k + chunk], training=False).data[:, 0])
    return np.concatenate(zs)


def dynamics_extrapolation(de, decoder, ds_eval, t_train, t_extra):
    """Roll the trained model past the training horizon on held-out
    instances; returns per-instance MSE over the extrapolation window and
    the prediction array."""
    z = _latents(de, ds_eval)
    total = t_train + t_extra
    pred = dyn.rollout_values(decoder, ds_eval.y0, z, total)
    truth = dyn.true_continuation(ds_eval, total)
    window = slice(t_train, total)
    err = np.mean((pred[:, window] - truth[:, window]) ** 2, axis=(1, 2))
    return err, pred, truth


def dynamics_trial(kind, ds, ds_eval, cfg, seed):
    preset = DYNAMICS_PRESETS[kind]
    t0 = time.perf_counter()
    de, decoder, reg, result = train_dynamics_model(kind, ds, "seql", cfg, seed)
    trial = {"seed": seed, "diverged": result.diverged}
    if result.diverged:
        trial.update(converged=False, extrapolation_mse=float("inf"))
        trial["_artifacts"] = {"trace": result}
        return trial

    z = _latents(de, ds)
    slope, intercept, r = enc.linear_fit(z, ds.params)
    trial["latent_fit"] = {"slope": slope, "intercept": intercept, "r": r}

    names = ("u", "v", "z")
    eqs, eq_json, total_cx = [], [], 0
    exprs = []
    for cell in decoder.cells:
        Ws, bs = _effective_arrays(cell, reg)
        raw = ex.extract_expression(cell, 0.0, Ws, bs)
        simp = ex.simplify(raw, cfg.simplify_threshold, cfg.round_digits)
        exprs.append(simp)
        eqs.append(ex.to_infix(simp, cfg.round_digits, names))
        eq_json.append(ex.expr_to_json(simp))
        total_cx += ex.complexity(simp)

    t_train = ds.t_y
    t_extra = 10 if kind == "kinematics" else 75
    err, pred, truth = dynamics_extrapolation(de, decoder, ds_eval,
                                              t_train, t_extra)
    trial.update(
        converged=True,
        equations=eqs, equations_json=eq_json, complexity=total_cx,
        extrapolation_mse=float(err.mean()),
        train_mse=float(result.trace[-1, 1]) if result.trace.size else None,
        wall_time=time.perf_counter() - t0,
    )
    trial["_artifacts"] = {"de": de, "decoder": decoder, "reg": reg,
                           "trace": result, "exprs": exprs,
                           "eval_err": err, "pred": pred, "truth": truth}
    return trial


def dynamics_experiment(kind, cfg):
    """Train the encoder-decoder on one system across the configured
    seeds, select the reported trial, and compare extrapolation against
    the ReLU baseline (and the Euler reference for the oscillator)."""
    if kind not in DYNAMICS_PRESETS:
        raise ValueError(f"unknown system {kind!r}")
    preset = DYNAMICS_PRESETS[kind]
    n = preset["n"] if not cfg.fast else max(preset["n"] // 5, 20)
    t_x = preset["t_x"]
    gen = dyn.gen_kinematics if kind == "kinematics" else dyn.gen_sho
    if kind == "kinematics":
        ds = gen(n=n, t_x=t_x, t_y=preset["t_y"], seed=1000)
        ds_eval = gen(n=10, t_x=t_x, t_y=preset["t_y"], seed=2000)
    else:
        ds = gen(n=n, t_x=t_x, t_y=preset["t_y"], dt=preset["dt"], seed=1000)
        ds_eval = gen(n=50, t_x=t_x, t_y=preset["t_y"], dt=preset["dt"], seed=2000)

    trials = [dynamics_trial(kind, ds, ds_eval, cfg, s) for s in cfg.seeds]
    candidates = [ex.CandidateReport(None, t.get("complexity", 0),
                                     t.get("train_mse") or float("inf"),
                                     math.sqrt(t["extrapolation_mse"])
                                     if math.isfinite(t["extrapolation_mse"])
                                     else float("inf"),
                                     t["seed"])
                  for t in trials if t.get("converged")]
    if not candidates:
        return {"experiment": kind, "converged": False, "trials": trials}
    best = ex.select_model(candidates, mu=cfg.mu)
    selected = next(t for t in trials if t["seed"] == best.seed)

    # baseline trained with the selected trial's seed
    de_r, relu, _, relu_result = train_dynamics_model(kind, ds, "relu", cfg,
                                                      selected["seed"])
    t_train = ds.t_y
    t_extra = 10 if kind == "kinematics" else 75
    relu_err, relu_pred, _ = dynamics_extrapolation(de_r, relu, ds_eval,
                                                    t_train, t_extra)
    report = {
        "experiment": kind,
        "converged": True,
        "selected_seed": selected["seed"],
        "latent_fit": selected["latent_fit"],
        "equations": selected["equations"],
        "equations_json": selected["equations_json"],
        "extrapolation_mse": selected["extrapolation_mse"],
        "relu_extrapolation_mse": float(relu_err.mean()),
        "relu_diverged": relu_result.diverged,
        "per_instance_win": [bool(a < b) for a, b in
                             zip(selected["_artifacts"]["eval_err"], relu_err)],
        "trials": [{k: v for k, v in t.items() if not k.startswith("_")}
                   for t in trials],
    }
    if kind == "sho":
        euler = dyn.euler_trajectory(ds_eval, t_train + t_extra)
        truth = selected["_artifacts"]["truth"]
        window = slice(t_train, t_train + t_extra)
        report["euler_extrapolation_mse"] = float(
            np.mean((euler[:, window] - truth[:, window]) ** 2))
    report["_selected"] = selected["_artifacts"]
    report["_relu"] = {"pred": relu_pred, "trace": relu_result}
    report["_eval_dataset"] = ds_eval
    return report


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items() if not str(k).startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (TrialReport, BenchmarkRow)):
        d = {k: v for k, v in asdict(obj).items() if k not in ("trace", "reports", "winner")}
        if isinstance(obj, BenchmarkRow):
            d["reports"] = [_jsonable(r) for r in obj.reports]
            d["winner_seed"] = obj.winner.seed if obj.winner else None
            d["passed"] = obj.passed
        return _jsonable(d)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def emit_report(reports, out_dir):
    """Write summary JSON, per-trial loss traces, expression files and
    plot-ready CSVs under ``out_dir``; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    files = []

    summary_path = os.path.join(out_dir, "summary.json")
    with open(summary_path, "w") as f:
        json.dump(_jsonable(reports), f, indent=2)
    files.append("summary.json")

    for name, rep in (reports.items() if isinstance(reports, dict) else
                      enumerate(reports)):
        tag = str(name)
        if isinstance(rep, BenchmarkRow):
            for r in rep.reports:
                if r.trace is not None:
                    p = f"{tag}_seed{r.seed}_trace.csv"
                    r.trace.write_trace_csv(os.path.join(out_dir, p))
                    files.append(p)
                if r.expression_json:
                    p = f"{tag}_seed{r.seed}_expr.json"
                    with open(os.path.join(out_dir, p), "w") as f:
                        json.dump(r.expression_json, f)
                    files.append(p)
                    p2 = f"{tag}_seed{r.seed}_expr.txt"
                    with open(os.path.join(out_dir, p2), "w") as f:
                        f.write(r.expression_text + "\n")
                    files.append(p2)
        elif isinstance(rep, dict) and rep.get("experiment") in DYNAMICS_PRESETS:
            files.extend(_emit_dynamics_files(rep, tag, out_dir))
        elif isinstance(rep, dict) and rep.get("experiment") == "mnist":
            files.extend(_emit_mnist_files(rep, tag, out_dir))

    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w") as f:
        json.dump({"files": sorted(files)}, f, indent=2)
    return manifest_path


def _emit_dynamics_files(rep, tag, out_dir):
    files = []
    sel = rep.get("_selected")
    if not sel:
        return files
    pred = sel["pred"]
    truth = sel["truth"]
    relu_pred = rep.get("_relu", {}).get("pred")
    ds_eval = rep.get("_eval_dataset")
    t_train = ds_eval.t_y
    p = f"{tag}_trajectories.csv"
    with open(os.path.join(out_dir, p), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["instance", "t", "true_u", "true_v", "pred_u", "pred_v",
                    "relu_u", "relu_v", "regime"])
        for i in range(pred.shape[0]):
            for t in range(pred.shape[1]):
                w.writerow([i, t + 1, truth[i, t, 0], truth[i, t, 1],
                            pred[i, t, 0], pred[i, t, 1],
                            relu_pred[i, t, 0] if relu_pred is not None else "",
                            relu_pred[i, t, 1] if relu_pred is not None else "",
                            "train" if t < t_train else "extrapolate"])
    files.append(p)
    if "trace" in sel and sel["trace"] is not None:
        p = f"{tag}_trace.csv"
        sel["trace"].write_trace_csv(os.path.join(out_dir, p))
        files.append(p)
    for k, eq in enumerate(rep.get("equations_json", [])):
        p = f"{tag}_equation{k}.json"
        with open(os.path.join(out_dir, p), "w") as f:
            json.dump(eq, f)
        files.append(p)
    p = f"{tag}_equations.txt"
    with open(os.path.join(out_dir, p), "w") as f:
        f.write("\n".join(rep.get("equations", [])) + "\n")
    files.append(p)
    return files


def _emit_mnist_files(rep, tag, out_dir):
    files = []
    for source in ("train", "test"):
        e = rep.get("eval", {}).get(source)
        if not e:
            continue
        p = f"{tag}_{source}_latent.csv"
        with open(os.path.join(out_dir, p), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["z", "digit"])
            w.writerows(e["latent_sample"])
        files.append(p)
        p = f"{tag}_{source}_pred.csv"
        with open(os.path.join(out_dir, p), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["y", "yhat"])
            w.writerows(e["pred_sample"])
        files.append(p)
    traces = rep.get("_traces", {})
    for label, tr in traces.items():
        if tr is not None:
            p = f"{tag}_{label}_trace.csv"
            tr.write_trace_csv(os.path.join(out_dir, p))
            files.append(p)
    if rep.get("expression_text"):
        p = f"{tag}_expression.txt"
        with open(os.path.join(out_dir, p), "w") as f:
            f.write(rep["expression_text"] + "\n")
        files.append(p)
    return files
