"""Command-line interface.

Exit codes: 0 success, 1 failed acceptance threshold, 2 usage error.
"""

import argparse
import json
import sys

import numpy as np

from . import autodiff as ad
from . import experiments as xp
from . import expressions as ex
from .network import BANKS, EqlNetwork, build_network


def _load_config(args):
    cfg = (xp.ExperimentConfig.from_json(args.config) if args.config
           else xp.ExperimentConfig())
    for attr, flag in [("out_dir", "out"), ("workers", "workers"),
                       ("fast", "fast"), ("data_dir", "data"),
                       ("batch_size", "batch"), ("generalize", "generalize"),
                       ("noise_frac", "noise")]:
        val = getattr(args, flag, None)
        if val is not None and val is not False:
            setattr(cfg, attr, val)
    return cfg


def _cmd_benchmark(args):
    cfg = _load_config(args)
    row = xp.benchmark_run(args.function, args.trials, args.reg, cfg,
                           base_seed=args.seed)
    xp.emit_report({f"benchmark_{args.function}_{args.reg}": row}, cfg.out_dir)
    print(f"{args.function} [{args.reg}]: {row.successes}/{row.trials} "
          f"successes (required {row.required})")
    if row.winner is not None:
        print(f"selected: {row.winner.expression_text} "
              f"(seed {row.winner.seed}, extrapolation rmse "
              f"{row.winner.extrapolation_rmse:.3g})")
    return 0 if row.passed else 1


def _cmd_mnist(args):
    cfg = _load_config(args)
    report = xp.mnist_experiment(cfg, seed=args.seed)
    xp.emit_report({"mnist": report}, cfg.out_dir)
    ev = report["eval"]
    print(f"accuracy train-digits {ev['train']['accuracy']:.3f} "
          f"test-digits {ev['test']['accuracy']:.3f}; "
          f"mae {ev['train']['mae']:.3f}/{ev['test']['mae']:.3f}")
    print(f"expression: {report['expression_text']}")
    ok = (ev["train"]["accuracy"] >= 0.85 and ev["test"]["accuracy"] >= 0.84
          and ev["train"]["mae"] <= 0.5 and ev["test"]["mae"] <= 0.5)
    if cfg.generalize:
        seql_hi = ev["train"]["accuracy_at_or_above_cutoff"]
        relu_hi = report["relu_eval"]["train"]["accuracy_at_or_above_cutoff"]
        print(f"generalization (sum >= {cfg.sum_cutoff}): "
              f"seql {seql_hi:.3f} relu {relu_hi:.3f}")
        ok = seql_hi >= 0.5 and relu_hi <= 0.05
    return 0 if ok else 1


def _cmd_dynamics(args):
    cfg = _load_config(args)
    if args.seeds is not None:
        cfg.seeds = list(range(args.seeds))
    report = xp.dynamics_experiment(args.system, cfg)
    xp.emit_report({args.system: report}, cfg.out_dir)
    if not report.get("converged"):
        print("all trials diverged")
        return 1
    fit = report["latent_fit"]
    print(f"latent fit: param = {fit['slope']:.3f} z + {fit['intercept']:.3f} "
          f"(r = {fit['r']:.4f})")
    for eq, name in zip(report["equations"], ("u'", "v'")):
        print(f"{name} = {eq}")
    ok = abs(fit["r"]) >= 0.95
    if args.system == "kinematics":
        wins = sum(report["per_instance_win"])
        print(f"extrapolation wins vs relu: {wins}/{len(report['per_instance_win'])}")
        ok = ok and wins >= 8
    else:
        print(f"extrapolation mse {report['extrapolation_mse']:.4g} "
              f"(euler {report['euler_extrapolation_mse']:.4g}, "
              f"relu {report['relu_extrapolation_mse']:.4g})")
        ok = ok and (report["extrapolation_mse"]
                     <= report["euler_extrapolation_mse"])
    return 0 if ok else 1


def _cmd_extract(args):
    net = EqlNetwork.load(args.checkpoint)
    expr = ex.extract_expression(net, args.prune_eps)
    expr = ex.simplify(expr)
    print(ex.to_infix(expr))
    return 0


def _cmd_check(args):
    if not args.gradients:
        print("nothing to check; pass --gradients", file=sys.stderr)
        return 2
    worst_net = 0.0
    for seed in range(5):
        for bank_name in ("standard", "oscillator"):
            net = build_network(BANKS[bank_name](), 2, 2, 1, seed=seed)
            rng = np.random.default_rng(seed)
            X = rng.uniform(-1, 1, (16, 2))
            target = net.forward(X).data + 0.1 * rng.standard_normal((16, 1))

            def loss():
                return ad.mse(net.forward(X), target)

            err = ad.finite_difference_check(loss, net.parameters(), eps=1e-5)
            worst_net = max(worst_net, err)
    print(f"network gradient check: max relative error {worst_net:.3g}")

    from .encoders import MnistEncoder
    encd = MnistEncoder(seed=0)
    rng = np.random.default_rng(0)
    imgs = rng.uniform(0, 1, (3, 28, 28, 1))
    target = encd.encode(imgs, training=True).data + 0.1 * rng.standard_normal((3, 1))

    def loss():
        return ad.mse(encd.encode(imgs, training=True), target)

    err_enc = ad.finite_difference_check(loss, encd.parameters(), eps=1e-5,
                                         max_entries=8, seed=0)
    print(f"encoder gradient check: max relative error {err_enc:.3g}")
    ok = worst_net <= 1e-5 and err_enc <= 1e-4
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def build_parser():
    p = argparse.ArgumentParser(prog="eqlearn",
                                description="equation-learner experiments")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("benchmark", help="symbolic-regression benchmark")
    b.add_argument("--function", required=True,
                   choices=sorted(xp.BENCHMARK_FUNCTIONS))
    b.add_argument("--reg", default="l05", choices=["l05", "l0"])
    b.add_argument("--trials", type=int, default=20)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None)
    b.add_argument("--workers", type=int, default=None)
    b.add_argument("--noise", type=float, default=None,
                   help="fractional noise added to training targets")
    b.add_argument("--fast", action="store_true")
    b.add_argument("--config", default=None)
    b.set_defaults(fn=_cmd_benchmark)

    m = sub.add_parser("mnist", help="image-pair arithmetic")
    m.add_argument("--data", default=None,
                   help="directory with MNIST IDX files (falls back to the "
                        "bundled digit corpus)")
    m.add_argument("--generalize", action="store_true")
    m.add_argument("--out", default=None)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--batch", type=int, default=None)
    m.add_argument("--fast", action="store_true")
    m.add_argument("--config", default=None)
    m.set_defaults(fn=_cmd_mnist)

    d = sub.add_parser("dynamics", help="dynamical-system identification")
    d.add_argument("--system", required=True, choices=["kinematics", "sho"])
    d.add_argument("--out", default=None)
    d.add_argument("--seeds", type=int, default=None,
                   help="number of trial seeds (0..n-1)")
    d.add_argument("--fast", action="store_true")
    d.add_argument("--config", default=None)
    d.set_defaults(fn=_cmd_dynamics)

    e = sub.add_parser("extract", help="print the equation in a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--prune-eps", type=float, default=0.0)
    e.set_defaults(fn=_cmd_extract)

    c = sub.add_parser("check", help="run the gradient oracle suite")
    c.add_argument("--gradients", action="store_true")
    c.set_defaults(fn=_cmd_check)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
