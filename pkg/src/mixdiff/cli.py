"""``mixdiff`` command line: check, train, sample, mix, curve, confusion.

Every subcommand writes CSV artifacts plus ``manifest_<command>.txt`` into the
output directory. Exit codes: 0 success, 1 failed checks, 2 invalid config or
usage, 3 sampler divergence, 4 training divergence, 5 any other mixdiff error.
"""

import argparse
import csv
import os
import platform
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .checks import run_all
from .conditions import AnalyticScoreModel
from .config import load_config
from .exceptions import ConfigError, MixdiffError, SamplerDivergenceError, TrainingError, \
    ValidationError
from .network import MlpScoreNetwork
from .probe import BayesProbe, intensity_confusion, probability_curve
from .sampler import MixSpec, sample, sample_mixed
from .seeding import stream_seed
from .training import train

LOSS_HISTORY_HEADER = ["step", "L_diff", "L_prior", "L_style", "total"]

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_SAMPLER, EXIT_TRAINING, EXIT_OTHER = range(6)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_manifest(out, command, cfg, args):
    overrides = {k: getattr(args, k) for k in ("steps", "gamma", "kmax", "kmin", "condition",
                                               "n", "model", "checkpoint", "name")
                 if getattr(args, k, None) is not None}
    lines = [
        f"command = {command}",
        f"seed = {cfg.seed}",
        f"config = {args.config or '<defaults>'}",
        f"config_sha256 = {cfg.config_hash}",
        "overrides = " + " ".join(f"{k}={v}" for k, v in sorted(overrides.items())),
        f"mixdiff_version = {__version__}",
        f"numpy_version = {np.__version__}",
        f"python_version = {platform.python_version()}",
    ]
    with open(os.path.join(out, f"manifest_{command}.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _sampler_cfg(cfg, args):
    sc = cfg.sampler
    if args.steps is not None:
        sc = replace(sc, steps=args.steps)
    return sc


def _model(cfg, args, out):
    if getattr(args, "model", "analytic") == "network":
        path = args.checkpoint or os.path.join(out, "network.bin")
        return MlpScoreNetwork.load(path)
    return AnalyticScoreModel(cfg.distributions, cfg.schedule)


def _sample_rows(xs, descriptor, seed):
    return [(i, *x, descriptor, seed) for i, x in enumerate(xs)]


def _sample_header(dim):
    return ["index", *[f"x{j}" for j in range(dim)], "descriptor", "seed"]


def run_check(cfg, args, out):
    results = run_all(cfg.distributions, cfg.schedule, seed=stream_seed(cfg.seed, "check"))
    _write_csv(os.path.join(out, "check_report.csv"), ["name", "tolerance", "measured", "passed"],
               [(r.name, r.tolerance, r.measured, r.passed) for r in results])
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name}  measured={r.measured:.3e}  tolerance={r.tolerance:.1e}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


def run_train(cfg, args, out):
    tc = cfg.train if args.steps is None else replace(cfg.train, steps=args.steps)
    net = MlpScoreNetwork(random_state=stream_seed(cfg.seed, "init"), **cfg.network)
    net, history = train(net, cfg.distributions, cfg.schedule, tc)
    net.save(os.path.join(out, "network.bin"))
    _write_csv(os.path.join(out, "loss_history.csv"), LOSS_HISTORY_HEADER,
               [(int(r[0]), *r[1:]) for r in history])
    if len(history):
        print(f"trained {tc.steps} steps: total loss {history[0, -1]:.4g} -> {history[-1, -1]:.4g}")
    return EXIT_OK


def run_sample(cfg, args, out):
    label = args.condition or cfg.labels[0]
    e = cfg.embedding(label)
    sc = _sampler_cfg(cfg, args)
    model = _model(cfg, args, out)
    xs = sample(model, cfg.schedule, e, sc, size=args.n or cfg.n_samples)
    _write_csv(os.path.join(out, "samples.csv"), _sample_header(xs.shape[1]),
               _sample_rows(xs, label, sc.seed))
    return EXIT_OK


def _selected_mix(cfg, args):
    k_max = cfg.k_max if args.kmax is None else args.kmax
    k_min = cfg.k_min if args.kmin is None else args.kmin
    if args.name:
        if args.name not in cfg.mixes:
            raise ConfigError(f"no mix named {args.name!r}", field="mixes")
        mix = cfg.mixes[args.name]
    elif cfg.mixes:
        mix = next(iter(cfg.mixes.values()))
    else:
        mix = MixSpec.dual(cfg.embedding(cfg.curve.base), cfg.embedding(cfg.curve.mixin), 0.3,
                           k_max=k_max, k_min=k_min)
    changes = {}
    if args.kmax is not None:
        changes["k_max"] = args.kmax
    if args.kmin is not None:
        changes["k_min"] = args.kmin
    if args.gamma is not None:
        if len(mix.components) != 2:
            raise ConfigError("--gamma only applies to two-condition mixes", field="mixes")
        other = 1 - mix.base
        comps = list(mix.components)
        comps[mix.base] = (comps[mix.base][0], 1.0 - args.gamma)
        comps[other] = (comps[other][0], args.gamma)
        changes["components"] = comps
    try:
        return replace(mix, **changes)
    except MixdiffError as exc:
        raise ConfigError(f"MixSpec: {exc}") from None


def run_mix(cfg, args, out):
    mix = _selected_mix(cfg, args)
    sc = _sampler_cfg(cfg, args)
    model = _model(cfg, args, out)
    xs = sample_mixed(model, cfg.schedule, mix, sc, size=args.n or cfg.n_samples)
    _write_csv(os.path.join(out, "mix_samples.csv"), _sample_header(xs.shape[1]),
               _sample_rows(xs, mix.describe(), sc.seed))
    return EXIT_OK


def run_curve(cfg, args, out):
    cs = cfg.curve
    gammas = cs.gammas if args.gamma is None else (args.gamma,)
    k_max = cfg.k_max if args.kmax is None else args.kmax
    k_min = cfg.k_min if args.kmin is None else args.kmin
    probe = BayesProbe(cfg.distributions).fit()
    sc = replace(_sampler_cfg(cfg, args), seed=stream_seed(cfg.seed, "curve"))
    curve = probability_curve(_model(cfg, args, out), cfg.schedule, cfg.embedding(cs.base),
                              cfg.embedding(cs.mixin), probe, sc, gammas=gammas,
                              batch_size=cs.batch_size, k_max=k_max, k_min=k_min)
    header = ["gamma", *[f"P({lab})" for lab in curve.labels]]
    _write_csv(os.path.join(out, "curve.csv"), header,
               [(g, *row) for g, row in zip(curve.gammas, curve.means)])
    _write_csv(os.path.join(out, "curve_stderr.csv"), header,
               [(g, *row) for g, row in zip(curve.gammas, curve.stderr)])
    return EXIT_OK


def run_confusion(cfg, args, out):
    cs = cfg.confusion
    k_max = cfg.k_max if args.kmax is None else args.kmax
    k_min = cfg.k_min if args.kmin is None else args.kmin
    probe = BayesProbe(cfg.distributions).fit()
    sc = replace(_sampler_cfg(cfg, args), seed=stream_seed(cfg.seed, "probe"))
    cm = intensity_confusion(_model(cfg, args, out), cfg.schedule, cfg.embedding(cs.neutral),
                             cfg.embedding(cs.target), probe, sc, buckets=cs.buckets,
                             batches_per_bucket=cs.batches_per_bucket,
                             batch_size=cs.batch_size, k_max=k_max, k_min=k_min)
    _write_csv(os.path.join(out, "confusion.csv"), ["intended", *cm.buckets],
               [(name, *row) for name, row in zip(cm.buckets, cm.counts)])
    _write_csv(os.path.join(out, "confusion_centroids.csv"), ["bucket", f"P({cs.target})"],
               list(zip(cm.buckets, cm.centroids)))
    print(f"diagonal fraction {cm.diagonal_fraction:.3f}")
    return EXIT_OK


COMMANDS = {
    "check": run_check,
    "train": run_train,
    "sample": run_sample,
    "mix": run_mix,
    "curve": run_curve,
    "confusion": run_confusion,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="mixdiff", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML experiment config (defaults if omitted)")
        p.add_argument("--seed", type=int, help="override the global seed")
        p.add_argument("--out", help="output directory (default: $MIXDIFF_OUT or config out_dir)")
        p.add_argument("--steps", type=int,
                       help="reverse steps N; for train, the number of optimiser steps")
        p.add_argument("--gamma", type=float, help="mixed-in weight")
        p.add_argument("--kmax", type=float, help="end of the base-only phase")
        p.add_argument("--kmin", type=float, help="start of the mixed-in-only phase")
        if name in ("sample", "mix", "curve", "confusion"):
            p.add_argument("--model", choices=("analytic", "network"), default="analytic")
            p.add_argument("--checkpoint", help="network file (default: <out>/network.bin)")
        if name in ("sample", "mix"):
            p.add_argument("--n", type=int, help="number of samples")
        if name == "sample":
            p.add_argument("--condition", help="condition label")
        if name == "mix":
            p.add_argument("--name", help="mix name from the config")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed)
        out = args.out or cfg.out_dir
        os.makedirs(out, exist_ok=True)
        status = COMMANDS[args.command](cfg, args, out)
        _write_manifest(out, args.command, cfg, args)
        return status
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SamplerDivergenceError as exc:
        print(f"sampler error: {exc}", file=sys.stderr)
        return EXIT_SAMPLER
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (MixdiffError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
