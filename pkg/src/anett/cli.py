"""Command line interface: ``anett <subcommand> [options]``.

Every option can also be given in a flat ``key = value`` file passed with
``--config``; explicit command-line flags take precedence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments, grid, net, phantoms, training
from .regularizer import IdentityPrior, NetworkPrior
from .solver import TABLE1, SolverConfig, SolverError, admm_solve
from .tomo import Geometry, IdentityOperator, RadonOperator

log = logging.getLogger("anett")

SOLVER_KEYS = ("alpha", "c", "rho", "outer", "inner", "stepsize", "momentum")


class CliError(Exception):
    pass


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.exists():
        raise CliError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# -- parser -----------------------------------------------------------------------


def _common(p):
    p.add_argument("--config", help="flat key = value file with option defaults")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _solver_opts(p):
    p.add_argument("--scenario", default="noise-free", help="tag selecting the default solver parameters")
    for key, typ in zip(SOLVER_KEYS, (float, float, float, int, int, float, float)):
        p.add_argument(f"--{key}", type=typ, help=f"override the scenario's {key}")


def _geometry_opts(p):
    p.add_argument("--n-angles", type=int, default=60)
    p.add_argument("--n-detectors", type=int)


def _train_opts(p):
    p.add_argument("--data", help="dataset directory written by make-data")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit-train", type=int, help="use only the first N training images")
    p.add_argument("--limit-val", type=int, help="use only the first N validation images")
    p.add_argument("--out", help="parameter file to write")
    p.add_argument("--log", help="training log (defaults to OUT with suffix .log)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anett", description="Sparse aNETT reconstruction for sparse-view CT.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("make-data", help="generate random ellipse phantoms")
    _common(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--train", type=int, default=phantoms.DEFAULT_COUNTS[0])
    p.add_argument("--val", type=int, default=phantoms.DEFAULT_COUNTS[1])
    p.add_argument("--test", type=int, default=phantoms.DEFAULT_COUNTS[2])

    p = sub.add_parser("train-ae", help="train the sparse denoising autoencoder")
    _common(p)
    _train_opts(p)
    p.add_argument("--eta", type=float, default=1e-3)
    p.add_argument("--beta", type=float, default=1e-5)

    p = sub.add_parser("train-adapter", help="train the operator adapter on FBP artifacts")
    _common(p)
    _train_opts(p)
    _geometry_opts(p)
    p.add_argument("--ae", help="trained autoencoder parameters")
    p.add_argument("--gamma", type=float, default=1e-5)

    p = sub.add_parser("reconstruct", help="aNETT reconstruction of a single data file")
    _common(p)
    p.add_argument("--input", help="sinogram (or image for --operator identity) grid file")
    p.add_argument("--out", help="reconstruction grid file to write")
    p.add_argument("--log", help="ADMM log (defaults to OUT with suffix .log)")
    p.add_argument("--n", type=int, default=128, help="image side for the Radon operator")
    p.add_argument("--operator", choices=("radon", "identity"), default="radon")
    p.add_argument("--prior", choices=("network", "identity"), default="network")
    p.add_argument("--ae")
    p.add_argument("--adapter")
    p.add_argument("--init", choices=("network", "zero"), default="network",
                   help="start from N(K# y) or from zero")
    _solver_opts(p)

    for name, help_text in (("benchmark", "run a reconstruction scenario on the test set"),
                            ("convergence-study", "noise-level sweep with alpha proportional to delta")):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        p.add_argument("--data")
        p.add_argument("--ae")
        p.add_argument("--adapter")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        _geometry_opts(p)
        if name == "benchmark":
            _solver_opts(p)
            p.add_argument("--n-test", type=int)
            p.add_argument("--workers", type=int, default=1)
            p.add_argument("--noise-level", type=float, default=0.05)
            p.add_argument("--disc-radius", type=float, default=0.08)
            p.add_argument("--disc-intensity", type=float, default=1.0)
        else:
            for key, typ in zip(SOLVER_KEYS[1:], (float, float, int, int, float, float)):
                p.add_argument(f"--{key}", type=typ)
            p.add_argument("--levels", type=int, default=5)
            p.add_argument("--delta0", type=float, default=0.05)
            p.add_argument("--tau", type=float)
            p.add_argument("--phantom-index", type=int, default=0)
            p.add_argument("--smoothing", type=float, default=1e-6)

    p = sub.add_parser("inspect", help="print model, grid or configuration summaries")
    _common(p)
    p.add_argument("--model", action="append", default=[], help="parameter file (repeatable)")
    p.add_argument("--grid", action="append", default=[], help="grid file (repeatable)")
    p.add_argument("--scenario", help="print the default solver parameters of a scenario")
    return parser


def _apply_config(parser, args, argv):
    """Re-parse with the config file's values installed as defaults."""
    values = read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        if key in ("config", "help") or key not in actions:
            raise CliError(f"unknown option {key!r} in {args.config}")
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = _bool(value)
        elif isinstance(action, argparse._AppendAction):
            defaults[key] = [v.strip() for v in value.split(",") if v.strip()]
        else:
            defaults[key] = value  # converted by argparse like a command-line string
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# -- helpers ------------------------------------------------------------------------


def _need(args, *names):
    for name in names:
        if getattr(args, name) in (None, ""):
            raise CliError(f"missing required option --{name.replace('_', '-')}")


def _model(path, kind=None):
    if path is None or not Path(path).exists():
        raise CliError(f"model file not found: {path}")
    params = net.load_params(path)
    if kind and params.arch.get("kind") != kind:
        raise CliError(f"{path} holds a {params.arch.get('kind')} network, expected {kind}")
    return params


def _solver_config(args) -> SolverConfig:
    if args.scenario not in TABLE1:
        raise CliError(f"unknown scenario {args.scenario!r}; choose from {', '.join(TABLE1)}")
    overrides = {k: getattr(args, k) for k in SOLVER_KEYS if getattr(args, k) is not None}
    return SolverConfig.for_scenario(args.scenario, **overrides)


def _limit(images, n):
    return images if n is None else images[:n]


def _write_log(path, lines):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def _out_path(args, default_name):
    if args.out:
        return Path(args.out)
    return experiments.default_output_dir() / default_name


# -- commands -------------------------------------------------------------------------


def cmd_make_data(args):
    out = _out_path(args, "data")
    manifest = experiments.write_dataset(out, args.seed, (args.train, args.val, args.test), args.n)
    print(f"wrote {args.train + args.val + args.test} phantoms, manifest {manifest}")


def cmd_train_ae(args):
    _need(args, "data")
    cfg = training.TrainConfig(eta=args.eta, beta=args.beta, epochs=args.epochs, batch_size=args.batch_size,
                               lr=args.lr, seed=args.seed)
    train = _limit(experiments.read_dataset(args.data, "train"), args.limit_train)
    val = _limit(experiments.read_dataset(args.data, "val"), args.limit_val)
    result = training.train_autoencoder(train, val, cfg)
    out = _out_path(args, "ae.net")
    out.parent.mkdir(parents=True, exist_ok=True)
    net.save_params(result.params, out)
    _write_log(args.log or out.with_suffix(".log"), result.log_lines())
    log.info("training took %.1f s", result.seconds)
    print(f"best epoch {result.best_epoch} val loss {result.best_val_loss!r}, wrote {out}")


def cmd_train_adapter(args):
    _need(args, "data")
    theta = _model(args.ae, "autoencoder")
    cfg = training.TrainConfig(gamma=args.gamma, epochs=args.epochs, batch_size=args.batch_size,
                               lr=args.lr, seed=args.seed)
    train = _limit(experiments.read_dataset(args.data, "train"), args.limit_train)
    val = _limit(experiments.read_dataset(args.data, "val"), args.limit_val)
    geom = Geometry(n=train.shape[1], n_angles=args.n_angles, n_detectors=args.n_detectors)
    v, u = training.make_adapter_dataset(train, geom)
    val_v, val_u = training.make_adapter_dataset(val, geom)
    result = training.train_adapter(v, u, val_v, val_u, theta, cfg)
    out = _out_path(args, "adapter.net")
    out.parent.mkdir(parents=True, exist_ok=True)
    net.save_params(result.params, out)
    _write_log(args.log or out.with_suffix(".log"), result.log_lines())
    log.info("training took %.1f s", result.seconds)
    print(f"best epoch {result.best_epoch} val loss {result.best_val_loss!r}, wrote {out}")


def cmd_reconstruct(args):
    _need(args, "input")
    if not Path(args.input).exists():
        raise CliError(f"input file not found: {args.input}")
    y = grid.read_grid(args.input)
    cfg = _solver_config(args)
    if args.operator == "identity":
        op = IdentityOperator(y.shape)
    else:
        geom = Geometry(n=args.n, n_angles=y.shape[0], n_detectors=y.shape[1])
        op = RadonOperator(geom)
    if args.prior == "identity":
        prior = IdentityPrior()
    else:
        theta = _model(args.ae, "autoencoder")
        kappa = _model(args.adapter, "adapter") if args.adapter else None
        prior = NetworkPrior(theta, kappa)
    u0 = None
    if args.init == "zero":
        u0 = np.zeros_like(op.adjoint(y))
    u, diag = admm_solve(y, op, prior, cfg, u0=u0)
    out = _out_path(args, "reconstruction.grd")
    out.parent.mkdir(parents=True, exist_ok=True)
    grid.write_grid(u, out)
    _write_log(args.log or out.with_suffix(".log"), diag.lines())
    print(f"objective {diag.objective[-1]!r} data residual {diag.data_residual[-1]!r}, wrote {out}")


def _scenario_config(args, scenario) -> experiments.ScenarioConfig:
    _need(args, "data")
    for path in (args.ae, args.adapter):
        if path is None or not Path(path).exists():
            raise CliError(f"model file not found: {path}")
    overrides = {k: getattr(args, k) for k in SOLVER_KEYS if getattr(args, k, None) is not None}
    kw = dict(scenario=scenario, ae_path=args.ae, adapter_path=args.adapter, data_dir=args.data,
              out_dir=str(_out_path(args, scenario)), n_angles=args.n_angles, n_detectors=args.n_detectors,
              seed=args.seed, solver=overrides)
    if scenario == "convergence-study":
        kw.update(levels=args.levels, delta0=args.delta0, tau=args.tau, phantom_index=args.phantom_index,
                  smoothing=args.smoothing)
    else:
        kw.update(n_test=args.n_test, workers=args.workers, noise_level=args.noise_level,
                  disc_radius=args.disc_radius, disc_intensity=args.disc_intensity)
    try:
        return experiments.ScenarioConfig(**kw)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def cmd_benchmark(args):
    if args.scenario not in TABLE1:
        raise CliError(f"unknown scenario {args.scenario!r}; choose from {', '.join(TABLE1)}")
    cfg = _scenario_config(args, args.scenario)
    report = experiments.run_scenario(cfg)
    for method in experiments.METHODS:
        print(f"{method} median psnr {report.median(method, 'psnr'):.4f} "
              f"data residual {report.median(method, 'data_residual'):.6g}")
    print(f"{len(report.failures)} failures, wrote {cfg.output_dir() / 'metrics.txt'}")


def cmd_convergence_study(args):
    cfg = _scenario_config(args, "convergence-study")
    rep = experiments.convergence_study(cfg)
    for line in rep.lines():
        print(line)


def cmd_inspect(args):
    if not (args.model or args.grid or args.scenario or args.config):
        raise CliError("nothing to inspect; give --model, --grid, --scenario or --config")
    if args.config:
        print(f"config {args.config}")
        for key, value in read_config(args.config).items():
            print(f"  {key} = {value}")
    for path in args.model:
        params = _model(path)
        print(f"model {path}")
        print(f"  arch {json.dumps(params.arch, sort_keys=True)}")
        print(f"  seed {params.seed}")
        print(f"  parameters {params.n_params}")
        for name, arr in params.arrays.items():
            print(f"  {name} {'x'.join(map(str, arr.shape))}")
    for path in args.grid:
        if not Path(path).exists():
            raise CliError(f"grid file not found: {path}")
        header = grid.read_grid_header(path)
        print(f"grid {path}")
        for key, value in header.items():
            print(f"  {key} {value}")
    if args.scenario:
        if args.scenario not in TABLE1:
            raise CliError(f"unknown scenario {args.scenario!r}; choose from {', '.join(TABLE1)}")
        print(f"scenario {args.scenario}")
        for key, value in TABLE1[args.scenario].items():
            print(f"  {key} {value}")


COMMANDS = {
    "make-data": cmd_make_data,
    "train-ae": cmd_train_ae,
    "train-adapter": cmd_train_adapter,
    "reconstruct": cmd_reconstruct,
    "benchmark": cmd_benchmark,
    "convergence-study": cmd_convergence_study,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        if args.config:
            args = _apply_config(parser, args, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except (CliError, FileNotFoundError, ValueError, grid.GridFileError, SolverError,
            training.TrainingDiverged) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"anett {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0
