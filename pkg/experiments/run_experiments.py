import os
import sys
import logging
import argparse

import pandas as pd

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import util
from algorithms import rde, simulator
from algorithms.cumulant import fz_constants, sigma1_sq, theta_star
from algorithms.displacement import GaussianBinary, nu, nu_monte_carlo
from config import PRESET_DEFAULTS, load_config
from errors import BrwError, ConfigError
from experiments.report import make_report
from runners import run_preset

logger = logging.getLogger("run_experiments")

EXIT_CONFIG = 2
EXIT_ERROR = 3


def _models(args):
    """Gaussian models from --sigma, otherwise the config's (or the preset default's) models"""
    if getattr(args, "sigma", None):
        return tuple(GaussianBinary(s) for s in args.sigma)
    return _config(args, "theta-star").models


def _config(args, preset):
    return load_config(args.config, getattr(args, "preset", None) or (None if args.config else preset),
                       seed=args.seed, workers=args.workers, out=args.out, fmt=args.format)


def cmd_theta_star(args):
    for model in _models(args):
        tilt = theta_star(model)
        print("inf" if tilt.infinite else f"{tilt.value:.10f}")
    return 0


def cmd_nu(args):
    for model in _models(args):
        value = nu(model, args.a) if model.log_mgf(0.0) is not None else None
        if value is not None:
            print(f"{value:.10f}")
        else:
            estimate = nu_monte_carlo(model, args.a)
            print(f"{estimate.value:.10f} ± {estimate.stderr:.2e}")
    return 0


def cmd_constants(args):
    constants = fz_constants(args.sigma1, args.sigma2)
    for name in ("lpm_linear", "lpm_log", "fz_linear", "fz_log", "offset"):
        print(f"{name}: {getattr(constants, name):.7f}")
    tilt = theta_star(GaussianBinary(args.sigma1))
    print(f"theta_1: {tilt.value:.10f}")
    print(f"sigma1_sq: {sigma1_sq(GaussianBinary(args.sigma1), tilt.value).value:.7f}")
    return 0


def cmd_simulate(args):
    config = _config(args, "coupling")
    theta = config.resolved_theta()
    os.makedirs(config.output_dir, exist_ok=True)
    ext = "csv" if config.fmt == "csv" else "jsonl"
    first = 0
    for schedule in config.schedules():
        run_config = simulator.RunConfig(config.models, schedule, theta, topk=config.topk,
                                         particle_budget=config.particle_budget, chunk_size=config.chunk_size,
                                         waive_assumptions=config.waive_assumptions)
        results = simulator.batch(run_config, config.reps, config.master_seed, config.workers, first)
        table = simulator.to_table(results, config.topk, first)
        util.write_table(table, os.path.join(config.output_dir, f"{config.preset}_n{schedule.n}.{ext}"), config.fmt)
        first += config.reps
    return 0


def cmd_rde(args):
    config = _config(args, "rde-match")
    theta = config.resolved_theta()
    pop, _ = rde.population_dynamics(config.models[0], theta, config.rde["population"], config.rde["iterations"],
                                     util.stream(config.master_seed, 0, "rde"))
    os.makedirs(config.output_dir, exist_ok=True)
    ext = "csv" if config.fmt == "csv" else "jsonl"
    util.write_table(pd.DataFrame({"pool": pop.pool}), os.path.join(config.output_dir, f"rde_pool.{ext}"),
                     config.fmt)
    util.write_table(pd.DataFrame({"h_hat": rde.h_hat_subcritical(pop, theta)}),
                     os.path.join(config.output_dir, f"rde_h_hat.{ext}"), config.fmt)
    print(f"mean {pop.mean:.6f} (drift se {pop.drift_stderr:.6f}), mean log {pop.mean_log:.6f}")
    return 0


def cmd_verify(args):
    config = load_config(args.config, args.preset, seed=args.seed, workers=args.workers, out=args.out,
                         fmt=args.format)
    return run_preset(config)


def cmd_report(args):
    make_report(args.dir)
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', dest='config', help='yaml config file')
    common.add_argument('--seed', type=int, default=None, help='master seed (overrides config and LPMBRW_SEED)')
    common.add_argument('--workers', type=int, default=None,
                        help='worker processes (overrides config and LPMBRW_WORKERS)')
    common.add_argument('--out', default=None, help='output directory')
    common.add_argument('--format', choices=["csv", "json-lines"], default=None)
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('--verbose', '-v', action='store_true')
    verbosity.add_argument('--quiet', '-q', action='store_true')

    parser = argparse.ArgumentParser(description='Last-progeny modified branching random walk experiments')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('theta-star', parents=[common], help='critical tilt of every block')
    p.add_argument('--sigma', type=float, nargs='+', help='gaussian_binary blocks instead of a config')
    p.set_defaults(func=cmd_theta_star)

    p = sub.add_parser('nu', parents=[common], help='log-Laplace transform of every block at a')
    p.add_argument('--a', type=float, required=True)
    p.add_argument('--sigma', type=float, nargs='+', help='gaussian_binary blocks instead of a config')
    p.set_defaults(func=cmd_nu)

    p = sub.add_parser('constants', parents=[common], help='constants of the two-block Gaussian example')
    p.add_argument('--sigma1', type=float, default=2.0)
    p.add_argument('--sigma2', type=float, default=1.0)
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser('simulate', parents=[common], help='replicate batches written as run tables')
    p.add_argument('--preset', choices=sorted(PRESET_DEFAULTS), default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('rde', parents=[common], help='population dynamics pool and its H-hat sample')
    p.add_argument('--preset', choices=sorted(PRESET_DEFAULTS), default=None)
    p.set_defaults(func=cmd_rde)

    p = sub.add_parser('verify', parents=[common], help='run a preset and write its verdict')
    p.add_argument('preset', choices=sorted(PRESET_DEFAULTS))
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser('report', parents=[common], help='mean ± std tables for every run table in DIR')
    p.add_argument('dir')
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        return args.func(args)
    except ConfigError as e:
        logger.error("config error: %s", e)
        return EXIT_CONFIG
    except BrwError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
