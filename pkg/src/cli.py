"""
Command-line interface: channel generation, multi-start runs, SNR sweeps,
the zero-forcing gap study and report rendering.

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 more than half of
the runs failed to converge.
"""

import argparse
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from src.channel import SystemConfig, generate_channels
from src.config import get_available_presets, load_config, load_config_file
from src.errors import ConfigError, PersistenceError, SchemaVersionError
from src.experiments import (
    DEFAULT_CLUSTER_TOL,
    DEFAULT_RATE_TOL,
    UNCONVERGED,
    cluster_fixed_points,
    cluster_trajectories,
    convergence_failure_fraction,
    multi_start,
    snr_sweep,
    zf_gap_study,
)
from src.persistence import (
    load_channels,
    read_sweep_frame,
    save_channels,
    save_run,
    write_json,
    write_sweep_csv,
    write_trace_csv,
)
from src.report import load_results, render_markdown, write_report
from src.solvers import ALGORITHMS, get_solver

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_CONVERGENCE = 4

SEED_ENV = 'BEAMALIGN_SEED'
MAX_FAILURE_FRACTION = 0.5
DEFAULT_GAP_SNR_DB = 60.0


def parse_snr_range(text):
    """
    Parse ``start:step:stop`` (inclusive) or a single value into a list of dB values.
    """
    parts = str(text).split(':')
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f'invalid SNR specification {text!r}; expected start:step:stop or a number')
    if len(values) == 1:
        return values
    if len(values) != 3:
        raise ConfigError(f'invalid SNR range {text!r}; expected start:step:stop')
    start, step, stop = values
    if step <= 0 or stop < start:
        raise ConfigError(f'invalid SNR range {text!r}; need step > 0 and stop >= start')
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [start + i * step for i in range(count)]


@dataclass
class CliConfig:
    """
    Resolved settings for one command: preset values, then config file
    values, then command-line flags, then the BEAMALIGN_SEED variable.
    """

    K: int = 3
    M: int = 4
    d: int = 2
    seed: int = 2024
    channel_seed: int = 7
    snr_db: str = '0:10:80'
    inits: int = 500
    n_channels: int = 100
    cluster_tol: float = DEFAULT_CLUSTER_TOL
    rate_tol: float = DEFAULT_RATE_TOL
    out: str = 'results'
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    solvers: dict = field(default_factory=dict)

    @classmethod
    def keys(cls):
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def resolve(cls, args, env=None):
        env = os.environ if env is None else env
        values = {}
        if getattr(args, 'preset', None):
            values.update(load_config(args.preset))
        if getattr(args, 'config', None):
            try:
                values.update(load_config_file(args.config, cls.keys()))
            except OSError as e:
                raise PersistenceError(args.config, f'cannot read config file ({e.strerror})') from e
        unknown = sorted(set(values) - set(cls.keys()))
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
        for key in cls.keys():
            flag = getattr(args, key, None)
            if flag is not None:
                values[key] = flag
        if env.get(SEED_ENV):
            try:
                values['seed'] = int(env[SEED_ENV])
            except ValueError:
                raise ConfigError(f'{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}')
        config = cls(**values)
        config.validate()
        return config

    def validate(self):
        for name in ('K', 'M', 'd', 'inits', 'n_channels', 'workers'):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f'{name} must be a positive integer, got {value!r}')
        if self.cluster_tol <= 0 or self.rate_tol <= 0:
            raise ConfigError('cluster_tol and rate_tol must be positive')
        if not isinstance(self.solvers, dict):
            raise ConfigError('solvers must be a mapping of solver options')
        parse_snr_range(self.snr_db)
        self.system()

    def system(self, snr_db=None):
        cfg = SystemConfig(K=self.K, M=self.M, d=self.d)
        return cfg if snr_db is None else cfg.with_snr_db(snr_db)

    def solver(self, algo):
        return get_solver(algo, config={'solvers': self.solvers})

    @property
    def snr_list(self):
        return parse_snr_range(self.snr_db)


def _banner(title):
    print('=' * 60)
    print(title)
    print('=' * 60)


def _channels_for(config, path):
    ch = load_channels(path)
    if (ch.K, ch.M) != (config.K, config.M):
        logger.info('Using K=%d, M=%d from %s', ch.K, ch.M, path)
        config.K, config.M = ch.K, ch.M
        config.validate()
    return ch


def cmd_gen_channels(args):
    config = CliConfig.resolve(args)
    cfg = config.system()
    cfg.check_operating_point()
    # --seed (or BEAMALIGN_SEED) names the channel seed unless --channel-seed is given.
    seed_given = args.seed is not None or bool(os.environ.get(SEED_ENV))
    channel_seed = config.seed if seed_given and args.channel_seed is None else config.channel_seed
    ch = generate_channels(cfg, channel_seed)
    out = args.out or os.path.join(config.out, 'channels.json')
    save_channels(ch, out)

    print(f'Channels for K={cfg.K}, M={cfg.M}, d={cfg.d} with seed {ch.seed}')
    cond = ch.condition_numbers()
    for k in range(cfg.K):
        print('  ' + '  '.join(f'{cond[k, l]:10.2f}' for l in range(cfg.K)))
    print(f'Saved to {out}')
    return EXIT_OK


def _print_clusters(clusters, n_runs):
    n_converged = sum(c.count for c in clusters)
    print(f"\n{'Mode':<6}{'Rate (bits)':>14}{'Occupancy (%)':>16}{'Count':>8}")
    for c in clusters:
        print(f'{c.label:<6}{c.mean_rate:>14.2f}{c.occupancy_percent(n_converged):>16.1f}{c.count:>8d}')
    print(f"\n{len(clusters)} clusters, {n_converged}/{n_runs} runs converged")
    if clusters and 'water_level' in clusters[0].representative.details:
        best = clusters[0].representative
        print(f"Water level of {clusters[0].label}: {best.details['water_level']:.2f}")


def cmd_run(args):
    config = CliConfig.resolve(args)
    ch = _channels_for(config, args.channels)
    snr_list = config.snr_list
    if len(snr_list) != 1:
        raise ConfigError('run takes a single SNR value; use sweep for ranges')
    cfg = config.system(snr_list[0])
    solver = config.solver(args.algo)

    _banner(f'{solver.name} on K={cfg.K}, M={cfg.M}, d={cfg.d} at {snr_list[0]:.2f} dB')
    solutions = multi_start(ch, cfg, solver, config.inits, config.seed, workers=config.workers)
    clusters = cluster_fixed_points(solutions, config.cluster_tol, config.rate_tol)
    _print_clusters(clusters, len(solutions))

    out = args.out or os.path.join(config.out, f'run_{solver.name}.json')
    meta = {
        'algorithm': solver.name,
        'snr_db': snr_list[0],
        'seed': config.seed,
        'channel_seed': ch.seed,
        'inits': config.inits,
    }
    save_run(out, solutions, clusters, meta)
    print(f'Saved to {out}')
    if args.trace_out and solutions[0].trace:
        write_trace_csv(solutions[0].trace, args.trace_out)

    failed = convergence_failure_fraction(solutions)
    if failed > MAX_FAILURE_FRACTION:
        print(f'{100 * failed:.1f}% of runs did not converge', file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


def _completed_snrs(out, algorithm, channel_seed, inits):
    if not os.path.exists(out):
        return set()
    frame = read_sweep_frame(out)
    rows = frame[(frame['algorithm'] == algorithm) & (frame['channel_seed'].astype(str) == str(channel_seed))]
    counts = rows.groupby('snr_db').size()
    return {float(snr) for snr, n in counts.items() if n >= inits}


def cmd_sweep(args):
    config = CliConfig.resolve(args)
    ch = _channels_for(config, args.channels)
    cfg = config.system()
    solver = config.solver(args.algo)
    out = args.out or os.path.join(config.out, f'sweep_{solver.name}.csv')

    done = _completed_snrs(out, solver.name, ch.seed, config.inits)
    pending = [s for s in config.snr_list if float(s) not in done]
    _banner(f'SNR sweep of {solver.name} on K={cfg.K}, M={cfg.M}, d={cfg.d}')
    if done:
        print(f'Resuming: {len(done)} SNR points already in {out}')

    failures = 0
    total = 0
    for snr_db in pending:
        records = snr_sweep(ch, cfg, solver, [snr_db], config.inits, config.seed,
                            workers=config.workers, cluster_tol=config.cluster_tol,
                            rate_tol=config.rate_tol)
        write_sweep_csv(records, out, append=True)
        n_failed = sum(r.cluster_id == UNCONVERGED for r in records)
        failures += n_failed
        total += len(records)
        n_modes = len({r.cluster_id for r in records} - {UNCONVERGED})
        print(f'{snr_db:8.2f} dB: {n_modes} clusters, {len(records) - n_failed}/{len(records)} converged')

    trajectories = cluster_trajectories(read_sweep_frame(out))
    crossing = int((trajectories['transitions'] > 0).sum())
    print(f"\n{crossing} of {len(trajectories)} initializations change cluster across SNR")
    print(f'Saved to {out}')
    if total and failures / total > MAX_FAILURE_FRACTION:
        print(f'{100 * failures / total:.1f}% of runs did not converge', file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


def cmd_zf_gap(args):
    config = CliConfig.resolve(args)
    cfg = config.system()
    snr_list = config.snr_list
    if args.snr_db is not None and len(snr_list) != 1:
        raise ConfigError('zf-gap takes a single SNR value')
    snr_db = snr_list[0] if len(snr_list) == 1 else DEFAULT_GAP_SNR_DB
    solver = config.solver('iia')

    _banner(f'Zero-forcing outer filter gap, K={cfg.K}, M={cfg.M}, d={cfg.d}')
    report = zf_gap_study(cfg, config.n_channels, snr_db, config.seed,
                          iia_options=solver.options, workers=config.workers)
    print(f'SNR: {report.snr_db:.2f} dB')
    print(f'Channels used: {report.n_used} (skipped {report.skipped})')
    print(f'Mean gap: {report.mean:.2f} bits (std error {report.std_error:.2f})')
    print(f'Theoretical gap: {report.theoretical:.2f} bits')
    if args.out:
        write_json(
            {'snr_db': report.snr_db, 'gaps': report.gaps, 'mean': report.mean,
             'std_error': report.std_error, 'theoretical': report.theoretical,
             'skipped': report.skipped},
            args.out, 'zf_gap',
        )
        print(f'Saved to {args.out}')
    if report.n_used == 0 or report.skipped > MAX_FAILURE_FRACTION * config.n_channels:
        return EXIT_CONVERGENCE
    return EXIT_OK


def cmd_report(args):
    frame = load_results(args.input)
    formats = args.format or ['md']
    out_dir = args.out or (args.input if os.path.isdir(args.input) else os.path.dirname(args.input) or '.')
    paths = write_report(frame, out_dir, formats)
    if 'md' in formats:
        print(render_markdown(frame))
    for path in paths:
        print(f'Saved to {path}')
    return EXIT_OK


def _add_common(parser):
    parser.add_argument('--preset', type=str, default=None, choices=get_available_presets(),
                        help='Configuration preset')
    parser.add_argument('--config', type=str, default=None, help='YAML config file')
    parser.add_argument('--seed', type=int, default=None, help='Master random seed')
    parser.add_argument('--workers', type=int, default=None, help='Worker processes (1 = serial)')


def _add_dims(parser):
    parser.add_argument('--K', type=int, default=None, help='Number of users')
    parser.add_argument('--M', type=int, default=None, help='Antennas per node')
    parser.add_argument('--d', type=int, default=None, help='Streams per user')


def build_parser():
    parser = argparse.ArgumentParser(prog='beamalign', description='MIMO interference channel beamforming toolkit')
    parser.add_argument('--log-level', type=str, default='WARNING',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='Logging level')
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('gen-channels', help='Draw and save a random channel set')
    _add_common(gen)
    _add_dims(gen)
    gen.add_argument('--channel-seed', dest='channel_seed', type=int, default=None,
                     help='Channel seed (defaults to --seed when given)')
    gen.add_argument('--out', type=str, default=None, help='Output JSON file')
    gen.set_defaults(func=cmd_gen_channels)

    run = sub.add_parser('run', help='Multi-start run of one algorithm with clustering')
    _add_common(run)
    run.add_argument('--d', type=int, default=None, help='Streams per user')
    run.add_argument('--algo', type=str, required=True, choices=ALGORITHMS)
    run.add_argument('--channels', type=str, required=True, help='Channel JSON file')
    run.add_argument('--snr-db', dest='snr_db', type=str, default=None, help='SNR in dB')
    run.add_argument('--inits', type=int, default=None, help='Random initializations')
    run.add_argument('--trace-out', dest='trace_out', type=str, default=None,
                     help='CSV file for the first run\'s iteration trace')
    run.add_argument('--out', type=str, default=None, help='Output JSON file')
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser('sweep', help='SNR sweep with per-point clustering (resumable)')
    _add_common(sweep)
    sweep.add_argument('--d', type=int, default=None, help='Streams per user')
    sweep.add_argument('--algo', type=str, required=True, choices=ALGORITHMS)
    sweep.add_argument('--channels', type=str, required=True, help='Channel JSON file')
    sweep.add_argument('--snr-db', dest='snr_db', type=str, default=None, help='SNR range start:step:stop')
    sweep.add_argument('--inits', type=int, default=None, help='Random initializations')
    sweep.add_argument('--out', type=str, default=None, help='Output CSV file')
    sweep.set_defaults(func=cmd_sweep)

    gap = sub.add_parser('zf-gap', help='Zero-forcing outer filter gap study')
    _add_common(gap)
    _add_dims(gap)
    gap.add_argument('--channels', dest='n_channels', type=int, default=None, help='Number of channels')
    gap.add_argument('--snr-db', dest='snr_db', type=str, default=None, help='SNR in dB')
    gap.add_argument('--out', type=str, default=None, help='Optional output JSON file')
    gap.set_defaults(func=cmd_zf_gap)

    rep = sub.add_parser('report', help='Render stored sweep results')
    rep.add_argument('--in', dest='input', type=str, required=True, help='Sweep CSV or results directory')
    rep.add_argument('--format', type=str, action='append', choices=['md', 'csv', 'svg'],
                     help='Output format (repeatable)')
    rep.add_argument('--out', type=str, default=None, help='Output directory')
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format='%(levelname)s %(name)s: %(message)s')

    try:
        return args.func(args)
    except ConfigError as e:
        print(f'Configuration error: {e}', file=sys.stderr)
        return EXIT_CONFIG
    except (PersistenceError, SchemaVersionError, OSError) as e:
        print(f'I/O error: {e}', file=sys.stderr)
        return EXIT_IO
