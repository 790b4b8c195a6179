"""
Monte Carlo orchestration: multi-start runs, fixed-point clustering, SNR
sweeps and the zero-forcing outer-filter gap study.

Every task draws its randomness from a seed derived from the master seed
with ``numpy.random.SeedSequence``, so results do not depend on the number
of workers or on completion order.
"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import digamma

from src.alignment import iia, two_layer_design, zero_forcing_outer
from src.channel import generate_channels, orthonormalize_blocks, random_beamformers
from src.errors import SingularEquivalentChannel
from src.metrics import chordal_distance
from src.solvers import get_solver

logger = logging.getLogger(__name__)

DEFAULT_CLUSTER_TOL = 1e-2
DEFAULT_RATE_TOL = 0.1
UNCONVERGED = 'unconverged'


@dataclass
class FixedPointCluster:
    """
    Converged solutions sharing (per user) V subspaces and sum rate.

    ``members`` indexes into the solution list the clusters were built from.
    """

    representative: object
    count: int = 1
    mean_rate: float = 0.0
    members: List[int] = field(default_factory=list)
    label: str = ''

    @property
    def subspace_signature(self):
        return orthonormalize_blocks(self.representative.beamformers.V)

    def occupancy_percent(self, n_converged):
        return 100.0 * self.count / n_converged if n_converged else float('nan')


@dataclass(frozen=True)
class SweepRecord:
    snr_db: float
    algorithm: str
    cluster_id: str
    rate_bits: float
    occupancy_percent: float
    channel_seed: object
    init_seed: int


@dataclass(frozen=True)
class ZfGapReport:
    """Per-channel rate gaps between optimal and zero-forcing outer coders."""

    gaps: np.ndarray
    theoretical: float
    skipped: int
    snr_db: float

    @property
    def mean(self):
        return float(np.mean(self.gaps)) if self.gaps.size else float('nan')

    @property
    def std_error(self):
        if self.gaps.size < 2:
            return float('nan')
        return float(np.std(self.gaps, ddof=1) / np.sqrt(self.gaps.size))

    @property
    def n_used(self):
        return int(self.gaps.size)


def task_seeds(seed, n):
    """n independent 32-bit seeds derived from a master seed."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def _run_one(solver, ch, cfg, init_seed):
    init = solver.initialize_from_seed(cfg, init_seed)
    solution = solver.solve(ch, cfg, init)
    solution.details['init_seed'] = init_seed
    return solution


def multi_start(ch, cfg, algo, n_inits, seed, options=None, workers=1):
    """
    Run one algorithm from ``n_inits`` random initializations.

    Parameters:
    -----------
    ch : ChannelSet
    cfg : SystemConfig
    algo : str or BaseSolver
        Algorithm name or a configured solver.
    n_inits : int
    seed : int
        Master seed for the initialization sequence.
    options : dict or options dataclass, optional
    workers : int
        joblib worker count; 1 runs serially.

    Returns:
    --------
    solutions : list of Solution
        In initialization order; ``details['init_seed']`` records each seed.
    """
    if n_inits < 1:
        raise ValueError(f'n_inits must be >= 1, got {n_inits}')
    solver = get_solver(algo, options) if isinstance(algo, str) else algo
    seeds = task_seeds(seed, n_inits)
    solutions = Parallel(n_jobs=workers)(
        delayed(_run_one)(solver, ch, cfg, s) for s in seeds
    )
    failed = sum(not s.converged for s in solutions)
    if failed:
        logger.warning('%s: %d of %d runs did not converge', solver.name, failed, n_inits)
    return list(solutions)


def _close(a, b, cluster_tol, rate_tol):
    if abs(a.sum_rate - b.sum_rate) >= rate_tol:
        return False
    Va = orthonormalize_blocks(a.beamformers.V)
    Vb = orthonormalize_blocks(b.beamformers.V)
    return all(chordal_distance(Va[k], Vb[k]) <= cluster_tol for k in range(Va.shape[0]))


def cluster_fixed_points(solutions, cluster_tol=DEFAULT_CLUSTER_TOL, rate_tol=DEFAULT_RATE_TOL):
    """
    Greedy clustering of converged solutions.

    A solution joins the first cluster whose representative is within
    ``cluster_tol`` chordal distance on every user's V subspace and within
    ``rate_tol`` bits of sum rate; otherwise it opens a new cluster.
    Clusters are sorted by descending mean rate and labeled F1, F2, ...

    Non-converged solutions are skipped.
    """
    clusters = []
    rates = []
    for index, solution in enumerate(solutions):
        if not solution.converged:
            continue
        for cluster, cluster_rates in zip(clusters, rates):
            if _close(cluster.representative, solution, cluster_tol, rate_tol):
                cluster.members.append(index)
                cluster_rates.append(solution.sum_rate)
                break
        else:
            clusters.append(FixedPointCluster(representative=solution, members=[index]))
            rates.append([solution.sum_rate])

    for cluster, cluster_rates in zip(clusters, rates):
        cluster.count = len(cluster.members)
        cluster.mean_rate = float(np.mean(cluster_rates))
    clusters.sort(key=lambda c: -c.mean_rate)
    for i, cluster in enumerate(clusters, start=1):
        cluster.label = f'F{i}'
    return clusters


def cluster_labels(n_solutions, clusters):
    """Per-solution cluster label, ``"unconverged"`` where none applies."""
    labels = [UNCONVERGED] * n_solutions
    for cluster in clusters:
        for index in cluster.members:
            labels[index] = cluster.label
    return labels


def match_clusters(clusters, reference):
    """
    Pair every cluster with the reference cluster nearest in V subspaces.

    Returns:
    --------
    pairs : list of (FixedPointCluster, FixedPointCluster, float)
        The last entry is the largest per-user chordal distance.
    """
    pairs = []
    for cluster in clusters:
        A = cluster.subspace_signature
        best, best_dist = None, np.inf
        for candidate in reference:
            B = candidate.subspace_signature
            dist = max(chordal_distance(A[k], B[k]) for k in range(A.shape[0]))
            if dist < best_dist:
                best, best_dist = candidate, dist
        pairs.append((cluster, best, float(best_dist)))
    return pairs


def records_for(solutions, clusters, snr_db, algorithm, channel_seed):
    labels = cluster_labels(len(solutions), clusters)
    n_converged = sum(c.count for c in clusters)
    occupancy = {c.label: c.occupancy_percent(n_converged) for c in clusters}
    return [
        SweepRecord(
            snr_db=float(snr_db),
            algorithm=algorithm,
            cluster_id=label,
            rate_bits=float(solution.sum_rate),
            occupancy_percent=occupancy.get(label, float('nan')),
            channel_seed=channel_seed,
            init_seed=int(solution.details['init_seed']),
        )
        for solution, label in zip(solutions, labels)
    ]


def snr_sweep(ch, cfg, algo, snr_list_db, n_inits, seed, options=None, workers=1,
              cluster_tol=DEFAULT_CLUSTER_TOL, rate_tol=DEFAULT_RATE_TOL):
    """
    Multi-start runs and clustering at every SNR point, reusing the same
    initialization set throughout so per-initialization cross-overs show.

    Returns:
    --------
    records : list of SweepRecord
        One per (snr, init), in (snr, init) order.
    """
    solver = get_solver(algo, options) if isinstance(algo, str) else algo
    records = []
    for snr_db in snr_list_db:
        point = cfg.with_snr_db(snr_db)
        solutions = multi_start(ch, point, solver, n_inits, seed, workers=workers)
        clusters = cluster_fixed_points(solutions, cluster_tol, rate_tol)
        logger.info(
            '%s at %.1f dB: %d clusters over %d runs',
            solver.name, snr_db, len(clusters), len(solutions),
        )
        records.extend(records_for(solutions, clusters, snr_db, solver.name, ch.seed))
    return records


def cluster_trajectories(records):
    """
    Cluster label of every initialization across SNR.

    Parameters:
    -----------
    records : list of SweepRecord or DataFrame with the sweep columns

    Returns:
    --------
    trajectories : pd.DataFrame
        Columns algorithm, channel_seed, init_seed, labels (labels joined
        by '>' in ascending SNR order) and transitions (number of label
        changes between consecutive SNR points).
    """
    if isinstance(records, pd.DataFrame):
        frame = records
    else:
        frame = pd.DataFrame([r.__dict__ for r in records])
    rows = []
    if frame.empty:
        return pd.DataFrame(rows, columns=['algorithm', 'channel_seed', 'init_seed', 'labels', 'transitions'])

    keys = ['algorithm', 'channel_seed', 'init_seed']
    for (algorithm, channel_seed, init_seed), group in frame.groupby(keys, sort=True):
        labels = group.sort_values('snr_db')['cluster_id'].tolist()
        transitions = sum(a != b for a, b in zip(labels, labels[1:]))
        if transitions:
            logger.info('init %s of %s crosses over: %s', init_seed, algorithm, ' > '.join(labels))
        rows.append({
            'algorithm': algorithm,
            'channel_seed': channel_seed,
            'init_seed': init_seed,
            'labels': '>'.join(labels),
            'transitions': transitions,
        })
    return pd.DataFrame(rows, columns=['algorithm', 'channel_seed', 'init_seed', 'labels', 'transitions'])


def theoretical_zf_gap(K, d):
    """
    High-SNR sum-rate loss of the zero-forcing outer filter on Gaussian
    channels: K * sum_{i=2..d} (psi(i) - psi(1)) / ln 2 bits.
    """
    i = np.arange(2, d + 1)
    return float(K * np.sum(digamma(i) - digamma(1)) / np.log(2.0))


def _gap_one(cfg, channel_seed, iia_options):
    ch = generate_channels(cfg, channel_seed)
    init = random_beamformers(cfg, np.random.default_rng([channel_seed, 1]), orthonormal=True)
    result = iia(ch, cfg, init, iia_options)
    if not result.converged:
        return None, 'IIA did not converge'
    optimal = two_layer_design(ch, result.beamformers, cfg.total_power, power='equal')
    try:
        zf = zero_forcing_outer(ch, result.beamformers, cfg.total_power)
    except SingularEquivalentChannel as e:
        return None, str(e)
    return optimal.total_rate - zf.total_rate, None


def zf_gap_study(cfg, n_channels, snr_db=60.0, seed=0, iia_options=None, workers=1):
    """
    Mean sum-rate gap between SVD and zero-forcing outer coders.

    Both designs share the same IIA inner beamformers and equal power, so
    the gap isolates the outer receive filter.

    Returns:
    --------
    report : ZfGapReport
    """
    point = cfg.with_snr_db(snr_db)
    seeds = task_seeds(seed, n_channels)
    outcomes = Parallel(n_jobs=workers)(
        delayed(_gap_one)(point, s, iia_options) for s in seeds
    )
    gaps = []
    skipped = 0
    for channel_seed, (gap, reason) in zip(seeds, outcomes):
        if gap is None:
            skipped += 1
            logger.warning('Skipping channel %d: %s', channel_seed, reason)
        else:
            gaps.append(gap)
    return ZfGapReport(
        gaps=np.asarray(gaps, dtype=float),
        theoretical=theoretical_zf_gap(cfg.K, cfg.d),
        skipped=skipped,
        snr_db=float(snr_db),
    )


def occupancy_table(records):
    """
    Occupancy and mean rate per (algorithm, channel, snr, cluster).

    Returns:
    --------
    table : pd.DataFrame
    """
    frame = records if isinstance(records, pd.DataFrame) else pd.DataFrame([r.__dict__ for r in records])
    converged = frame[frame['cluster_id'] != UNCONVERGED]
    return (
        converged.groupby(['algorithm', 'channel_seed', 'snr_db', 'cluster_id'], sort=True)
        .agg(rate_bits=('rate_bits', 'mean'), occupancy_percent=('occupancy_percent', 'first'),
             count=('init_seed', 'size'))
        .reset_index()
    )


def convergence_failure_fraction(solutions):
    if not solutions:
        return 0.0
    return sum(not s.converged for s in solutions) / len(solutions)
