"""
Max-SINR algorithm.

Each composite iteration computes per-stream whitened matched filters in
the forward network (VU step), then repeats the computation in the
reciprocal network with the receive filters acting as precoders (UV step).
Fixed points are only defined up to a per-column phase, so convergence is
measured with phase-aligned column distances.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from src.channel import Beamformers, PowerAllocation, normalize_columns, orthonormalize_blocks, reciprocal
from src.config import build_options
from src.errors import ZeroDirection
from src.metrics import (
    AlignmentDiagnostics,
    RateReport,
    alignment_residual,
    chordal_distance,
    hermitian_part,
    phase_aligned_distance,
    received_cov_user,
    sum_rate_streams,
    total_leakage,
)

logger = logging.getLogger(__name__)

ZERO_DIRECTION_NORM = 1e-300
DISTANCE_FLOOR = 1e-14


@dataclass(frozen=True)
class MaxSinrOptions:
    max_iter: int = 3000
    fp_tol: float = 1e-6
    orthogonalize: bool = True
    record_trace: bool = False

    def __post_init__(self):
        if self.max_iter < 1 or self.fp_tol <= 0:
            raise ValueError(f'invalid max-SINR options: {self}')

    @classmethod
    def from_dict(cls, data):
        return build_options(cls, data)


@dataclass(frozen=True)
class Solution:
    """
    A beamformer set produced by one algorithm run, with diagnostics.

    ``final_displacement`` is the algorithm's own convergence measure
    (fixed-point displacement, leakage or projected-gradient norm), so
    ``converged`` holds exactly when it fell below the tolerance.
    """

    beamformers: Beamformers
    powers: PowerAllocation
    algorithm: str
    iterations: int
    converged: bool
    final_displacement: float
    rate: RateReport
    alignment: AlignmentDiagnostics
    trace: Optional[list] = None
    details: dict = field(default_factory=dict)

    @property
    def sum_rate(self):
        return self.rate.total


@dataclass(frozen=True)
class PerturbationReport:
    """
    Distances to a fixed point after an epsilon perturbation of the precoders.

    ``distances`` has shape (trials, n_iter + 1); column 0 is the precoder
    distance right after perturbation. ``ratios`` holds successive
    contraction ratios.
    """

    epsilon: float
    distances: np.ndarray
    ratios: np.ndarray

    def contraction_rates(self):
        """
        Per-trial geometric-mean contraction over the iterations after the first.

        The ratio of the first composite step is excluded.
        """
        if self.distances.shape[1] < 3:
            return np.full(self.distances.shape[0], np.nan)
        start, end = self.distances[:, 1], self.distances[:, -1]
        steps = self.distances.shape[1] - 2
        with np.errstate(divide='ignore', invalid='ignore'):
            rates = np.where(start > DISTANCE_FLOOR, (end / start) ** (1.0 / steps), np.nan)
        return rates

    @property
    def median_ratio(self):
        rates = self.contraction_rates()
        rates = rates[np.isfinite(rates)]
        return float(np.median(rates)) if rates.size else float('nan')

    @property
    def median_first_distance(self):
        return float(np.median(self.distances[:, 1]))


def wmf(R, H, v):
    """
    Whitened matched filter R^{-1} H v / ||R^{-1} H v||.

    Raises:
    --------
    ZeroDirection
        If H v is (numerically) the zero vector.
    """
    return _whitened_direction(scipy.linalg.cho_factor(hermitian_part(R), lower=True), H @ v)


def _whitened_direction(factor, h):
    x = scipy.linalg.cho_solve(factor, h)
    norm = np.linalg.norm(x)
    if norm < ZERO_DIRECTION_NORM:
        raise ZeroDirection('whitened matched filter has zero norm')
    return x / norm


def vu_step(ch, V, P, orthogonalize=True):
    """
    Receive filters for every stream given the precoders.

    Every stream of user k is whitened with the full received covariance
    R_k. Since R_k = R_k^(m) + p h h^H, R_k^{-1} h is parallel to
    R_k^(m)^{-1} h, so the normalized filter is the per-stream one; equal
    precoder columns get bit-identical receive filters.

    Returns an array of shape (K, M, d); with ``orthogonalize`` each user's
    block is re-orthonormalized by QR with a real positive R diagonal.
    """
    V = np.asarray(V, dtype=complex)
    K, M, d = V.shape
    U = np.empty((K, M, d), dtype=complex)
    for k in range(K):
        factor = scipy.linalg.cho_factor(received_cov_user(ch, V, P, k), lower=True)
        for m in range(d):
            U[k][:, m] = _whitened_direction(factor, ch.H[k, k] @ V[k][:, m])
    if orthogonalize:
        return orthonormalize_blocks(U)
    return U


def uv_step(ch_reciprocal, U, P_reciprocal, orthogonalize=True):
    """Precoders from the reciprocal network, where U acts as the precoder."""
    return vu_step(ch_reciprocal, U, P_reciprocal, orthogonalize=orthogonalize)


def composite_step(ch, ch_reciprocal, V, P, P_reciprocal, orthogonalize=True):
    U = vu_step(ch, V, P, orthogonalize)
    return U, uv_step(ch_reciprocal, U, P_reciprocal, orthogonalize)


def displacement(V_old, U_old, V_new, U_new, orthonormal=False):
    """
    Largest phase-aligned column move of V and U over all users.

    For orthonormal blocks the per-user chordal distances between
    successive subspaces are included as well.
    """
    K, _, d = V_old.shape
    worst = 0.0
    for k in range(K):
        for m in range(d):
            worst = max(
                worst,
                phase_aligned_distance(V_old[k][:, m], V_new[k][:, m]),
                phase_aligned_distance(U_old[k][:, m], U_new[k][:, m]),
            )
        if orthonormal:
            worst = max(
                worst,
                chordal_distance(V_old[k], V_new[k]),
                chordal_distance(U_old[k], U_new[k]),
            )
    return worst


def run_max_sinr(ch, cfg, init, opts=None):
    """
    Iterate composite max-SINR steps from ``init`` with equal powers.

    Parameters:
    -----------
    ch : ChannelSet
    cfg : SystemConfig
    init : Beamformers
    opts : MaxSinrOptions, optional

    Returns:
    --------
    solution : Solution
        Non-convergence is reported through ``converged``, never raised.
    """
    opts = opts or MaxSinrOptions()
    P = PowerAllocation.equal(cfg)
    # Reverse-link powers mirror the forward equal allocation.
    P_rev = PowerAllocation.equal(cfg)
    ch_rev = reciprocal(ch)

    V = orthonormalize_blocks(init.V) if opts.orthogonalize else np.array(init.V)
    U_prev = orthonormalize_blocks(init.U) if opts.orthogonalize else np.array(init.U)
    trace = [] if opts.record_trace else None
    converged = False
    disp = np.inf
    iterations = 0
    for iterations in range(1, opts.max_iter + 1):
        U, V_new = composite_step(ch, ch_rev, V, P, P_rev, opts.orthogonalize)
        disp = displacement(V, U_prev, V_new, U, orthonormal=opts.orthogonalize)
        V, U_prev = V_new, U
        if trace is not None:
            B = Beamformers(V=V, U=U)
            trace.append({
                'iter': iterations,
                'displacement': disp,
                'sum_rate_bits': sum_rate_streams(ch, V, P).total,
                'leakage': total_leakage(ch, B),
            })
        if disp < opts.fp_tol:
            converged = True
            break

    if not converged:
        logger.warning(
            'max-SINR did not reach a fixed point in %d iterations (displacement %.3e)',
            opts.max_iter, disp,
        )
    beamformers = Beamformers(V=V, U=U_prev, orthonormal=opts.orthogonalize)
    return Solution(
        beamformers=beamformers,
        powers=P,
        algorithm='max-sinr',
        iterations=iterations,
        converged=converged,
        final_displacement=float(disp),
        rate=sum_rate_streams(ch, V, P),
        alignment=alignment_residual(ch, beamformers),
        trace=trace,
    )


def perturb_and_measure(ch, cfg, fp, epsilon, trials=20, n_iter=5, seed=0, orthogonalize=True):
    """
    Local convergence study around a fixed point.

    Every precoder column of ``fp`` is moved by ``epsilon`` along a random
    unit direction and renormalized. The receive filters are derived from
    the precoders by the first composite step, so only V is perturbed.
    Composite iterations are then run and the distance to the fixed point
    (precoders and receive filters) recorded after each one.

    Returns:
    --------
    report : PerturbationReport
        ``ratios`` is NaN where the previous distance is ~0.
    """
    rng = np.random.default_rng(seed)
    P = PowerAllocation.equal(cfg)
    ch_rev = reciprocal(ch)
    V_fp, U_fp = fp.beamformers.V, fp.beamformers.U
    shape = V_fp.shape

    distances = np.zeros((trials, n_iter + 1))
    for t in range(trials):
        w = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        V = normalize_columns(V_fp + epsilon * normalize_columns(w))
        distances[t, 0] = displacement(V_fp, U_fp, V, U_fp)
        for i in range(1, n_iter + 1):
            U, V = composite_step(ch, ch_rev, V, P, P, orthogonalize)
            distances[t, i] = displacement(V_fp, U_fp, V, U)

    with np.errstate(divide='ignore', invalid='ignore'):
        previous = distances[:, :-1]
        ratios = np.where(previous > DISTANCE_FLOOR, distances[:, 1:] / previous, np.nan)
    return PerturbationReport(epsilon=float(epsilon), distances=distances, ratios=ratios)


def linearly_dependent_init(cfg, seed, theta=0.0):
    """
    Initialization with v_k^(1) = e^{j theta} v_k^(2) for every user.

    Without orthogonalization the max-SINR iterates keep such blocks rank
    deficient. The rank-deficient point repels nearby iterates, more
    strongly as SNR grows, so at high SNR only exactly repeated columns
    (theta = 0) stay dependent; a nonzero phase leaves rounding-level
    differences that the iteration amplifies.
    """
    if cfg.d < 2:
        raise ValueError('a linearly dependent initialization needs d >= 2')
    rng = np.random.default_rng(seed)
    shape = (cfg.K, cfg.M, cfg.d)
    V = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    U = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    V[:, :, 0] = np.exp(1j * theta) * V[:, :, 1]
    return Beamformers.from_blocks(V, U)
