"""
Interference-aligning inner beamformers and the two-layer optimal design.

The inner layer (iterative interference alignment) fixes the transmit and
receive subspaces; the outer layer diagonalizes each user's d x d
equivalent channel and water-fills power over all K d streams jointly.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from src.config import build_options
from src.channel import Beamformers, PowerAllocation, orthonormalize_blocks, reciprocal
from src.errors import AllZeroGains, InfeasibleConfig, SingularEquivalentChannel
from src.metrics import (
    AlignmentDiagnostics,
    RateReport,
    alignment_residual,
    interference_cov_user,
    leakage_per_user,
    sum_rate_streams,
)

logger = logging.getLogger(__name__)

WATERFILL_RTOL = 1e-12
ZF_SINGULAR_RTOL = 1e-10


@dataclass(frozen=True)
class IiaOptions:
    max_iter: int = 5000
    leak_tol: float = 1e-16

    def __post_init__(self):
        if self.max_iter < 1 or self.leak_tol <= 0:
            raise ValueError(f'invalid IIA options: {self}')

    @classmethod
    def from_dict(cls, data):
        return build_options(cls, data)


@dataclass(frozen=True)
class IiaResult:
    """Outcome of one IIA run; ``leakage_trace`` has one entry per half-step."""

    beamformers: Beamformers
    converged: bool
    iterations: int
    leakage_trace: np.ndarray

    @property
    def final_leakage(self):
        return float(self.leakage_trace[-1]) if self.leakage_trace.size else np.inf


@dataclass(frozen=True)
class TwoLayerSolution:
    """
    Inner aligning beamformers composed with d x d outer coders.

    ``kind`` is ``'optimal'`` for the SVD outer coders or ``'zero_forcing'``
    for the pseudo-inverse receive baseline (whose outer_rx is not unitary).
    """

    inner: Beamformers
    outer_tx: np.ndarray
    outer_rx: np.ndarray
    singular_values: np.ndarray
    powers: PowerAllocation
    composed: Beamformers
    rate: RateReport
    alignment: AlignmentDiagnostics
    kind: str = 'optimal'

    @property
    def total_rate(self):
        return self.rate.total

    @property
    def water_level(self):
        return self.powers.water_level


def _smallest_eigvecs(Z, d):
    """
    The d eigenvectors of Hermitian Z with the smallest eigenvalues.

    Eigenvalues come out ascending; ties are broken by comparing rounded
    eigenvector entries so degenerate spectra order deterministically.
    """
    w, X = scipy.linalg.eigh(Z)
    scale = max(float(np.max(np.abs(w))), 1.0)
    keys = []
    for row in X[::-1]:
        keys.append(np.round(row.imag, 8))
        keys.append(np.round(row.real, 8))
    keys.append(np.round(w / scale, 12))
    order = np.lexsort(keys)
    return X[:, order[:d]]


def iia(ch, cfg, init, opts=None):
    """
    Iterative interference alignment by alternating leakage minimization.

    Forward half-step: U_k <- d least-dominant eigenvectors of Z_k.
    Reverse half-step: V_k <- d least-dominant eigenvectors of the
    reciprocal-network interference covariance built from U.

    Parameters:
    -----------
    ch : ChannelSet
    cfg : SystemConfig
    init : Beamformers
        Starting point; only V is used, after orthonormalization.
    opts : IiaOptions, optional

    Returns:
    --------
    result : IiaResult
        Leakage is measured at unit per-stream power; non-convergence is
        reported through ``converged`` and a warning.
    """
    opts = opts or IiaOptions()
    if cfg.d > cfg.M:
        raise InfeasibleConfig(f'constraint d <= M violated: d={cfg.d}, M={cfg.M}')
    ch_rev = reciprocal(ch)
    p = cfg.stream_power if cfg.total_power > 0 else 1.0
    powers = np.full((cfg.K, cfg.d), p)

    V = orthonormalize_blocks(init.V)
    trace = []
    converged = False
    iterations = 0
    for iterations in range(1, opts.max_iter + 1):
        U = np.stack([
            _smallest_eigvecs(interference_cov_user(ch, V, powers, k), cfg.d) for k in range(cfg.K)
        ])
        trace.append(float(np.sum(leakage_per_user(ch, V, U))))
        if trace[-1] < opts.leak_tol:
            converged = True
            break
        V = np.stack([
            _smallest_eigvecs(interference_cov_user(ch_rev, U, powers, k), cfg.d) for k in range(cfg.K)
        ])
        trace.append(float(np.sum(leakage_per_user(ch, V, U))))
        if trace[-1] < opts.leak_tol:
            converged = True
            break

    if not converged:
        logger.warning(
            'IIA did not converge in %d iterations (leakage %.3e, tolerance %.1e)',
            opts.max_iter, trace[-1], opts.leak_tol,
        )
    else:
        logger.debug('IIA converged after %d iterations', iterations)
    return IiaResult(
        beamformers=Beamformers(V=V, U=U, orthonormal=True),
        converged=converged,
        iterations=iterations,
        leakage_trace=np.asarray(trace),
    )


def equivalent_channel(ch, inner, k):
    """H_bar_k = U_k^H H_kk V_k for the inner beamformers of user k."""
    return inner.U[k].conj().T @ ch.H[k, k] @ inner.V[k]


def outer_coders(Hbar):
    """
    SVD outer coders of an equivalent channel.

    Returns:
    --------
    Phi : (d, d) unitary, right singular vectors (transmit side)
    Theta : (d, d) unitary, left singular vectors (receive side)
    singular_values : (d,) descending

    The largest-magnitude entry of every column of Theta is made real
    positive, and the matching column of Phi is rotated by the same phase.
    """
    Hbar = np.asarray(Hbar, dtype=complex)
    d = Hbar.shape[0]
    if not np.any(Hbar):
        return np.eye(d, dtype=complex), np.eye(d, dtype=complex), np.zeros(d)
    Theta, s, Vh = scipy.linalg.svd(Hbar)
    Phi = Vh.conj().T
    for j in range(d):
        idx = int(np.argmax(np.abs(Theta[:, j])))
        phase = np.conj(Theta[idx, j]) / abs(Theta[idx, j])
        Theta[:, j] *= phase
        Phi[:, j] *= phase
    return Phi, Theta, s


def waterfill(gains, total_power):
    """
    Water-filling over parallel Gaussian channels with unit noise.

    Parameters:
    -----------
    gains : array_like
        Nonnegative channel power gains, shape (K, d) or flat.
    total_power : float

    Returns:
    --------
    allocation : PowerAllocation
        P_i = max(0, mu - 1/g_i) with the water level mu stored alongside.
    """
    g = np.asarray(gains, dtype=float)
    shape = g.shape if g.ndim == 2 else (1, g.size)
    g = g.ravel()
    active = g > 0
    if not np.any(active):
        raise AllZeroGains('water-filling needs at least one positive gain')
    if total_power == 0:
        return PowerAllocation(np.zeros(shape), water_level=0.0)

    inv = 1.0 / g[active]
    lo, hi = float(inv.min()), float(inv.max()) + total_power
    for _ in range(200):
        mu = 0.5 * (lo + hi)
        if np.sum(np.maximum(mu - inv, 0.0)) > total_power:
            hi = mu
        else:
            lo = mu
        if hi - lo <= WATERFILL_RTOL * hi:
            break
    mu = 0.5 * (lo + hi)
    p_active = np.maximum(mu - inv, 0.0)
    on = p_active > 0
    # Shifting the level over the fixed active set closes the residual exactly.
    shift = (total_power - p_active.sum()) / on.sum()
    p_active[on] += shift
    mu += shift

    powers = np.zeros(g.size)
    powers[active] = p_active
    return PowerAllocation(powers.reshape(shape), water_level=float(mu))


def two_layer_design(ch, inner, total_power, power='waterfill'):
    """
    Optimal outer coders on top of interference-aligning inner beamformers.

    Parameters:
    -----------
    ch : ChannelSet
    inner : Beamformers
        Orthonormal aligning beamformers.
    total_power : float
    power : {'waterfill', 'equal'}

    Returns:
    --------
    solution : TwoLayerSolution
        Rate is sum over streams of log2(1 + P_k^(m) lambda_k^(m)^2).
    """
    K, _, d = inner.V.shape
    diagnostics = alignment_residual(ch, inner)
    if not diagnostics.is_aligned(total_power):
        logger.warning(
            'Inner beamformers are not interference-aligning (cross terms %.3e)',
            diagnostics.cross_terms,
        )

    Phis, Thetas, svals = [], [], []
    for k in range(K):
        Phi, Theta, s = outer_coders(equivalent_channel(ch, inner, k))
        Phis.append(Phi)
        Thetas.append(Theta)
        svals.append(s)
    Phis, Thetas, svals = np.stack(Phis), np.stack(Thetas), np.stack(svals)

    if power == 'waterfill' and total_power > 0:
        powers = waterfill(svals ** 2, total_power)
    elif power in ('equal', 'waterfill'):
        powers = PowerAllocation(np.full((K, d), total_power / (K * d)))
    else:
        raise ValueError(f'unknown power policy: {power!r}')

    composed = Beamformers(
        V=np.einsum('kmd,kde->kme', inner.V, Phis),
        U=np.einsum('kmd,kde->kme', inner.U, Thetas),
        orthonormal=True,
    )
    rate = RateReport.from_streams(np.log2(1.0 + powers.powers * svals ** 2))
    return TwoLayerSolution(
        inner=inner,
        outer_tx=Phis,
        outer_rx=Thetas,
        singular_values=svals,
        powers=powers,
        composed=composed,
        rate=rate,
        alignment=diagnostics,
        kind='optimal',
    )


def zero_forcing_outer(ch, inner, total_power):
    """
    Suboptimal baseline: identity transmit outer coder and a receive outer
    filter from the pseudo-inverse of the equivalent channel, columns
    renormalized, equal power on every stream.
    """
    K, _, d = inner.V.shape
    diagnostics = alignment_residual(ch, inner)
    W_all, svals = [], []
    for k in range(K):
        Hbar = equivalent_channel(ch, inner, k)
        s = scipy.linalg.svdvals(Hbar)
        if s[0] == 0.0 or s[-1] < ZF_SINGULAR_RTOL * s[0]:
            raise SingularEquivalentChannel(
                f'equivalent channel of user {k} is singular (sigma_d/sigma_1 = '
                f'{s[-1] / s[0] if s[0] else 0.0:.3e})'
            )
        W = scipy.linalg.pinv(Hbar).conj().T
        W_all.append(W / np.linalg.norm(W, axis=0, keepdims=True))
        svals.append(s)
    W_all, svals = np.stack(W_all), np.stack(svals)

    powers = PowerAllocation(np.full((K, d), total_power / (K * d)))
    composed = Beamformers(
        V=inner.V,
        U=np.einsum('kmd,kde->kme', inner.U, W_all),
    )
    rate = sum_rate_streams(ch, composed.V, powers, U=composed.U)
    return TwoLayerSolution(
        inner=inner,
        outer_tx=np.broadcast_to(np.eye(d, dtype=complex), (K, d, d)).copy(),
        outer_rx=W_all,
        singular_values=svals,
        powers=powers,
        composed=composed,
        rate=rate,
        alignment=diagnostics,
        kind='zero_forcing',
    )
