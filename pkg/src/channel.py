"""
System configuration, beamformer containers and random channel generation.

Channels are K x K grids of M x M complex matrices stored as one array of
shape (K, K, M, M); entry ``[k, l]`` is the channel H_kl from transmitter l
to receiver k. Noise is unit variance per receive antenna.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from src.errors import ConfigError, InfeasibleConfig

logger = logging.getLogger(__name__)

EXTERNAL_SEED = 'external'

UNIT_NORM_TOL = 1e-10
ORTHONORMAL_TOL = 1e-8
RANK_RTOL = 1e-10


def db_to_linear(value_db):
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def numerical_rank(matrix):
    """
    Count singular values above ``max_dim * sigma_max * 1e-10``.
    """
    s = scipy.linalg.svdvals(matrix)
    if s.size == 0 or s[0] == 0.0:
        return 0
    threshold = max(matrix.shape) * s[0] * RANK_RTOL
    return int(np.sum(s > threshold))


@dataclass(frozen=True)
class SystemConfig:
    """
    Problem dimensions and total transmit power.

    Parameters:
    -----------
    K : int
        Number of transmitter/receiver pairs.
    M : int
        Antennas per node.
    d : int
        Streams per user.
    total_power : float
        Total transmit power P_t in linear units (noise variance is 1).
    """

    K: int
    M: int
    d: int
    total_power: float = 1.0
    rate_base: int = field(default=2, init=False)

    def __post_init__(self):
        for name in ('K', 'M', 'd'):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f'{name} must be a positive integer, got {value!r}')
        if self.d > self.M:
            raise InfeasibleConfig(
                f'constraint d <= M violated: d={self.d}, M={self.M}'
            )
        if not np.isfinite(self.total_power) or self.total_power < 0:
            raise ConfigError(f'total_power must be finite and >= 0, got {self.total_power!r}')

    @classmethod
    def from_snr_db(cls, K, M, d, snr_db):
        """
        Build a configuration whose per-stream power equals the nominal SNR.

        SNR is defined as P_t / (K d), so equal allocation puts exactly the
        nominal SNR on every stream.
        """
        return cls(K=K, M=M, d=d, total_power=float(K * d * db_to_linear(snr_db)))

    @property
    def n_streams(self):
        return self.K * self.d

    @property
    def stream_power(self):
        """Equal per-stream power P_t / (K d)."""
        return self.total_power / self.n_streams

    @property
    def snr_db(self):
        if self.total_power <= 0:
            return -np.inf
        return float(10.0 * np.log10(self.stream_power))

    def with_snr_db(self, snr_db):
        return SystemConfig.from_snr_db(self.K, self.M, self.d, snr_db)

    def check_operating_point(self):
        """Warn when the configuration is not the M = 2d operating point."""
        if self.M != 2 * self.d:
            logger.warning(
                'Configuration K=%d, M=%d, d=%d is outside the M = 2d operating point; '
                'interference alignment may be infeasible',
                self.K, self.M, self.d,
            )
            return False
        return True


@dataclass(frozen=True)
class ChannelSet:
    """
    K x K grid of M x M complex channel matrices.
    """

    H: np.ndarray
    seed: object = EXTERNAL_SEED

    def __post_init__(self):
        H = np.asarray(self.H, dtype=complex)
        if H.ndim != 4 or H.shape[0] != H.shape[1] or H.shape[2] != H.shape[3]:
            raise ConfigError(f'channel array must have shape (K, K, M, M), got {H.shape}')
        if not np.all(np.isfinite(H)):
            raise ConfigError('channel entries must be finite')
        H.setflags(write=False)
        object.__setattr__(self, 'H', H)

    @property
    def K(self):
        return self.H.shape[0]

    @property
    def M(self):
        return self.H.shape[2]

    def __getitem__(self, index):
        return self.H[index]

    def condition_numbers(self):
        """K x K array of 2-norm condition numbers of every H_kl."""
        cond = np.empty((self.K, self.K))
        for k in range(self.K):
            for l in range(self.K):
                cond[k, l] = np.linalg.cond(self.H[k, l])
        return cond

    def is_full_rank(self):
        return all(
            numerical_rank(self.H[k, l]) == self.M
            for k in range(self.K)
            for l in range(self.K)
        )

    def __eq__(self, other):
        if not isinstance(other, ChannelSet):
            return NotImplemented
        return self.seed == other.seed and np.array_equal(self.H, other.H)

    __hash__ = None


def _unit_columns(matrix):
    norms = np.linalg.norm(matrix, axis=0)
    return np.all(np.abs(norms - 1.0) < UNIT_NORM_TOL)


def _orthonormal_columns(matrix):
    d = matrix.shape[1]
    gram = matrix.conj().T @ matrix
    return np.max(np.abs(gram - np.eye(d))) < ORTHONORMAL_TOL


@dataclass(frozen=True)
class Beamformers:
    """
    Transmit precoders V and receive decoders U, each of shape (K, M, d).

    Every column has unit norm. ``orthonormal`` additionally asserts that
    every block has orthonormal columns.
    """

    V: np.ndarray
    U: np.ndarray
    orthonormal: bool = False

    def __post_init__(self):
        V = np.array(self.V, dtype=complex)
        U = np.array(self.U, dtype=complex)
        if V.ndim != 3 or V.shape != U.shape:
            raise ConfigError(f'V and U must share shape (K, M, d), got {V.shape} and {U.shape}')
        for k in range(V.shape[0]):
            if not (_unit_columns(V[k]) and _unit_columns(U[k])):
                raise ConfigError(f'beamformer columns of user {k} are not unit norm')
            if self.orthonormal and not (_orthonormal_columns(V[k]) and _orthonormal_columns(U[k])):
                raise ConfigError(f'beamformer blocks of user {k} are not orthonormal')
        V.setflags(write=False)
        U.setflags(write=False)
        object.__setattr__(self, 'V', V)
        object.__setattr__(self, 'U', U)

    @property
    def K(self):
        return self.V.shape[0]

    @property
    def M(self):
        return self.V.shape[1]

    @property
    def d(self):
        return self.V.shape[2]

    @classmethod
    def from_blocks(cls, V, U, orthonormal=False):
        """Normalize every column to unit norm, then build the container."""
        return cls(V=normalize_columns(V), U=normalize_columns(U), orthonormal=orthonormal)

    @classmethod
    def orthonormalized(cls, V, U):
        return cls(V=orthonormalize_blocks(V), U=orthonormalize_blocks(U), orthonormal=True)

    def __eq__(self, other):
        if not isinstance(other, Beamformers):
            return NotImplemented
        return (
            self.orthonormal == other.orthonormal
            and np.array_equal(self.V, other.V)
            and np.array_equal(self.U, other.U)
        )

    __hash__ = None


@dataclass(frozen=True)
class PowerAllocation:
    """
    Per-stream powers P_k^(m), shape (K, d), summing to the total power.
    """

    powers: np.ndarray
    water_level: Optional[float] = None

    def __post_init__(self):
        powers = np.array(self.powers, dtype=float)
        if powers.ndim != 2:
            raise ConfigError(f'powers must have shape (K, d), got {powers.shape}')
        if np.any(powers < 0) or not np.all(np.isfinite(powers)):
            raise ConfigError('powers must be finite and nonnegative')
        powers.setflags(write=False)
        object.__setattr__(self, 'powers', powers)

    @property
    def total(self):
        return float(self.powers.sum())

    @classmethod
    def equal(cls, cfg):
        return cls(np.full((cfg.K, cfg.d), cfg.stream_power))

    def __eq__(self, other):
        if not isinstance(other, PowerAllocation):
            return NotImplemented
        return self.water_level == other.water_level and np.array_equal(self.powers, other.powers)

    __hash__ = None


def normalize_columns(blocks):
    """Scale every column of every (M, d) block to unit 2-norm."""
    blocks = np.array(blocks, dtype=complex)
    norms = np.linalg.norm(blocks, axis=-2, keepdims=True)
    return blocks / norms


def qr_positive(block):
    """
    Thin QR with a real positive diagonal in R; returns the Q factor.
    """
    Q, R = scipy.linalg.qr(block, mode='economic')
    diag = np.diag(R)
    phases = np.where(np.abs(diag) > 0, diag / np.abs(diag), 1.0)
    return Q * phases[np.newaxis, :]


def orthonormalize_blocks(blocks):
    blocks = np.asarray(blocks, dtype=complex)
    return np.stack([qr_positive(block) for block in blocks])


def generate_channels(cfg, seed):
    """
    Draw i.i.d. CN(0, 1) channels for every (k, l) pair.

    Draw order is row-major over (k, l), then row-major over matrix
    entries, real part before imaginary part. Rank-deficient draws are
    replaced by continuing the same stream, which keeps the output a pure
    function of (cfg, seed).

    Parameters:
    -----------
    cfg : SystemConfig
    seed : int

    Returns:
    --------
    channels : ChannelSet
    """
    rng = np.random.default_rng(seed)
    K, M = cfg.K, cfg.M
    while True:
        draws = rng.standard_normal((K, K, M, M, 2))
        H = (draws[..., 0] + 1j * draws[..., 1]) / np.sqrt(2.0)
        channels = ChannelSet(H=H, seed=int(seed))
        if channels.is_full_rank():
            return channels
        logger.warning('Rank-deficient channel draw for seed %s, drawing again', seed)


def reciprocal(ch):
    """
    Reciprocal network: entry (l, k) of the output is H_kl^H.
    """
    H_rev = np.conj(np.transpose(ch.H, (1, 0, 3, 2)))
    return ChannelSet(H=H_rev, seed=ch.seed)


def random_beamformers(cfg, rng, orthonormal=True):
    """
    Random complex Gaussian initialization for V and U.
    """
    shape = (cfg.K, cfg.M, cfg.d)
    V = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    U = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    if orthonormal:
        return Beamformers.orthonormalized(V, U)
    return Beamformers.from_blocks(V, U)
