"""
Scalar diagnostics: interference covariances, SINR and rates, alignment
residuals and subspace distances.

All rates are in bits. Inverses are never formed; every solve goes through
a Cholesky factorization of a Hermitian positive definite matrix.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
import scipy.linalg

from src.channel import Beamformers, PowerAllocation, numerical_rank, qr_positive
from src.errors import NotOrthonormal

logger = logging.getLogger(__name__)

ORTHONORMAL_INPUT_TOL = 1e-6
ALIGNMENT_RTOL = 1e-6
USER_RATE_CHECK_TOL = 1e-9


def _powers(P):
    if isinstance(P, PowerAllocation):
        return P.powers
    return np.asarray(P, dtype=float)


def _blocks(V):
    if isinstance(V, Beamformers):
        return V.V
    return np.asarray(V, dtype=complex)


def hermitian_part(A):
    return 0.5 * (A + A.conj().T)


def logdet_pd(A):
    """Natural log-determinant of a Hermitian positive definite matrix."""
    c, _ = scipy.linalg.cho_factor(hermitian_part(A), lower=True)
    return 2.0 * float(np.sum(np.log(np.real(np.diag(c)))))


def solve_pd(A, B):
    """Solve A X = B for Hermitian positive definite A."""
    return scipy.linalg.cho_solve(scipy.linalg.cho_factor(hermitian_part(A), lower=True), B)


@dataclass(frozen=True)
class RateReport:
    """
    Per-stream, per-user and total rates in bits.

    ``per_stream`` is None for reports built from the user-by-user model.
    """

    per_user: np.ndarray
    total: float
    per_stream: Optional[np.ndarray] = None

    @classmethod
    def from_streams(cls, per_stream):
        per_stream = np.maximum(np.asarray(per_stream, dtype=float), 0.0)
        per_user = per_stream.sum(axis=1)
        return cls(per_user=per_user, total=float(per_user.sum()), per_stream=per_stream)

    @classmethod
    def from_users(cls, per_user):
        per_user = np.maximum(np.asarray(per_user, dtype=float), 0.0)
        return cls(per_user=per_user, total=float(per_user.sum()))

    def to_frame(self):
        """CSV-ready rows ``(k, m, rate_bits)``; m is empty for user reports."""
        rows = []
        if self.per_stream is not None:
            for k, m in np.ndindex(self.per_stream.shape):
                rows.append({'k': k, 'm': m, 'rate_bits': float(self.per_stream[k, m])})
        else:
            for k, rate in enumerate(self.per_user):
                rows.append({'k': k, 'm': None, 'rate_bits': float(rate)})
        return pd.DataFrame(rows, columns=['k', 'm', 'rate_bits'])

    def to_dict(self):
        return {
            'total': self.total,
            'per_user': self.per_user.tolist(),
            'per_stream': None if self.per_stream is None else self.per_stream.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        per_stream = data.get('per_stream')
        return cls(
            per_user=np.asarray(data['per_user'], dtype=float),
            total=float(data['total']),
            per_stream=None if per_stream is None else np.asarray(per_stream, dtype=float),
        )


@dataclass(frozen=True)
class AlignmentDiagnostics:
    """
    Residuals of the interference alignment conditions.

    per_user_leakage is tr(U_k^H Z_k U_k) at unit per-stream power.
    """

    per_user_leakage: np.ndarray
    cross_terms: float
    rank_margins: np.ndarray
    interference_rank: np.ndarray

    def is_aligned(self, total_power):
        return self.cross_terms < ALIGNMENT_RTOL * np.sqrt(total_power)

    def to_dict(self):
        return {
            'per_user_leakage': self.per_user_leakage.tolist(),
            'cross_terms': self.cross_terms,
            'rank_margins': self.rank_margins.tolist(),
            'interference_rank': self.interference_rank.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            per_user_leakage=np.asarray(data['per_user_leakage'], dtype=float),
            cross_terms=float(data['cross_terms']),
            rank_margins=np.asarray(data['rank_margins'], dtype=float),
            interference_rank=np.asarray(data['interference_rank'], dtype=int),
        )


def interference_cov_user(ch, V, P, k):
    """
    Interference covariance Z_k = sum_{l != k} H_kl V_l diag(P_l) V_l^H H_kl^H.
    """
    V = _blocks(V)
    powers = _powers(P)
    M = ch.M
    Z = np.zeros((M, M), dtype=complex)
    for l in range(ch.K):
        if l == k:
            continue
        HV = ch.H[k, l] @ V[l]
        Z += (HV * powers[l][np.newaxis, :]) @ HV.conj().T
    return hermitian_part(Z)


def received_cov_user(ch, V, P, k):
    """Covariance R_k of everything received at k, noise included."""
    V = _blocks(V)
    powers = _powers(P)
    R = np.eye(ch.M, dtype=complex)
    for l in range(ch.K):
        HV = ch.H[k, l] @ V[l]
        R += (HV * powers[l][np.newaxis, :]) @ HV.conj().T
    return hermitian_part(R)


def interference_plus_noise_cov_stream(ch, V, P, k, m):
    """
    Covariance R_k^(m) of everything received at k except stream m, noise included.
    """
    V = _blocks(V)
    powers = _powers(P)
    R = received_cov_user(ch, V, powers, k)
    h = ch.H[k, k] @ V[k][:, m]
    R -= powers[k, m] * np.outer(h, h.conj())
    return hermitian_part(R)


def stream_sinr(ch, V, P, k, m, u=None):
    """
    SINR of stream (k, m).

    With ``u=None`` the optimal (whitened matched filter) receiver is
    assumed; otherwise the given receive filter is used.
    """
    V = _blocks(V)
    powers = _powers(P)
    if powers[k, m] == 0.0:
        return 0.0
    R = interference_plus_noise_cov_stream(ch, V, powers, k, m)
    h = ch.H[k, k] @ V[k][:, m]
    if u is None:
        return float(powers[k, m] * np.real(h.conj() @ solve_pd(R, h)))
    u = np.asarray(u, dtype=complex)
    signal = powers[k, m] * np.abs(u.conj() @ h) ** 2
    return float(signal / np.real(u.conj() @ R @ u))


def stream_rate(ch, V, P, k, m):
    """Rate of stream (k, m) in bits with the optimal receive filter."""
    return float(np.log2(1.0 + max(stream_sinr(ch, V, P, k, m), 0.0)))


def user_rate(ch, V, k, total_power):
    """
    Rate of user k under equal power P_t / (K d), in bits.

    Computed as log2 det(I + p V_k^H H_kk^H (I + Z_k)^{-1} H_kk V_k) and
    cross-checked against log2 det(R_k) - log2 det(I + Z_k).
    """
    V = _blocks(V)
    K, _, d = V.shape
    p = total_power / (K * d)
    if p == 0.0:
        return 0.0
    powers = np.full((K, d), p)
    Z = interference_cov_user(ch, V, powers, k)
    I_plus_Z = np.eye(ch.M) + Z
    HV = ch.H[k, k] @ V[k]
    inner = np.eye(d) + p * HV.conj().T @ solve_pd(I_plus_Z, HV)
    rate = logdet_pd(inner) / np.log(2.0)
    if __debug__:
        R = I_plus_Z + p * HV @ HV.conj().T
        other = (logdet_pd(R) - logdet_pd(I_plus_Z)) / np.log(2.0)
        if abs(rate - other) > USER_RATE_CHECK_TOL * max(1.0, abs(rate)):
            logger.warning('user_rate forms disagree for user %d: %.12g vs %.12g', k, rate, other)
    return float(max(rate, 0.0))


def sum_rate_streams(ch, V, P, U=None):
    """
    Stream-by-stream sum rate.

    Parameters:
    -----------
    ch : ChannelSet
    V : array (K, M, d) or Beamformers
    P : PowerAllocation or array (K, d)
    U : array (K, M, d), optional
        Fixed receive filters. When omitted each stream uses its
        whitened matched filter.

    Returns:
    --------
    report : RateReport
    """
    V = _blocks(V)
    powers = _powers(P)
    K, _, d = V.shape
    per_stream = np.zeros((K, d))
    for k in range(K):
        for m in range(d):
            u = None if U is None else U[k][:, m]
            per_stream[k, m] = np.log2(1.0 + max(stream_sinr(ch, V, powers, k, m, u=u), 0.0))
    return RateReport.from_streams(per_stream)


def sum_rate_users(ch, V, total_power):
    """User-by-user sum rate under equal power."""
    V = _blocks(V)
    per_user = [user_rate(ch, V, k, total_power) for k in range(V.shape[0])]
    return RateReport.from_users(per_user)


def total_leakage(ch, B, stream_power=1.0):
    """Sum over users of tr(U_k^H Z_k U_k)."""
    return float(np.sum(leakage_per_user(ch, B.V, B.U, stream_power)))


def leakage_per_user(ch, V, U, stream_power=1.0):
    """
    tr(U_k^H Z_k U_k) per user under equal stream power.

    Accumulated as squared norms of U_k^H H_kl V_l, which stays accurate
    far below the rounding floor of forming Z_k first.
    """
    K = V.shape[0]
    leak = np.zeros(K)
    for k in range(K):
        for l in range(K):
            if l != k:
                leak[k] += stream_power * np.linalg.norm(U[k].conj().T @ ch.H[k, l] @ V[l]) ** 2
    return leak


def alignment_residual(ch, B, stream_power=1.0):
    """
    Interference alignment residuals of a beamformer set.

    Returns:
    --------
    diagnostics : AlignmentDiagnostics
    """
    K, _, d = B.V.shape
    cross = 0.0
    margins = np.empty(K)
    ranks = np.empty(K, dtype=int)
    powers = np.full((K, d), stream_power)
    for k in range(K):
        for l in range(K):
            if l != k:
                cross = max(cross, float(np.linalg.norm(B.U[k].conj().T @ ch.H[k, l] @ B.V[l], 'fro')))
        s = scipy.linalg.svdvals(B.U[k].conj().T @ ch.H[k, k] @ B.V[k])
        margins[k] = s[d - 1]
        ranks[k] = numerical_rank(interference_cov_user(ch, B.V, powers, k))
    return AlignmentDiagnostics(
        per_user_leakage=leakage_per_user(ch, B.V, B.U, stream_power),
        cross_terms=cross,
        rank_margins=margins,
        interference_rank=ranks,
    )


def check_orthonormal(A, tol=ORTHONORMAL_INPUT_TOL):
    A = np.asarray(A, dtype=complex)
    gram = A.conj().T @ A
    if np.max(np.abs(gram - np.eye(A.shape[1]))) > tol:
        raise NotOrthonormal('input columns are not orthonormal')
    return A


def chordal_distance(A, B):
    """
    Chordal distance sqrt(d - ||A^H B||_F^2) between two orthonormal bases.

    Evaluated as ||(I - A A^H) B||_F, which is the same quantity for
    orthonormal inputs and keeps full precision near zero.
    """
    A = check_orthonormal(A)
    B = check_orthonormal(B)
    if A.shape != B.shape:
        raise ValueError(f'bases must share shape, got {A.shape} and {B.shape}')
    residual = B - A @ (A.conj().T @ B)
    return float(np.linalg.norm(residual, 'fro'))


def subspace_distance(A, B):
    """Chordal distance between the column spans of two full-rank blocks."""
    return chordal_distance(qr_positive(A), qr_positive(B))


def phase_aligned_distance(a, b):
    """min over theta of ||b - e^{j theta} a|| for unit vectors a, b."""
    inner = np.vdot(a, b)
    phase = inner / abs(inner) if abs(inner) > 0 else 1.0
    return float(np.linalg.norm(b - phase * a))


def is_rank_deficient(block):
    return numerical_rank(block) < block.shape[1]
