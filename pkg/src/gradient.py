"""
Sum-rate gradient algorithm on the user-by-user rate model.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from src.channel import Beamformers, PowerAllocation, normalize_columns
from src.config import build_options
from src.maxsinr import Solution, vu_step
from src.metrics import alignment_residual, hermitian_part, subspace_distance, sum_rate_users

logger = logging.getLogger(__name__)

MAX_BACKTRACKS = 60


@dataclass(frozen=True)
class GradientOptions:
    max_iter: int = 2000
    step_init: float = 1.0
    backtrack_factor: float = 0.5
    armijo_c: float = 1e-4
    grad_tol: float = 1e-8
    record_trace: bool = True

    def __post_init__(self):
        if self.max_iter < 1 or self.step_init <= 0 or self.grad_tol <= 0:
            raise ValueError(f'invalid gradient options: {self}')
        if not (0 < self.backtrack_factor < 1 and 0 < self.armijo_c < 1):
            raise ValueError(f'backtrack_factor and armijo_c must lie in (0, 1): {self}')

    @classmethod
    def from_dict(cls, data):
        return build_options(cls, data)


def sum_rate_gradient(ch, V, total_power):
    """
    Gradient of the user-by-user sum rate with respect to conj(V_k).

    G_k = p / ln 2 * [sum_l H_lk^H R_l^{-1} H_lk V_k
                      - sum_{l != k} H_lk^H (I + Z_l)^{-1} H_lk V_k]

    with p = P_t / (K d). The directional derivative of the rate along
    Delta is 2 Re tr(G^H Delta).
    """
    V = np.asarray(V, dtype=complex)
    K, M, d = V.shape
    p = total_power / (K * d)
    G = np.zeros_like(V)
    if p == 0.0:
        return G

    received = [[ch.H[l, j] @ V[j] for j in range(K)] for l in range(K)]
    for l in range(K):
        R = np.eye(M, dtype=complex)
        for j in range(K):
            R += p * received[l][j] @ received[l][j].conj().T
        I_plus_Z = R - p * received[l][l] @ received[l][l].conj().T
        R_factor = scipy.linalg.cho_factor(hermitian_part(R), lower=True)
        Z_factor = scipy.linalg.cho_factor(hermitian_part(I_plus_Z), lower=True)
        for k in range(K):
            H_lk = ch.H[l, k]
            G[k] += H_lk.conj().T @ scipy.linalg.cho_solve(R_factor, received[l][k])
            if l != k:
                G[k] -= H_lk.conj().T @ scipy.linalg.cho_solve(Z_factor, received[l][k])
    return G * (p / np.log(2.0))


def project_tangent(V, G):
    """Remove the radial part of every column: g - v Re(v^H g)."""
    radial = np.real(np.einsum('kmd,kmd->kd', V.conj(), G))
    return G - V * radial[:, np.newaxis, :]


def relative_gradient_norm(ch, V, total_power):
    """
    Projected-gradient norm divided by the per-stream power.

    At an interference-aligning point the projected gradient itself tends
    to a finite nonzero limit while the rate curvature against breaking
    alignment grows like P_t / (K d); their ratio sets the size of the
    ascent step and decays with SNR.
    """
    V = normalize_columns(V)
    K, _, d = V.shape
    p = total_power / (K * d)
    if p == 0.0:
        return 0.0
    xi = project_tangent(V, sum_rate_gradient(ch, V, total_power))
    return float(np.linalg.norm(xi)) / p


def run_gradient_ascent(ch, cfg, init, opts=None):
    """
    Projected gradient ascent with Armijo backtracking.

    Each step moves along the tangent part of the gradient and renormalizes
    every column, so the iterate stays on the unit-norm feasible set.

    Returns:
    --------
    solution : Solution
        ``final_displacement`` is the projected-gradient Frobenius norm.
    """
    opts = opts or GradientOptions()
    V = normalize_columns(init.V)
    V_start = V.copy()
    rate = sum_rate_users(ch, V, cfg.total_power).total
    trace = [{'iter': 0, 'sum_rate_bits': rate, 'grad_norm': np.nan, 'step': np.nan}] if opts.record_trace else None
    step = opts.step_init
    converged = False
    grad_norm = np.inf
    iterations = 0
    for iterations in range(1, opts.max_iter + 1):
        xi = project_tangent(V, sum_rate_gradient(ch, V, cfg.total_power))
        grad_norm = float(np.linalg.norm(xi))
        if grad_norm < opts.grad_tol:
            converged = True
            break

        slope = 2.0 * grad_norm ** 2
        eta = step
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            V_try = normalize_columns(V + eta * xi)
            rate_try = sum_rate_users(ch, V_try, cfg.total_power).total
            if rate_try >= rate + opts.armijo_c * eta * slope:
                accepted = True
                break
            eta *= opts.backtrack_factor
        if not accepted:
            logger.info('Line search stalled at iteration %d (gradient norm %.3e)', iterations, grad_norm)
            break

        V, rate = V_try, rate_try
        step = eta / opts.backtrack_factor
        if trace is not None:
            trace.append({'iter': iterations, 'sum_rate_bits': rate, 'grad_norm': grad_norm, 'step': eta})

    if not converged:
        logger.warning(
            'Gradient ascent stopped after %d iterations with projected gradient norm %.3e',
            iterations, grad_norm,
        )
    P = PowerAllocation.equal(cfg)
    U = vu_step(ch, V, P, orthogonalize=True)
    beamformers = Beamformers(V=V, U=U)
    movement = max(subspace_distance(V_start[k], V[k]) for k in range(cfg.K))
    return Solution(
        beamformers=beamformers,
        powers=P,
        algorithm='grad',
        iterations=iterations,
        converged=converged,
        final_displacement=grad_norm,
        rate=sum_rate_users(ch, V, cfg.total_power),
        alignment=alignment_residual(ch, beamformers),
        trace=trace,
        details={'movement': movement},
    )
