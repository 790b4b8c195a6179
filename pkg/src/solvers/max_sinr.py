"""
Max-SINR solver.
"""

from src.channel import random_beamformers
from src.maxsinr import MaxSinrOptions, run_max_sinr

from .base import BaseSolver


class MaxSinrSolver(BaseSolver):

    name = 'max-sinr'
    options_key = 'max_sinr'
    options_class = MaxSinrOptions

    def initialize(self, cfg, rng):
        # Without orthogonalization only the columns are normalized.
        return random_beamformers(cfg, rng, orthonormal=self.options.orthogonalize)

    def solve(self, ch, cfg, init):
        return run_max_sinr(ch, cfg, init, self.options)
