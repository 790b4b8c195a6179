"""
Sum-rate gradient solver.
"""

from src.channel import random_beamformers
from src.gradient import GradientOptions, run_gradient_ascent

from .base import BaseSolver


class GradientSolver(BaseSolver):

    name = 'grad'
    options_key = 'gradient'
    options_class = GradientOptions

    def initialize(self, cfg, rng):
        return random_beamformers(cfg, rng, orthonormal=False)

    def solve(self, ch, cfg, init):
        return run_gradient_ascent(ch, cfg, init, self.options)
