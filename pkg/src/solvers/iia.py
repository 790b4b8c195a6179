"""
Iterative interference alignment solver.
"""

from src.alignment import IiaOptions, iia, two_layer_design
from src.maxsinr import Solution

from .base import BaseSolver


class IiaSolver(BaseSolver):
    """
    Inner aligning beamformers, rated as 'IA with equal power': the
    two-layer design with SVD outer coders and P_t / (K d) on every stream.
    """

    name = 'iia'
    options_key = 'iia'
    options_class = IiaOptions

    def align(self, ch, cfg, init):
        return iia(ch, cfg, init, self.options)

    def solve(self, ch, cfg, init):
        result = self.align(ch, cfg, init)
        design = two_layer_design(ch, result.beamformers, cfg.total_power, power='equal')
        return Solution(
            beamformers=result.beamformers,
            powers=design.powers,
            algorithm=self.name,
            iterations=result.iterations,
            converged=result.converged,
            final_displacement=result.final_leakage,
            rate=design.rate,
            alignment=design.alignment,
        )
