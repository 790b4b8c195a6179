"""
Two-layer optimal solver: IIA inner beamformers plus SVD outer coders with
water-filled power.
"""

from src.alignment import two_layer_design
from src.maxsinr import Solution

from .iia import IiaSolver


class TwoLayerSolver(IiaSolver):

    name = 'two-layer'

    def solve(self, ch, cfg, init):
        result = self.align(ch, cfg, init)
        design = two_layer_design(ch, result.beamformers, cfg.total_power, power='waterfill')
        return Solution(
            beamformers=design.composed,
            powers=design.powers,
            algorithm=self.name,
            iterations=result.iterations,
            converged=result.converged,
            final_displacement=result.final_leakage,
            rate=design.rate,
            alignment=design.alignment,
            details={
                'water_level': design.water_level,
                'singular_values': design.singular_values.tolist(),
            },
        )
