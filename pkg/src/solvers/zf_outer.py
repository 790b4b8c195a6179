"""
Zero-forcing outer filter baseline on top of IIA inner beamformers.
"""

import logging

from src.alignment import zero_forcing_outer
from src.channel import PowerAllocation
from src.errors import SingularEquivalentChannel
from src.maxsinr import Solution
from src.metrics import alignment_residual, sum_rate_streams

from .iia import IiaSolver

logger = logging.getLogger(__name__)


class ZeroForcingSolver(IiaSolver):

    name = 'zf-outer'

    def solve(self, ch, cfg, init):
        result = self.align(ch, cfg, init)
        try:
            design = zero_forcing_outer(ch, result.beamformers, cfg.total_power)
        except SingularEquivalentChannel as e:
            logger.warning('Zero-forcing outer filter unavailable: %s', e)
            inner = result.beamformers
            powers = PowerAllocation.equal(cfg)
            return Solution(
                beamformers=inner,
                powers=powers,
                algorithm=self.name,
                iterations=result.iterations,
                converged=False,
                final_displacement=float('inf'),
                rate=sum_rate_streams(ch, inner.V, powers, U=inner.U),
                alignment=alignment_residual(ch, inner),
                details={'error': str(e)},
            )
        return Solution(
            beamformers=design.composed,
            powers=design.powers,
            algorithm=self.name,
            iterations=result.iterations,
            converged=result.converged,
            final_displacement=result.final_leakage,
            rate=design.rate,
            alignment=design.alignment,
        )
