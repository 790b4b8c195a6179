"""
Shared seeded channels and interference-aligning solutions.
"""

import numpy as np
import pytest

from src.alignment import IiaOptions, iia
from src.channel import SystemConfig, generate_channels, random_beamformers

HIGH_SNR_DB = 80.0


def aligned_beamformers(ch, cfg, seed=0, attempts=10):
    """IIA output from the first of several seeded initializations that converges."""
    for attempt in range(attempts):
        init = random_beamformers(cfg, np.random.default_rng([seed, attempt]))
        result = iia(ch, cfg, init, IiaOptions())
        if result.converged:
            return result.beamformers
    raise RuntimeError("IIA did not converge from any test initialization")


@pytest.fixture(scope="session")
def cfg21():
    return SystemConfig.from_snr_db(3, 2, 1, HIGH_SNR_DB)


@pytest.fixture(scope="session")
def cfg42():
    return SystemConfig.from_snr_db(3, 4, 2, HIGH_SNR_DB)


@pytest.fixture(scope="session")
def ch21(cfg21):
    return generate_channels(cfg21, 7)


@pytest.fixture(scope="session")
def ch42(cfg42):
    return generate_channels(cfg42, 11)


@pytest.fixture(scope="session")
def ia21(ch21, cfg21):
    return aligned_beamformers(ch21, cfg21)


@pytest.fixture(scope="session")
def ia42(ch42, cfg42):
    return aligned_beamformers(ch42, cfg42)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
