"""
Base solver class: turns a random draw into an initialization and an
initialization into a Solution.
"""

import numpy as np

from src.channel import random_beamformers


class BaseSolver:
    """
    Base class for the algorithms that ``run`` and ``sweep`` can drive.

    Subclasses set ``name``, ``options_key`` (the entry of the ``solvers:``
    config section they read) and ``options_class``, and implement
    ``solve``.
    """

    name = None
    options_key = None
    options_class = None

    def __init__(self, options=None):
        """
        Initialize solver with options.

        Parameters:
        -----------
        options : dataclass instance or dict, optional
            Solver options; a dict is validated through ``from_dict``
        """
        self.options = None
        self.set_options(options)

    def set_options(self, options):
        """Set options after initialization."""
        if self.options_class is None:
            self.options = None
        elif options is None:
            self.options = self.options_class()
        elif isinstance(options, dict):
            self.options = self.options_class.from_dict(options)
        else:
            self.options = options

    def set_config(self, config):
        """
        Pick this solver's options out of a full preset or config file.

        Parameters:
        -----------
        config : dict
            Parsed configuration with an optional ``solvers`` section
        """
        section = (config or {}).get('solvers') or {}
        self.set_options(section.get(self.options_key))

    def initialize(self, cfg, rng):
        """
        Random complex Gaussian starting point with orthonormal blocks.

        Parameters:
        -----------
        cfg : SystemConfig
        rng : numpy.random.Generator

        Returns:
        --------
        init : Beamformers
        """
        return random_beamformers(cfg, rng, orthonormal=True)

    def initialize_from_seed(self, cfg, seed):
        return self.initialize(cfg, np.random.default_rng(seed))

    def solve(self, ch, cfg, init):
        """
        Run the algorithm from ``init``.

        Returns:
        --------
        solution : Solution
        """
        raise NotImplementedError

    def __repr__(self):
        return f'{type(self).__name__}({self.options!r})'
