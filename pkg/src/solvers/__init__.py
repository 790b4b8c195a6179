"""
Solver registry mapping algorithm names to solver classes.
"""

import importlib

from src.errors import ConfigError

from .base import BaseSolver

# algorithm name -> (module, class)
_REGISTRY = {
    'iia': ('iia', 'IiaSolver'),
    'max-sinr': ('max_sinr', 'MaxSinrSolver'),
    'grad': ('gradient', 'GradientSolver'),
    'two-layer': ('two_layer', 'TwoLayerSolver'),
    'zf-outer': ('zf_outer', 'ZeroForcingSolver'),
}

ALGORITHMS = tuple(_REGISTRY)


def get_solver(name, options=None, config=None):
    """
    Get the solver for an algorithm name.

    Parameters:
    -----------
    name : str
        One of iia, max-sinr, grad, two-layer, zf-outer
    options : dict or options dataclass, optional
        Options for this solver
    config : dict, optional
        Full configuration; its ``solvers`` section is used when
        ``options`` is not given

    Returns:
    --------
    solver : BaseSolver
        A fresh solver instance
    """
    key = name.lower()
    if key not in _REGISTRY:
        raise ConfigError(f"Unknown algorithm {name!r}; choose from {', '.join(ALGORITHMS)}")

    module_name, class_name = _REGISTRY[key]
    module = importlib.import_module(f'src.solvers.{module_name}')
    solver = getattr(module, class_name)()
    if options is not None:
        solver.set_options(options)
    elif config is not None:
        solver.set_config(config)
    return solver


__all__ = ['ALGORITHMS', 'BaseSolver', 'get_solver']
