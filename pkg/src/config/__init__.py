"""
Configuration module for experiment presets and user config files.
"""

import dataclasses
import os

import yaml

from src.errors import ConfigError

CONFIG_DIR = os.path.dirname(__file__)


def load_config(preset):
    """
    Load the configuration preset for one operating point.

    Parameters:
    -----------
    preset : str
        Preset name (e.g. k3_m2_d1, k3_m4_d2)

    Returns:
    --------
    config : dict
        Configuration dictionary
    """
    config_path = os.path.join(CONFIG_DIR, f'{preset.lower()}.yaml')

    if not os.path.exists(config_path):
        raise ConfigError(f'Configuration preset not found: {preset}')

    with open(config_path, 'r') as f:
        config = yaml.safe_load(f)

    return config


def get_available_presets():
    """
    Get list of available presets based on config files.

    Returns:
    --------
    presets : list
        Sorted preset names
    """
    presets = [
        filename[:-len('.yaml')]
        for filename in os.listdir(CONFIG_DIR)
        if filename.endswith('.yaml')
    ]
    return sorted(presets)


def load_config_file(path, allowed_keys):
    """
    Read a user config file (a YAML mapping) and reject unknown keys.

    Parameters:
    -----------
    path : str
        Path to the YAML file
    allowed_keys : iterable of str
        Keys the caller understands

    Returns:
    --------
    config : dict
    """
    with open(path, 'r') as f:
        try:
            config = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f'Config file is not valid YAML: {path}') from e

    if not isinstance(config, dict):
        raise ConfigError(f'Config file must contain a key-value mapping: {path}')

    unknown = sorted(set(config) - set(allowed_keys))
    if unknown:
        raise ConfigError(f"Unknown config keys in {path}: {', '.join(unknown)}")

    return config


def build_options(cls, data):
    """
    Build a frozen options dataclass from a mapping, rejecting unknown keys.
    """
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"Unknown {cls.__name__} keys: {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f'Invalid {cls.__name__}: {e}') from e
