"""Adaptive flow-based intrusion detection: datasets, models and scenarios."""

import json
import os

from ._core import (
    MATRIX_COLS,
    MATRIX_ROWS,
    METRICS_SCHEMA_VERSION,
    ConfigError,
    ContainerError,
    Dataset,
    Error,
    InsufficientPool,
    InvalidInput,
    Model,
    TruncatedCapture,
    UnsupportedFormat,
    UnsupportedModel,
    generate_synthetic,
    ingest_pcaps,
)
from . import _core

__version__ = "0.1.0"


def validate_config(config):
    """Validate a scenario config (dict or JSON text); returns it with defaults as a dict."""
    text = config if isinstance(config, str) else json.dumps(config)
    return json.loads(_core.validate_config(text))


def run_scenario(config):
    """Run a scenario given as a dict, JSON text or path to a JSON file; returns the metrics dict."""
    if isinstance(config, dict):
        return json.loads(_core.run_scenario(json.dumps(config)))
    if isinstance(config, os.PathLike) or (isinstance(config, str) and os.path.isfile(config)):
        return json.loads(_core.run_scenario_file(os.fspath(config)))
    return json.loads(_core.run_scenario(config))


__all__ = [
    "MATRIX_COLS",
    "MATRIX_ROWS",
    "METRICS_SCHEMA_VERSION",
    "ConfigError",
    "ContainerError",
    "Dataset",
    "Error",
    "InsufficientPool",
    "InvalidInput",
    "Model",
    "TruncatedCapture",
    "UnsupportedFormat",
    "UnsupportedModel",
    "generate_synthetic",
    "ingest_pcaps",
    "run_scenario",
    "validate_config",
]
