"""Python access to the ExGRPO core. Structured results come back as plain dicts and lists."""

import json

from . import _core
from ._core import (
    ConfigError,
    ContractError,
    ExgrpoError,
    InvariantError,
    IoError,
    NumericError,
    OracleError,
    ParseError,
    SchemaError,
    clip_active,
    clipped_term,
    dsu_bonus,
    moving_average,
    normalize_advantages,
    rejective_keep,
    spearman,
)

__all__ = [
    "ConfigError", "ContractError", "ExgrpoError", "InvariantError", "IoError", "NumericError", "OracleError",
    "ParseError", "SchemaError", "clip_active", "clipped_term", "dsu_bonus", "generate_tasks", "load_config",
    "moving_average", "normalize_advantages", "parse_config", "rejective_keep", "run_pipeline",
    "run_theorem_check", "spearman",
]


def parse_config(text=""):
    """Validated run configuration, defaults filled in."""
    return json.loads(_core.parse_config(text))


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


def generate_tasks(n_tasks=100, seed=0, include_inverse=False):
    return json.loads(_core.generate_tasks(n_tasks, seed, include_inverse))


def run_pipeline(config_text="", out_dir=""):
    """Full run; stage failures are reported in the returned summary (ok, failed_stage, exit_code)."""
    return json.loads(_core.run_pipeline(config_text, str(out_dir)))


def run_theorem_check(config_text="", n_seeds=20, deltas=(0.0, 0.1)):
    return json.loads(_core.run_theorem_check(config_text, n_seeds, list(deltas)))
