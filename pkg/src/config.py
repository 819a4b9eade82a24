"""
Run configuration: schema, defaults and loading.

A run is described by one file holding the sections `system`, `initial_distribution`,
`reward`, `region` and `solver`. JSON is tried first; YAML is accepted as a fallback.
"""
import json
import logging
import os
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from .errors import ConfigError

logger = logging.getLogger(__name__)

Matrix = List[List[float]]


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class SystemConfig(_Section):
    A: Matrix
    B: Matrix
    K: Matrix
    B_w: Matrix
    # Range checks on epsilon/k_max belong to validate_system (assumption violations, not schema errors)
    epsilon: float
    k_max: int


class InitialDistributionConfig(_Section):
    kind: Literal['uniform', 'point', 'gaussian'] = 'uniform'
    x0: Optional[List[float]] = None
    mean: Optional[List[float]] = None
    cov: Optional[Matrix] = None
    lower: Optional[List[float]] = None
    upper: Optional[List[float]] = None


class RewardTableEntry(_Section):
    region: int
    s: int
    min: float
    max: float


class RewardConfig(_Section):
    kind: Literal['interevent_time', 'overshoot', 'table'] = 'interevent_time'
    alpha: float = 1.0
    beta: float = 0.0
    eps_tilde: float = 1.0
    r_max: Optional[float] = None
    table: Optional[List[RewardTableEntry]] = None
    unsafe: Optional[List[float]] = None

    @field_validator('unsafe')
    @classmethod
    def _unsafe_pair(cls, value):
        """Check a two-element [lo, hi] reward pair."""
        if value is not None and len(value) != 2:
            raise ValueError('unsafe row must be [min, max]')
        return value


class RegionConfig(_Section):
    x_lower: List[float]
    x_upper: List[float]
    grid: List[int]


class SolverConfig(_Section):
    gamma: float
    iterations: Optional[int] = None
    int_tol: float = 1e-4
    int_seed: int = 0
    n_shifts: int = 12
    max_points: int = 2 ** 20
    opt_tol: float = 1e-6
    opt_slack: float = 1e-4
    fd_step: float = 1e-4
    max_iter: int = 500
    max_vertex_starts: int = 16
    vertex_cap: int = 4096
    repair_budget: float = 0.05
    den_floor: float = 1e-9
    sigma_envelope: float = 6.0
    tail_target: float = 1e-6
    adversary: Literal['greedy', 'lp'] = 'greedy'
    mc_paths: int = 10000
    mc_seed: int = 0
    mc_steps: Optional[int] = None


class RunConfig(_Section):
    system: SystemConfig
    initial_distribution: InitialDistributionConfig = InitialDistributionConfig()
    reward: RewardConfig = RewardConfig()
    region: RegionConfig
    solver: SolverConfig


def _format_validation_error(err: ValidationError) -> str:
    """Flatten pydantic errors into one message naming each offending key."""
    parts = []
    for item in err.errors():
        key = '.'.join(str(p) for p in item['loc'])
        parts.append(f"{key}: {item['msg']}")
    return '; '.join(parts)


def parse_config(raw: Dict) -> Dict:
    """Validate a raw configuration dict and return it with defaults filled in."""
    if not isinstance(raw, dict):
        raise ConfigError(f"configuration must be a mapping at top level, got {type(raw).__name__}")
    try:
        run = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_format_validation_error(e)) from e
    return run.model_dump()


def load_config(path: Union[str, Path]) -> Dict:
    """
    Read and validate a run configuration file.

    Raises:
        ConfigError: unreadable file, malformed text, or schema violation (message names the key).
    """
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot read configuration file {path}: {e}") from e

    try:
        raw = json.loads(text)
    except json.JSONDecodeError as json_error:
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError:
            raise ConfigError(
                f"malformed configuration file {path}: line {json_error.lineno} column {json_error.colno}: {json_error.msg}"
            ) from json_error
        logger.debug(f"{path} parsed as YAML")

    config = parse_config(raw)
    logger.info(f"Loaded configuration from {path}")
    return config


def resolve_threads(cli_value: Optional[int] = None) -> int:
    """Worker count: --threads wins, then PETC_IMC_THREADS, then 1."""
    if cli_value is not None:
        return max(1, int(cli_value))
    load_dotenv()
    env = os.getenv('PETC_IMC_THREADS')
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"PETC_IMC_THREADS must be an integer, got {env!r}")
    return 1
