"""
Toolkit configuration.

Defaults ship in ``configs/default_config.json``; a user file passed with
``--config`` (or ``FAIRPROBE_CONFIG``) is merged over them section by section.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional, Union

from .errors import InvalidConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).parent / 'configs' / 'default_config.json'
CONFIG_ENV_VAR = 'FAIRPROBE_CONFIG'
THREADS_ENV_VAR = 'FAIRPROBE_THREADS'


def _section_from_dict(cls, data: Optional[Dict[str, Any]]):
    data = data or {}
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise InvalidConfig(f"Unknown keys in '{cls.section}' section: {sorted(unknown)}")
    return cls(**data)


@dataclass
class ValidationConfig:
    """Tolerances for simplex and row-stochastic checks"""
    section = 'validation'
    tolerance: float = 1e-9

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ValidationConfig':
        return _section_from_dict(cls, data)


@dataclass
class EstimatorConfig:
    """Largest condition number of C accepted by the corrected estimator"""
    section = 'estimator'
    condition_threshold: float = 1e12

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EstimatorConfig':
        return _section_from_dict(cls, data)


@dataclass
class SimulationConfig:
    """Monte Carlo tolerances and execution settings"""
    section = 'simulation'
    se_multiplier: float = 4.0
    cov_slack: float = 0.05
    max_dropped_fraction: float = 0.1
    threads: int = 1
    show_progress: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SimulationConfig':
        return _section_from_dict(cls, data)


@dataclass
class ProbingConfig:
    """Training recipe for the probing heads"""
    section = 'probing'
    regularization: float = 1.0
    tolerance: float = 1e-6
    max_iterations: int = 10_000
    rbf_max_samples: int = 50_000
    knn_k: int = 1
    seed: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ProbingConfig':
        return _section_from_dict(cls, data)


@dataclass
class CliConfig:
    section = 'cli'
    percent_scale: bool = True
    min_images_per_identity: int = 1

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CliConfig':
        return _section_from_dict(cls, data)


@dataclass
class LoggingConfig:
    section = 'logging'
    level: str = 'INFO'

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'LoggingConfig':
        return _section_from_dict(cls, data)


@dataclass
class ToolkitConfig:
    """All configuration sections"""
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    probing: ProbingConfig = field(default_factory=ProbingConfig)
    cli: CliConfig = field(default_factory=CliConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'validation': self.validation.to_dict(),
            'estimator': self.estimator.to_dict(),
            'simulation': self.simulation.to_dict(),
            'probing': self.probing.to_dict(),
            'cli': self.cli.to_dict(),
            'logging': self.logging.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ToolkitConfig':
        unknown = set(data) - {'validation', 'estimator', 'simulation', 'probing', 'cli', 'logging'}
        if unknown:
            raise InvalidConfig(f"Unknown configuration sections: {sorted(unknown)}")
        return cls(
            validation=ValidationConfig.from_dict(data.get('validation', {})),
            estimator=EstimatorConfig.from_dict(data.get('estimator', {})),
            simulation=SimulationConfig.from_dict(data.get('simulation', {})),
            probing=ProbingConfig.from_dict(data.get('probing', {})),
            cli=CliConfig.from_dict(data.get('cli', {})),
            logging=LoggingConfig.from_dict(data.get('logging', {})),
        )


def _read_json(path: Path) -> Dict[str, Any]:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidConfig(f"Cannot read configuration: {e}", file=str(path)) from e
    if not isinstance(data, dict):
        raise InvalidConfig("Configuration must be a JSON object", file=str(path))
    return data


def load_config(path: Optional[Union[str, Path]] = None) -> ToolkitConfig:
    """Load packaged defaults, then merge a user file (explicit path or FAIRPROBE_CONFIG) over them"""
    merged = _read_json(DEFAULT_CONFIG_PATH)

    user_path = path or os.environ.get(CONFIG_ENV_VAR)
    if user_path:
        user = _read_json(Path(user_path))
        for section, values in user.items():
            if isinstance(values, dict) and isinstance(merged.get(section), dict):
                merged[section] = {**merged[section], **values}
            else:
                merged[section] = values
        logger.info(f"Loaded configuration overrides from {user_path}")

    try:
        return ToolkitConfig.from_dict(merged)
    except TypeError as e:
        raise InvalidConfig(f"Invalid configuration value: {e}", file=str(user_path or DEFAULT_CONFIG_PATH)) from e
