"""
Lab settings and experiment configuration
Pydantic models for hyperparameters, probe settings and experiment files
"""

import hashlib
import json
import os
import subprocess
from pathlib import Path
from typing import Dict, List, Optional, Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError
from pydantic import field_validator, model_validator

from src.models.types import Algorithm

__version__ = "0.3.0"


class LoggingConfig(BaseModel):
    """
    Logging system configuration
    """
    level: str = Field(default="INFO", description="Log level: DEBUG, INFO, WARNING, ERROR, CRITICAL")
    console_output: bool = Field(default=True, description="Enable console output")
    file_output: bool = Field(default=False, description="Enable rotating file output")
    log_directory: str = Field(default="runs/logs", description="Log file directory")
    max_log_files: int = Field(default=10, description="Maximum number of log files to keep", ge=1, le=100)
    max_file_size_mb: int = Field(default=50, description="Maximum log file size in MB", ge=1, le=1000)
    episode_log_interval: int = Field(default=100, description="Log training progress every N episodes", ge=1)

    @field_validator('level')
    @classmethod
    def validate_log_level(cls, v):
        """Validate log level"""
        valid_levels = ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']
        if v.upper() not in valid_levels:
            raise ValueError(f"Log level must be one of {valid_levels}")
        return v.upper()


class HyperParams(BaseModel):
    """
    Learning hyperparameters shared by MADDPG, MATD3 and IL-TD3
    """
    model_config = ConfigDict(extra="forbid")

    gamma: float = Field(default=0.95, description="Discount factor", gt=0.0, le=1.0)
    tau: float = Field(default=0.01, description="Polyak averaging rate", gt=0.0, le=1.0)
    policy_delay: int = Field(default=2, description="Critic updates per policy/target update (d)", ge=1)
    smoothing_sigma: float = Field(default=0.2, description="Target policy smoothing std", ge=0.0)
    smoothing_clip: float = Field(default=0.5, description="Target policy smoothing clip c", ge=0.0)
    lr: float = Field(default=0.01, description="Adam learning rate for policies and critics", gt=0.0)
    batch_size: int = Field(default=1000, description="Minibatch size", ge=1)
    buffer_capacity: int = Field(default=1_000_000, description="Replay buffer capacity", ge=1)
    exploration_noise: float = Field(default=0.1, description="Exploration noise as a fraction of the action range", ge=0.0)
    episodes: int = Field(default=5000, description="Training episodes", ge=1)
    steps_per_episode: int = Field(default=25, description="Environment steps per episode (horizon)", ge=1)
    hidden_sizes: List[int] = Field(default_factory=lambda: [64, 64], description="Hidden layer widths")
    warmup: Optional[int] = Field(default=None, description="Transitions before learning starts (None = max(batch, 1024))", ge=1)
    gumbel_temperature: float = Field(default=1.0, description="Gumbel-Softmax temperature for comm channels", gt=0.0)
    bootstrap_on_timeout: bool = Field(default=True, description="Bootstrap through horizon truncation")

    @field_validator('hidden_sizes')
    @classmethod
    def validate_hidden_sizes(cls, v):
        """Hidden widths must be positive; up to three hidden layers"""
        if not v or len(v) > 3:
            raise ValueError("hidden_sizes needs one to three layers")
        if any(width < 1 for width in v):
            raise ValueError("hidden layer widths must be positive")
        return v

    def effective_warmup(self) -> int:
        """Buffer fill level required before the first update"""
        if self.warmup is not None:
            return self.warmup
        return max(self.batch_size, 1024)

    def learning_threshold(self) -> int:
        """Buffer length at which updates begin; a minibatch must fit"""
        return max(self.effective_warmup(), self.batch_size)

    @model_validator(mode="after")
    def validate_buffer_capacity(self):
        """The buffer must be able to reach the learning threshold"""
        if self.buffer_capacity < self.learning_threshold():
            raise ValueError(
                f"buffer_capacity {self.buffer_capacity} is below the learning threshold "
                f"{self.learning_threshold()} (max of warmup and batch_size); no update would ever run")
        return self


class ProbeConfig(BaseModel):
    """
    Overestimation probe configuration
    """
    model_config = ConfigDict(extra="forbid")

    enabled: bool = Field(default=False, description="Run the Monte-Carlo bias probe during training")
    pairs: int = Field(default=100, description="State-action pairs probed per evaluation", ge=1)
    cadence: int = Field(default=1000, description="Environment steps between evaluations", ge=1)
    rollouts: int = Field(default=200, description="Monte-Carlo rollouts per probe pair", ge=1)
    rollout_len: int = Field(default=100, description="Steps per Monte-Carlo rollout", ge=1)


class ExperimentConfig(BaseModel):
    """
    One experiment: a scenario, an algorithm pairing, hyperparameters and seeds
    """
    model_config = ConfigDict(extra="forbid")

    label: str = Field(default="experiment", description="Human-readable experiment name")
    scenario_id: str = Field(default="cooperative_navigation", description="Registered scenario id")
    algorithm: Algorithm = Field(default=Algorithm.MATD3, description="Algorithm for the team agents")
    adversary_algorithm: Optional[Algorithm] = Field(default=None, description="Algorithm for adversarial agents (defaults to algorithm)")
    num_agents: Optional[int] = Field(default=None, description="Scenario size override where supported", ge=1)
    hyperparams: HyperParams = Field(default_factory=HyperParams)
    probe: ProbeConfig = Field(default_factory=ProbeConfig)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], description="Distinct training seeds")
    reward_window: int = Field(default=1000, description="Trailing episode window for final reward", ge=1)
    eval_episodes: int = Field(default=10, description="Episodes for the noise-free evaluation and the random baseline", ge=1)
    workers: int = Field(default=1, description="Parallel seed workers", ge=1)
    output_dir: str = Field(default="experiment", description="Artifact directory (relative paths resolve under the output root)")

    @field_validator('seeds')
    @classmethod
    def validate_seeds(cls, v):
        """Seeds must be nonempty and distinct"""
        if not v:
            raise ValueError("at least one seed is required")
        if len(set(v)) != len(v):
            raise ValueError(f"seeds must be distinct: {v}")
        return v

    @field_validator('scenario_id')
    @classmethod
    def validate_scenario(cls, v):
        """Scenario must be registered"""
        from src.core.scenarios import registered_scenarios
        if v not in registered_scenarios():
            raise ValueError(f"unknown scenario '{v}'; registered: {registered_scenarios()}")
        return v

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        """Parse a config mapping, mapping pydantic errors to ConfigError"""
        from src.utils.validation import ConfigError
        try:
            return cls.model_validate(data)
        except PydanticValidationError as e:
            raise ConfigError(f"invalid experiment config: {e}") from e

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        """Load a JSON experiment file"""
        from src.utils.validation import ConfigError
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_dict(data)

    def to_json(self) -> str:
        """Canonical JSON serialization"""
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)

    def to_file(self, path):
        """Write the config as JSON"""
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(self.to_json() + "\n")

    def config_hash(self) -> str:
        """Short content hash of the canonical config"""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    def with_overrides(self, **hyperparam_overrides) -> "ExperimentConfig":
        """Copy with hyperparameter (or num_agents) overrides, revalidated"""
        data = self.model_dump(mode="json")
        for key, value in hyperparam_overrides.items():
            if key == "num_agents":
                data["num_agents"] = value
            else:
                data["hyperparams"][key] = value
        return ExperimentConfig.from_dict(data)

    def team_adversary_algorithms(self):
        """(team, adversary) algorithm pair"""
        return self.algorithm, self.adversary_algorithm or self.algorithm


def _detect_build_id() -> str:
    """git-describe style build id, falling back to the package version"""
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).parent.parent,
            capture_output=True, text=True, timeout=5
        )
        if result.returncode == 0 and result.stdout.strip():
            return result.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"matd3-lab-{__version__}"


class LabSettings:
    """
    Process-wide settings container
    Holds logging configuration, output root and build id
    """

    def __init__(self):
        """Initialize settings from environment and defaults"""
        self.LOGGING = LoggingConfig(level=os.environ.get("LOG_LEVEL", "INFO"))
        self.DEFAULT_OUTPUT_ROOT = Path(os.environ.get("MATD3_LAB_OUTPUT_ROOT", "runs"))
        self.CONFIG_DIRECTORY = Path(__file__).parent / "experiments"
        self._build_id: Optional[str] = None

    @property
    def BUILD_ID(self) -> str:
        if self._build_id is None:
            self._build_id = _detect_build_id()
        return self._build_id

    def output_root(self) -> Path:
        """Output root, re-reading the environment override"""
        override = os.environ.get("MATD3_LAB_OUTPUT_ROOT")
        return Path(override) if override else self.DEFAULT_OUTPUT_ROOT

    def set_log_level(self, level: str):
        """Change log level (validated)"""
        self.LOGGING = LoggingConfig(**{**self.LOGGING.model_dump(), "level": level})


LabSettings = LabSettings()
