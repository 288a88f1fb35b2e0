"""
Configuration management for Mimic Explorer
"""

import copy
import json
import logging
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from utils.validation import ConfigValidator

from . import __version__
from .errors import ConfigValidationError, UsageError

logger = logging.getLogger(__name__)


@dataclass
class TraceConfig:
    """Thresholds used to turn pointer sessions into actions."""
    touch_radius_px: float = 50.0
    long_touch_ms: int = 500
    text_gap_ms: int = 1000
    text_placeholder: str = "hello"


@dataclass
class ModelConfig:
    """Interaction network hyperparameters."""
    dims: Tuple[int, int] = (45, 80)
    conv_widths: Tuple[int, ...] = (8, 16, 16, 24, 24)
    kernel_size: int = 3
    reduce_widths: Tuple[int, ...] = (8, 12, 12)
    lstm_hidden: Tuple[int, ...] = (8, 12, 12)
    deconv_widths: Tuple[int, ...] = (12, 8, 8, 4, 1)
    deconv_kernel: int = 4
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    label_variance: float = 20.0
    batch_size: int = 16
    seed: int = 7

    def __post_init__(self):
        """Validate model configuration after initialization."""
        self.dims = (int(self.dims[0]), int(self.dims[1]))
        self.conv_widths = tuple(self.conv_widths)
        self.reduce_widths = tuple(self.reduce_widths)
        self.lstm_hidden = tuple(self.lstm_hidden)
        self.deconv_widths = tuple(self.deconv_widths)
        if len(self.conv_widths) != 5:
            raise ValueError(f"Model needs 5 convolution stages, got {len(self.conv_widths)}")
        if len(self.reduce_widths) != 3 or len(self.lstm_hidden) != 3:
            raise ValueError("Residual LSTM modules attach to exactly the last 3 stages")
        if self.lstm_hidden != self.reduce_widths:
            raise ValueError("Residual LSTM hidden sizes must equal the reduced widths")
        if len(self.deconv_widths) != len(self.conv_widths) or self.deconv_widths[-1] != 1:
            raise ValueError("Decoder needs 5 deconvolution stages ending in one channel")
        if self.kernel_size % 2 == 0:
            raise ValueError("Convolution kernel size must be odd")
        if min(self.dims) < 4:
            raise ValueError(f"Input dims too small: {self.dims}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dims": list(self.dims),
            "conv_widths": list(self.conv_widths),
            "kernel_size": self.kernel_size,
            "reduce_widths": list(self.reduce_widths),
            "lstm_hidden": list(self.lstm_hidden),
            "deconv_widths": list(self.deconv_widths),
            "deconv_kernel": self.deconv_kernel,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "label_variance": self.label_variance,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        defaults = cls()
        return cls(
            dims=tuple(data.get("dims", defaults.dims)),  # type: ignore[arg-type]
            conv_widths=tuple(data.get("conv_widths", defaults.conv_widths)),
            kernel_size=data.get("kernel_size", defaults.kernel_size),
            reduce_widths=tuple(data.get("reduce_widths", defaults.reduce_widths)),
            lstm_hidden=tuple(data.get("lstm_hidden", defaults.lstm_hidden)),
            deconv_widths=tuple(data.get("deconv_widths", defaults.deconv_widths)),
            deconv_kernel=data.get("deconv_kernel", defaults.deconv_kernel),
            learning_rate=data.get("learning_rate", defaults.learning_rate),
            momentum=data.get("momentum", defaults.momentum),
            weight_decay=data.get("weight_decay", defaults.weight_decay),
            label_variance=data.get("label_variance", defaults.label_variance),
            batch_size=data.get("batch_size", defaults.batch_size),
            seed=data.get("seed", defaults.seed),
        )


@dataclass
class TrainConfig:
    """Training loop settings."""
    epochs: int = 10
    patience: int = 3
    holdout_fraction: float = 0.2
    max_steps: Optional[int] = None


@dataclass
class ExploreConfig:
    """Single exploration run settings."""
    policy: str = "model-weighted"
    budget: int = 500


@dataclass
class CompareConfig:
    """Policy comparison settings."""
    policies: List[str] = field(default_factory=lambda: ["model-weighted", "random"])
    seeds: int = 5
    budget: int = 500


@dataclass
class SuiteConfig:
    """Benchmark suite generation settings."""
    kind: str = "gated"
    count: int = 20
    bias: float = 20.0
    max_states: int = 12


@dataclass
class CorpusConfig:
    """Trace corpus generation settings."""
    n_flows: int = 10
    flow_len: int = 20


@dataclass
class PathsConfig:
    """Output locations."""
    out: str = "out"
    checkpoint: Optional[str] = None


_SECTIONS = {
    "traces": TraceConfig,
    "train": TrainConfig,
    "explore": ExploreConfig,
    "compare": CompareConfig,
    "suite": SuiteConfig,
    "corpus": CorpusConfig,
    "paths": PathsConfig,
}


@dataclass
class RunConfig:
    """Top-level configuration of one CLI run."""
    seed: int = 7
    workers: int = 1
    debug_dumps: bool = False
    traces: TraceConfig = field(default_factory=TraceConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    explore: ExploreConfig = field(default_factory=ExploreConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)
    suite: SuiteConfig = field(default_factory=SuiteConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    @property
    def dims(self) -> Tuple[int, int]:
        return self.model.dims

    def to_dict(self) -> Dict[str, Any]:
        """Convert configuration to dictionary for JSON serialization."""
        data: Dict[str, Any] = {
            "seed": self.seed,
            "dims": list(self.model.dims),
            "workers": self.workers,
            "debug_dumps": self.debug_dumps,
            "model": self.model.to_dict(),
        }
        del data["model"]["dims"]
        for name in _SECTIONS:
            data[name] = copy.deepcopy(vars(getattr(self, name)))
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """Create configuration from dictionary."""
        model_data = dict(data.get("model", {}))
        if "dims" in data:
            model_data["dims"] = data["dims"]
        sections = {
            name: section(**data.get(name, {}))
            for name, section in _SECTIONS.items()
        }
        return cls(
            seed=data.get("seed", 7),
            workers=data.get("workers", 1),
            debug_dumps=data.get("debug_dumps", False),
            model=ModelConfig.from_dict(model_data),
            **sections,
        )

    def canonical_json(self) -> str:
        """Sorted, compact JSON used in artifact headers."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def header(self) -> str:
        """One-line provenance header embedded in every artifact."""
        return f"mimic-explorer {__version__} seed={self.seed} config={self.canonical_json()}"


def parse_dims(text: str) -> Tuple[int, int]:
    """Parse a WxH string."""
    try:
        width, height = (int(part) for part in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"Invalid dims '{text}', expected WxH", field="dims", value=text)
    return width, height


class ConfigManager:
    """Loads, validates and overrides run configuration files."""

    def __init__(self, config_path: Optional[str] = None):
        """
        Initialize configuration manager.

        Args:
            config_path: Path to a JSON or TOML file. If None, uses packaged defaults.
        """
        self.config_path = Path(config_path) if config_path else None
        self.fallback_path = Path(__file__).parent / "data" / "default.json"
        self._config: Optional[RunConfig] = None

    def _read(self, path: Path) -> Dict[str, Any]:
        if path.suffix.lower() == ".toml":
            with open(path, 'rb') as f:
                return tomllib.load(f)
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)

    def load_config(self) -> RunConfig:
        """
        Load configuration from file with fallback to defaults.

        Returns:
            RunConfig: Loaded configuration

        Raises:
            ConfigValidationError: If the file is unreadable or invalid
            UsageError: If the given path does not exist
        """
        if self.config_path is None:
            data = self._load_default_data()
        else:
            if not self.config_path.exists():
                raise UsageError(f"Configuration file not found: {self.config_path}",
                                 field="config", value=str(self.config_path))
            try:
                data = self._read(self.config_path)
            except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
                raise ConfigValidationError(f"Invalid configuration syntax in {self.config_path}: {e}",
                                            field="config", value=str(self.config_path))
            logger.info(f"Loaded configuration from {self.config_path}")

        self._config = self.from_data(data)
        return self._config

    def _load_default_data(self) -> Dict[str, Any]:
        """Load default configuration from the packaged fallback file."""
        if self.fallback_path.exists():
            with open(self.fallback_path, 'r', encoding='utf-8') as f:
                data = json.load(f)
            logger.debug(f"Loaded default configuration from {self.fallback_path}")
            return data
        logger.warning("Default configuration file not found, using built-in defaults")
        return RunConfig().to_dict()

    @staticmethod
    def from_data(data: Dict[str, Any]) -> RunConfig:
        """Validate a configuration dictionary and build a RunConfig."""
        errors = ConfigValidator.validate_config(data)
        if errors:
            for error in errors:
                logger.error(f"Configuration error at {error.field}: {error.message}")
            raise errors[0]
        try:
            return RunConfig.from_dict(data)
        except (TypeError, ValueError) as e:
            raise ConfigValidationError(f"Invalid configuration: {e}")

    def get_config(self) -> RunConfig:
        if self._config is None:
            self._config = self.load_config()
        return self._config

    def apply_overrides(self, **overrides: Any) -> RunConfig:
        """
        Apply command line overrides on top of the loaded configuration.

        Keys use dotted section paths, e.g. ``explore.budget``; None values
        are ignored.

        Returns:
            RunConfig: Re-validated configuration
        """
        data = self.get_config().to_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            target = data
            parts = key.split(".")
            for part in parts[:-1]:
                target = target.setdefault(part, {})
            target[parts[-1]] = list(value) if isinstance(value, tuple) else value
        self._config = self.from_data(data)
        return self._config

    def save_config(self, path: Path) -> bool:
        """
        Save current configuration to file.

        Returns:
            bool: True if successful, False otherwise
        """
        if self._config is None:
            logger.error("No configuration to save")
            return False
        try:
            with open(path, 'w', encoding='utf-8') as f:
                json.dump(self._config.to_dict(), f, indent=2, sort_keys=True)
            logger.info(f"Saved configuration to {path}")
            return True
        except OSError as e:
            logger.error(f"Error saving configuration: {e}")
            return False
