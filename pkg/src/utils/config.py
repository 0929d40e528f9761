"""
Run configuration: JSON file, environment defaults and flag overrides
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from src.models.dataset import PipelineSpec, WindowSpec
from src.models.forest import ForestParams
from src.models.signal import BandSpec, EvmParams
from src.utils.errors import ConfigError
from src.utils.validation import validate_config

logger = logging.getLogger(__name__)

DEFAULT_SEED = 7
DEFAULT_OUT = './out'


@dataclass
class SynthConfig:
    n_subjects: int = 6
    preset: str = 'default_cohort'
    duration_s: float = 2400.0
    rate_hz: float = 1.0


@dataclass
class EvmConfig:
    use_evm: bool = True
    alpha: float = 10.0
    low_hz: float = 0.01
    high_hz: float = 0.2
    order: int = 2


@dataclass
class WindowConfig:
    length_s: float = 60.0
    stride_s: float = 10.0


@dataclass
class ForestConfig:
    n_estimators: int = 80
    max_depth: int = 5
    max_features: Optional[int] = None


@dataclass
class CvConfig:
    k: int = 5
    grouped: bool = True


@dataclass
class StreamConfig:
    pace: str = 'fast'
    health_every: int = 100


@dataclass
class RunConfig:
    seed: int = DEFAULT_SEED
    out: str = DEFAULT_OUT
    synth: SynthConfig = field(default_factory=SynthConfig)
    evm: EvmConfig = field(default_factory=EvmConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    cv: CvConfig = field(default_factory=CvConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunConfig':
        sections = {
            'synth': SynthConfig, 'evm': EvmConfig, 'window': WindowConfig,
            'forest': ForestConfig, 'cv': CvConfig, 'stream': StreamConfig,
        }
        kwargs = {name: section(**data.get(name, {})) for name, section in sections.items()}
        return cls(seed=data.get('seed', DEFAULT_SEED), out=data.get('out', DEFAULT_OUT), **kwargs)

    def band(self) -> BandSpec:
        return BandSpec(low_hz=self.evm.low_hz, high_hz=self.evm.high_hz,
                        sample_rate_hz=self.synth.rate_hz, order=self.evm.order)

    def evm_params(self) -> EvmParams:
        return EvmParams(alpha=self.evm.alpha, band=self.band())

    def window_spec(self) -> WindowSpec:
        return WindowSpec(length_s=self.window.length_s, stride_s=self.window.stride_s)

    def forest_params(self) -> ForestParams:
        return ForestParams(n_estimators=self.forest.n_estimators, max_depth=self.forest.max_depth,
                            max_features=self.forest.max_features)

    def pipeline(self) -> PipelineSpec:
        return PipelineSpec(use_evm=self.evm.use_evm, evm=self.evm_params(), window=self.window_spec())


def _merge(base: Dict[str, Any], updates: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _dotted(overrides: Dict[str, Any]) -> Dict[str, Any]:
    """{'forest.max_depth': 3} -> {'forest': {'max_depth': 3}}; None values are skipped"""
    nested: Dict[str, Any] = {}
    for key, value in overrides.items():
        if value is None:
            continue
        target = nested
        parts = key.split('.')
        for part in parts[:-1]:
            target = target.setdefault(part, {})
        target[parts[-1]] = value
    return nested


def environment_defaults() -> Dict[str, Any]:
    defaults: Dict[str, Any] = {'out': os.getenv('HYDROTRACK_OUT', DEFAULT_OUT)}
    seed = os.getenv('HYDROTRACK_SEED')
    if seed is not None:
        try:
            defaults['seed'] = int(seed)
        except ValueError:
            raise ConfigError(f'HYDROTRACK_SEED must be an integer, got {seed!r}')
    return defaults


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Resolve a RunConfig: defaults < environment < config file < flag overrides.

    Unknown keys anywhere in the file are rejected.
    """
    file_data: Dict[str, Any] = {}
    if path:
        try:
            with open(path, encoding='utf-8') as handle:
                file_data = json.load(handle)
        except json.JSONDecodeError as e:
            raise ConfigError(f'Config file {path} is not valid JSON: {e}')
        result = validate_config(file_data)
        if not result['valid']:
            raise ConfigError(f'Invalid config file {path}', details=result['errors'])

    resolved = _merge(_merge(RunConfig().to_dict(), environment_defaults()), file_data)
    resolved = _merge(resolved, _dotted(overrides or {}))
    result = validate_config(resolved)
    if not result['valid']:
        raise ConfigError('Invalid configuration', details=result['errors'])
    config = RunConfig.from_dict(resolved)
    return config


def write_resolved_config(config: RunConfig, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / 'resolved_config.json'
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(config.to_dict(), handle, indent=2, sort_keys=True)
        handle.write('\n')
    logger.info(f"📊 Resolved config written to {path}: {json.dumps(config.to_dict(), sort_keys=True)}")
    return path
