"""
Feature and dataset types
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from src.models.signal import EvmParams
from src.models.spectra import N_CHANNELS, ChannelMap, HydrationLabel
from src.utils.errors import InvalidSpec, ShapeMismatch

FEATURE_VERSION = 1
STAT_NAMES = ('mean', 'std', 'min', 'max', 'rms', 'absdiff')
N_STATS = len(STAT_NAMES)
N_FEATURES = N_CHANNELS * N_STATS


def feature_names(channel_map: Optional[ChannelMap] = None) -> List[str]:
    """Channel-major feature names, e.g. ch410_mean ... ch940_absdiff"""
    channel_map = channel_map or ChannelMap()
    return [f'{channel}_{stat}' for channel in channel_map.column_names for stat in STAT_NAMES]


def feature_index(channel: int, stat: str) -> int:
    return channel * N_STATS + STAT_NAMES.index(stat)


@dataclass(frozen=True)
class WindowSpec:
    length_s: float = 60.0
    stride_s: float = 10.0

    def __post_init__(self):
        if not (self.length_s > 0 and self.stride_s > 0):
            raise InvalidSpec('Window length and stride must be positive')
        if self.stride_s > self.length_s:
            raise InvalidSpec('Window stride must not exceed its length')

    def in_samples(self, sample_rate_hz: float):
        """(window, stride) lengths in samples"""
        length = int(round(self.length_s * sample_rate_hz))
        stride = int(round(self.stride_s * sample_rate_hz))
        if length < 1 or stride < 1:
            raise InvalidSpec(f'Window {self} is shorter than one sample at {sample_rate_hz} Hz')
        return length, stride


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    window_start_ms: int
    window_end_ms: int
    feature_version: int = FEATURE_VERSION

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.shape != (N_FEATURES,):
            raise ShapeMismatch(f'Feature vector needs {N_FEATURES} values, got {values.shape}')
        if not np.all(np.isfinite(values)):
            raise ShapeMismatch('Feature values must be finite')
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    subject_ids: np.ndarray

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64, copy=True)
        if features.size == 0:
            features = features.reshape(0, features.shape[-1] if features.ndim == 2 else N_FEATURES)
        if features.ndim != 2:
            raise ShapeMismatch(f'Feature matrix must be 2-D, got {features.shape}')
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        subjects = np.array(self.subject_ids, dtype=np.int64, copy=True).reshape(-1)
        if not (features.shape[0] == labels.shape[0] == subjects.shape[0]):
            raise ShapeMismatch('Feature, label and subject row counts must agree')
        valid_codes = [label.value for label in HydrationLabel]
        if labels.size and not np.all(np.isin(labels, valid_codes)):
            raise ShapeMismatch('Dataset contains invalid label codes')
        for array in (features, labels, subjects):
            array.setflags(write=False)
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'labels', labels)
        object.__setattr__(self, 'subject_ids', subjects)

    @classmethod
    def empty(cls) -> 'LabeledDataset':
        return cls(np.zeros((0, N_FEATURES)), np.zeros(0), np.zeros(0))

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def subjects(self) -> List[int]:
        return sorted(int(s) for s in np.unique(self.subject_ids))

    @property
    def classes(self) -> List[int]:
        return sorted(int(c) for c in np.unique(self.labels))

    def subset(self, rows: Sequence[int]) -> 'LabeledDataset':
        rows = np.asarray(rows, dtype=np.int64)
        return LabeledDataset(self.features[rows], self.labels[rows], self.subject_ids[rows])

    def for_subject(self, subject_id: int) -> 'LabeledDataset':
        return self.subset(np.flatnonzero(self.subject_ids == subject_id))

    @classmethod
    def concatenate(cls, parts: Sequence['LabeledDataset']) -> 'LabeledDataset':
        parts = [part for part in parts if len(part)]
        if not parts:
            return cls.empty()
        return cls(
            np.vstack([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.subject_ids for p in parts]),
        )


@dataclass(frozen=True)
class PipelineSpec:
    """Preprocessing applied to every recording before windowing"""
    use_evm: bool = True
    evm: EvmParams = field(default_factory=EvmParams)
    window: WindowSpec = field(default_factory=WindowSpec)

    def to_dict(self) -> Dict[str, Any]:
        return {'use_evm': self.use_evm, 'evm': self.evm.to_dict(),
                'window': {'length_s': self.window.length_s, 'stride_s': self.window.stride_s}}
