"""
Spectral domain types: frames, channel map, calibration profile, absorbance series
"""
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from src.utils.errors import InvalidFrame, ShapeMismatch

N_CHANNELS = 18

# AS7265x nominal channel centres
DEFAULT_WAVELENGTHS_NM = (
    410.0, 435.0, 460.0, 485.0, 510.0, 535.0, 560.0, 585.0, 610.0,
    645.0, 680.0, 705.0, 730.0, 760.0, 810.0, 860.0, 900.0, 940.0,
)


class HydrationLabel(IntEnum):
    FULLY_HYDRATED = 0
    MID_HYDRATED = 1
    DEHYDRATED = 2

    @classmethod
    def from_dehydration(cls, level: float) -> 'HydrationLabel':
        """Map a dehydration level in [0, 1] to its class"""
        if level < 1.0 / 3.0:
            return cls.FULLY_HYDRATED
        if level < 2.0 / 3.0:
            return cls.MID_HYDRATED
        return cls.DEHYDRATED

    @property
    def display_name(self) -> str:
        return {
            HydrationLabel.FULLY_HYDRATED: 'Fully Hydrated',
            HydrationLabel.MID_HYDRATED: 'Mid-Hydrated',
            HydrationLabel.DEHYDRATED: 'Dehydrated',
        }[self]


def _readonly(values: Any, dtype=np.float64) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ChannelMap:
    wavelengths_nm: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_WAVELENGTHS_NM))

    def __post_init__(self):
        wavelengths = _readonly(self.wavelengths_nm)
        if wavelengths.shape != (N_CHANNELS,):
            raise InvalidFrame(f'Channel map needs {N_CHANNELS} wavelengths, got {wavelengths.shape}')
        if not np.all(np.isfinite(wavelengths)) or np.any(np.diff(wavelengths) <= 0):
            raise InvalidFrame('Channel wavelengths must be finite and strictly increasing')
        if wavelengths[0] != 410.0 or wavelengths[-1] != 940.0:
            raise InvalidFrame('Channel map must span 410 nm to 940 nm')
        object.__setattr__(self, 'wavelengths_nm', wavelengths)

    @property
    def column_names(self) -> List[str]:
        return [f'ch{int(round(w))}' for w in self.wavelengths_nm]

    def __eq__(self, other):
        return isinstance(other, ChannelMap) and np.array_equal(self.wavelengths_nm, other.wavelengths_nm)

    def __hash__(self):
        return hash(tuple(self.wavelengths_nm.tolist()))


@dataclass(frozen=True, eq=False)
class SpectralFrame:
    """One timestamped 18-channel raw intensity reading"""
    timestamp_ms: int
    channels: np.ndarray

    def __post_init__(self):
        channels = _readonly(self.channels)
        if channels.shape != (N_CHANNELS,):
            raise InvalidFrame(f'Frame needs {N_CHANNELS} channels, got {channels.shape}')
        if not np.all(np.isfinite(channels)):
            raise InvalidFrame(f'Frame at {self.timestamp_ms} ms has non-finite channels')
        if np.any(channels < 0):
            raise InvalidFrame(f'Frame at {self.timestamp_ms} ms has negative intensities')
        object.__setattr__(self, 'timestamp_ms', int(self.timestamp_ms))
        object.__setattr__(self, 'channels', channels)


@dataclass(frozen=True, eq=False)
class CalibrationProfile:
    i0: np.ndarray
    gains: np.ndarray
    created_at_ms: int = 0

    def __post_init__(self):
        i0 = _readonly(self.i0)
        gains = _readonly(self.gains)
        if i0.shape != (N_CHANNELS,) or gains.shape != (N_CHANNELS,):
            raise ShapeMismatch('Calibration profile needs 18 i0 values and 18 gains')
        if not np.all(np.isfinite(i0)) or np.any(i0 <= 0):
            raise InvalidFrame('Calibration i0 must be finite and positive')
        if not np.all(np.isfinite(gains)) or np.any(gains <= 0):
            raise InvalidFrame('Calibration gains must be finite and positive')
        object.__setattr__(self, 'i0', i0)
        object.__setattr__(self, 'gains', gains)
        object.__setattr__(self, 'created_at_ms', int(self.created_at_ms))

    @classmethod
    def unit(cls, i0: Optional[Sequence[float]] = None, created_at_ms: int = 0) -> 'CalibrationProfile':
        """Profile with unit gains"""
        i0 = np.ones(N_CHANNELS) if i0 is None else i0
        return cls(i0=i0, gains=np.ones(N_CHANNELS), created_at_ms=created_at_ms)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'i0': self.i0.tolist(),
            'gains': self.gains.tolist(),
            'created_at_ms': self.created_at_ms,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CalibrationProfile':
        missing = [key for key in ('i0', 'gains', 'created_at_ms') if key not in data]
        if missing:
            raise ShapeMismatch(f'Calibration profile is missing {missing}')
        return cls(i0=data['i0'], gains=data['gains'], created_at_ms=data['created_at_ms'])


@dataclass(frozen=True, eq=False)
class AbsorbanceSeries:
    """Calibrated absorbance time series (T x 18)"""
    timestamps_ms: np.ndarray
    values: np.ndarray
    channel_map: ChannelMap = field(default_factory=ChannelMap)

    def __post_init__(self):
        timestamps = _readonly(self.timestamps_ms, dtype=np.int64)
        values = _readonly(self.values)
        if values.ndim != 2 or values.shape[1] != N_CHANNELS:
            raise ShapeMismatch(f'Absorbance values must be T x {N_CHANNELS}, got {values.shape}')
        if timestamps.shape != (values.shape[0],):
            raise ShapeMismatch('Row count must equal timestamp count')
        if not np.all(np.isfinite(values)):
            raise InvalidFrame('Absorbance values must be finite')
        if timestamps.size > 1 and np.any(np.diff(timestamps) <= 0):
            raise InvalidFrame('Timestamps must be strictly increasing')
        object.__setattr__(self, 'timestamps_ms', timestamps)
        object.__setattr__(self, 'values', values)

    @property
    def n_samples(self) -> int:
        return int(self.values.shape[0])

    def sample_rate_hz(self) -> float:
        """Mean sample rate implied by the timestamps"""
        if self.n_samples < 2:
            return 0.0
        span_ms = float(self.timestamps_ms[-1] - self.timestamps_ms[0])
        return 1000.0 * (self.n_samples - 1) / span_ms

    def with_values(self, values: np.ndarray) -> 'AbsorbanceSeries':
        return AbsorbanceSeries(timestamps_ms=self.timestamps_ms, values=values, channel_map=self.channel_map)

    def shifted(self, offset_ms: int) -> 'AbsorbanceSeries':
        return AbsorbanceSeries(timestamps_ms=self.timestamps_ms + int(offset_ms), values=self.values,
                                channel_map=self.channel_map)
