"""
Synthetic solution, participant and cohort specifications
"""
from dataclasses import dataclass, field, fields
from typing import Any, Dict, Sequence, Tuple

import numpy as np

from src.models.spectra import N_CHANNELS, _readonly
from src.utils.errors import InvalidSpec

DEFAULT_SOURCE_I0 = (1200, 1500, 1800, 2000, 2200, 2400, 2500, 2600, 2600,
                     2500, 2400, 2300, 2200, 2000, 1800, 1600, 1400, 1200)
DEFAULT_BASELINE = (1.20, 1.10, 1.00, 0.95, 0.90, 0.92, 0.95, 0.85, 0.70,
                    0.60, 0.55, 0.50, 0.48, 0.46, 0.44, 0.45, 0.50, 0.55)
DEFAULT_SENSITIVITY = (0.01, 0.01, 0.01, 0.01, 0.01, 0.015, 0.015, 0.02, 0.02,
                       0.03, 0.04, 0.05, 0.06, 0.08, 0.10, 0.14, 0.18, 0.22)
DEFAULT_KNOTS = ((0.0, 0.0), (0.32, 0.10), (0.34, 0.50), (0.66, 0.56), (0.68, 0.90), (1.0, 1.0))


def _channel_vector(name: str, values: Any, non_negative: bool = False) -> np.ndarray:
    array = np.array(values, dtype=np.float64, copy=True)
    if array.shape != (N_CHANNELS,):
        raise InvalidSpec(f'{name} needs {N_CHANNELS} values, got {array.shape}')
    if not np.all(np.isfinite(array)):
        raise InvalidSpec(f'{name} must be finite')
    if non_negative and np.any(array < 0):
        raise InvalidSpec(f'{name} must be non-negative')
    return _readonly(array)


@dataclass(frozen=True, eq=False)
class SolutionSpec:
    concentration_mg: float
    molar_absorptivity_profile: np.ndarray
    solvent_baseline: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.concentration_mg) or self.concentration_mg < 0:
            raise InvalidSpec('concentration_mg must be finite and non-negative')
        profile = _channel_vector('molar_absorptivity_profile', self.molar_absorptivity_profile, non_negative=True)
        if not np.any(profile > 0):
            raise InvalidSpec('molar_absorptivity_profile must not be all zero')
        object.__setattr__(self, 'molar_absorptivity_profile', profile)
        object.__setattr__(self, 'solvent_baseline', _channel_vector('solvent_baseline', self.solvent_baseline))

    def absorbance(self) -> np.ndarray:
        """Beer-Lambert: baseline + concentration x profile"""
        return self.solvent_baseline + self.concentration_mg * self.molar_absorptivity_profile

    def with_concentration(self, concentration_mg: float) -> 'SolutionSpec':
        return SolutionSpec(concentration_mg, self.molar_absorptivity_profile, self.solvent_baseline)


@dataclass(frozen=True, eq=False)
class ParticipantSpec:
    """
    Ground truth for one simulated participant.

    `modulation_*` describe slow in-band hydration dynamics scaling the
    dehydration level; `respiration_*` describe an out-of-band interference
    common to all channels. Both default to off.
    """
    subject_id: int
    skin_attenuation: float
    baseline_absorbance: np.ndarray
    hydration_sensitivity: np.ndarray
    noise_sigma: float = 0.0
    seed: int = 0
    source_i0: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_SOURCE_I0, dtype=np.float64))
    modulation_depth: float = 0.0
    modulation_hz: float = 0.05
    modulation_phase: float = 0.0
    respiration_amplitude: float = 0.0
    respiration_hz: float = 0.4
    respiration_phase: float = 0.0

    def __post_init__(self):
        if not (0 < self.skin_attenuation <= 1):
            raise InvalidSpec('skin_attenuation must be in (0, 1]')
        if not np.isfinite(self.noise_sigma) or self.noise_sigma < 0:
            raise InvalidSpec('noise_sigma must be non-negative')
        if self.modulation_depth < 0 or self.respiration_amplitude < 0:
            raise InvalidSpec('modulation_depth and respiration_amplitude must be non-negative')
        source = _channel_vector('source_i0', self.source_i0)
        if np.any(source <= 0):
            raise InvalidSpec('source_i0 must be positive')
        object.__setattr__(self, 'source_i0', source)
        object.__setattr__(self, 'baseline_absorbance',
                           _channel_vector('baseline_absorbance', self.baseline_absorbance))
        object.__setattr__(self, 'hydration_sensitivity',
                           _channel_vector('hydration_sensitivity', self.hydration_sensitivity))

    def to_dict(self) -> Dict[str, Any]:
        data = {}
        for f in fields(self):
            value = getattr(self, f.name)
            data[f.name] = value.tolist() if isinstance(value, np.ndarray) else value
        return data


@dataclass(frozen=True)
class SessionSpec:
    duration_s: float = 2400.0
    rate_hz: float = 1.0
    knots: Tuple[Tuple[float, float], ...] = DEFAULT_KNOTS

    def __post_init__(self):
        if not (self.duration_s > 0 and 0 < self.rate_hz <= 1000):
            raise InvalidSpec('Session needs duration_s > 0 and 0 < rate_hz <= 1000')
        knots = tuple((float(f), float(level)) for f, level in self.knots)
        if len(knots) < 2:
            raise InvalidSpec('Trajectory needs at least two knots')
        fractions = np.array([f for f, _ in knots])
        levels = np.array([level for _, level in knots])
        if fractions[0] != 0.0 or fractions[-1] != 1.0 or np.any(np.diff(fractions) <= 0):
            raise InvalidSpec('Knot fractions must increase strictly from 0 to 1')
        if np.any(levels < 0) or np.any(levels > 1) or np.any(np.diff(levels) < 0):
            raise InvalidSpec('Dehydration levels must be non-decreasing within [0, 1]')
        object.__setattr__(self, 'knots', knots)

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.rate_hz))

    def times_s(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.rate_hz

    def timestamps_ms(self) -> np.ndarray:
        return np.rint(np.arange(self.n_samples) * 1000.0 / self.rate_hz).astype(np.int64)

    def dehydration(self, times_s: np.ndarray) -> np.ndarray:
        """Piecewise-linear trajectory over the session"""
        fractions = [f for f, _ in self.knots]
        levels = [level for _, level in self.knots]
        return np.interp(np.asarray(times_s) / self.duration_s, fractions, levels)

    def to_dict(self) -> Dict[str, Any]:
        return {'duration_s': self.duration_s, 'rate_hz': self.rate_hz,
                'knots': [list(knot) for knot in self.knots]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SessionSpec':
        knots = tuple(tuple(knot) for knot in data.get('knots', DEFAULT_KNOTS))
        return cls(duration_s=float(data.get('duration_s', 2400.0)),
                   rate_hz=float(data.get('rate_hz', 1.0)), knots=knots)


def _range(name: str, bounds: Sequence[float], low: float = 0.0) -> Tuple[float, float]:
    lo, hi = (float(b) for b in bounds)
    if not (low <= lo <= hi) or not np.isfinite(hi):
        raise InvalidSpec(f'{name} must be an ordered range with lower bound >= {low}')
    return lo, hi


@dataclass(frozen=True, eq=False)
class DiversitySpec:
    """Ranges the cohort generator draws each participant from"""
    skin_attenuation_range: Tuple[float, float] = (0.25, 1.0)
    baseline_jitter: float = 0.05
    sensitivity_scale_range: Tuple[float, float] = (0.85, 1.15)
    modulation_depth_range: Tuple[float, float] = (0.35, 0.45)
    modulation_hz_range: Tuple[float, float] = (0.04, 0.06)
    respiration_amplitude_range: Tuple[float, float] = (0.02, 0.08)
    respiration_hz_range: Tuple[float, float] = (0.35, 0.45)
    noise_sigma: float = 0.004
    baseline: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_BASELINE))
    sensitivity: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_SENSITIVITY))
    source_i0: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_SOURCE_I0, dtype=np.float64))

    def __post_init__(self):
        lo, hi = _range('skin_attenuation_range', self.skin_attenuation_range)
        if lo <= 0 or hi > 1:
            raise InvalidSpec('skin_attenuation_range must lie within (0, 1]')
        object.__setattr__(self, 'skin_attenuation_range', (lo, hi))
        for name in ('sensitivity_scale_range', 'modulation_depth_range', 'modulation_hz_range',
                     'respiration_amplitude_range', 'respiration_hz_range'):
            object.__setattr__(self, name, _range(name, getattr(self, name)))
        if self.baseline_jitter < 0 or self.noise_sigma < 0:
            raise InvalidSpec('baseline_jitter and noise_sigma must be non-negative')
        object.__setattr__(self, 'baseline', _channel_vector('baseline', self.baseline))
        object.__setattr__(self, 'sensitivity', _channel_vector('sensitivity', self.sensitivity))
        object.__setattr__(self, 'source_i0', _channel_vector('source_i0', self.source_i0))

    def without_sensitivity(self) -> 'DiversitySpec':
        """Same cohort with no hydration signal at all"""
        return self.replace(sensitivity=np.zeros(N_CHANNELS))

    def replace(self, **changes) -> 'DiversitySpec':
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return DiversitySpec(**data)

    def to_dict(self) -> Dict[str, Any]:
        data = {}
        for f in fields(self):
            value = getattr(self, f.name)
            data[f.name] = value.tolist() if isinstance(value, np.ndarray) else (
                list(value) if isinstance(value, tuple) else value)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DiversitySpec':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidSpec(f'Unknown diversity keys {unknown}')
        return cls(**{key: tuple(value) if key.endswith('_range') else value for key, value in data.items()})

