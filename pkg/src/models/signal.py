"""
Filter and magnification parameter types
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np

from src.utils.errors import InvalidBand

ALLOWED_ORDERS = (2, 4, 6, 8)


@dataclass(frozen=True)
class BandSpec:
    low_hz: float = 0.01
    high_hz: float = 0.2
    sample_rate_hz: float = 1.0
    order: int = 2

    def __post_init__(self):
        errors = self.validation_errors()
        if errors:
            raise InvalidBand('Invalid band specification', details=errors)

    def validation_errors(self) -> Dict[str, str]:
        errors = {}
        values = (self.low_hz, self.high_hz, self.sample_rate_hz)
        if not all(np.isfinite(v) and v > 0 for v in values):
            errors['band'] = 'low_hz, high_hz and sample_rate_hz must be positive and finite'
        elif not self.low_hz < self.high_hz < self.sample_rate_hz / 2.0:
            errors['band'] = 'Need 0 < low_hz < high_hz < sample_rate_hz / 2'
        if self.order not in ALLOWED_ORDERS:
            errors['order'] = f'order must be one of {ALLOWED_ORDERS}'
        return errors

    @property
    def nyquist_hz(self) -> float:
        return self.sample_rate_hz / 2.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'low_hz': self.low_hz,
            'high_hz': self.high_hz,
            'sample_rate_hz': self.sample_rate_hz,
            'order': self.order,
        }


@dataclass(frozen=True, eq=False)
class BiquadCascade:
    """Second-order sections, rows (b0, b1, b2, 1, a1, a2)"""
    sections: np.ndarray

    def __post_init__(self):
        sections = np.array(self.sections, dtype=np.float64, copy=True)
        if sections.ndim != 2 or sections.shape[1] != 6 or sections.shape[0] == 0:
            raise InvalidBand(f'Sections must be an n x 6 array, got {sections.shape}')
        if not np.allclose(sections[:, 3], 1.0):
            raise InvalidBand('Sections must be normalised to a0 = 1')
        sections.setflags(write=False)
        object.__setattr__(self, 'sections', sections)

    @property
    def section_count(self) -> int:
        return int(self.sections.shape[0])

    @property
    def pad_length(self) -> int:
        # odd-reflection pad used by zero-phase filtering
        return 3 * 2 * self.section_count

    @property
    def min_signal_length(self) -> int:
        return 3 * self.pad_length

    def is_stable(self) -> bool:
        a1 = self.sections[:, 4]
        a2 = self.sections[:, 5]
        return bool(np.all(np.abs(a2) < 1.0) and np.all(np.abs(a1) < 1.0 + a2))

    def to_dict(self) -> Dict[str, List[Dict[str, float]]]:
        keys = ('b0', 'b1', 'b2', 'a0', 'a1', 'a2')
        return {'sections': [{k: float(v) for k, v in zip(keys, row) if k != 'a0'} for row in self.sections]}


@dataclass(frozen=True)
class EvmParams:
    alpha: float = 10.0
    band: BandSpec = field(default_factory=BandSpec)

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise InvalidBand('alpha must be finite and non-negative')

    def to_dict(self) -> Dict[str, Any]:
        return {'alpha': self.alpha, 'band': self.band.to_dict()}
