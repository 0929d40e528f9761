"""
Fixed-memory streaming inference
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import signal

from src.models.dataset import FEATURE_VERSION, N_STATS, FeatureVector, WindowSpec
from src.models.signal import EvmParams
from src.models.spectra import N_CHANNELS, CalibrationProfile, HydrationLabel, SpectralFrame
from src.services.calibration_service import compute_absorbance
from src.services.dsp_service import design_butterworth_bandpass
from src.services.edge_service import CompactModel, runtime_for
from src.utils.errors import OutOfOrderFrame, ShapeMismatch, VersionMismatch

logger = logging.getLogger(__name__)


@dataclass
class StreamOutput:
    timestamp_ms: int
    label: HydrationLabel
    probabilities: np.ndarray
    features: FeatureVector

    def as_line(self) -> str:
        probs = ','.join(f'{p:.6f}' for p in self.probabilities)
        return f'{self.timestamp_ms},{int(self.label)},{probs}'


class _ExtremeQueue:
    """Monotonic queue per channel over a circular buffer of fixed capacity"""

    def __init__(self, n_channels: int, capacity: int, keep_max: bool):
        self.capacity = capacity
        self.keep_max = keep_max
        self.seqs = np.zeros((n_channels, capacity), dtype=np.int64)
        self.values = np.zeros((n_channels, capacity))
        self.head = np.zeros(n_channels, dtype=np.int64)
        self.size = np.zeros(n_channels, dtype=np.int64)

    def push(self, seq: int, sample: np.ndarray) -> None:
        capacity = self.capacity
        oldest_allowed = seq - capacity + 1
        for channel, value in enumerate(sample.tolist()):
            seqs, values = self.seqs[channel], self.values[channel]
            head, size = int(self.head[channel]), int(self.size[channel])
            if size and seqs[head] < oldest_allowed:
                head = (head + 1) % capacity
                size -= 1
            while size:
                tail = (head + size - 1) % capacity
                last = values[tail]
                if (last <= value) if self.keep_max else (last >= value):
                    size -= 1
                else:
                    break
            slot = (head + size) % capacity
            seqs[slot] = seq
            values[slot] = value
            self.head[channel] = head
            self.size[channel] = size + 1

    def front(self) -> np.ndarray:
        return np.take_along_axis(self.values, self.head[:, None], axis=1)[:, 0]

    @property
    def nbytes(self) -> int:
        return self.seqs.nbytes + self.values.nbytes + self.head.nbytes + self.size.nbytes


class StreamState:
    """
    Ring buffer, causal filter delay lines and running window statistics.

    All buffers are sized at construction from the window length in samples;
    nothing grows while frames are pushed.
    """

    def __init__(self, evm: EvmParams, window: WindowSpec, n_channels: int = N_CHANNELS):
        rate = evm.band.sample_rate_hz
        self.length, self.stride = window.in_samples(rate)
        self.alpha = float(evm.alpha)
        self.n_channels = n_channels
        self.sections = design_butterworth_bandpass(evm.band).sections
        self._zi = np.zeros((self.sections.shape[0], 2, n_channels))

        L, C = self.length, n_channels
        self._values = np.zeros((L, C))
        self._diffs = np.zeros((L, C))
        self._timestamps = np.zeros(L, dtype=np.int64)
        self._previous = np.zeros(C)
        self._shift = np.zeros(C)
        self._sum = np.zeros(C)
        self._sum_sq = np.zeros(C)
        self._diff_sum = np.zeros(C)
        self._max = _ExtremeQueue(C, L, keep_max=True)
        self._min = _ExtremeQueue(C, L, keep_max=False)
        self._stats = np.zeros((C, N_STATS))

        self.count = 0
        self.last_timestamp_ms: Optional[int] = None

    def footprint_bytes(self) -> int:
        arrays = (self._zi, self._values, self._diffs, self._timestamps, self._previous, self._shift,
                  self._sum, self._sum_sq, self._diff_sum, self._stats)
        return sum(a.nbytes for a in arrays) + self._max.nbytes + self._min.nbytes

    def _filter(self, absorbance: np.ndarray) -> np.ndarray:
        filtered, self._zi[...] = signal.sosfilt(np.array(self.sections), absorbance[None, :], axis=0, zi=self._zi)
        return absorbance + self.alpha * filtered[0]

    def _reanchor(self) -> None:
        # recompute running sums from the ring to stop rounding drift
        self._shift[:] = self._values.mean(axis=0)
        centered = self._values - self._shift
        self._sum[:] = centered.sum(axis=0)
        self._sum_sq[:] = np.sum(centered * centered, axis=0)
        self._diff_sum[:] = self._diffs.sum(axis=0)

    def push(self, timestamp_ms: int, absorbance: np.ndarray) -> Optional[FeatureVector]:
        """Add one absorbance sample; returns window features when one is due"""
        timestamp_ms = int(timestamp_ms)
        if self.last_timestamp_ms is not None and timestamp_ms <= self.last_timestamp_ms:
            raise OutOfOrderFrame(f'Frame at {timestamp_ms} ms arrived after {self.last_timestamp_ms} ms')
        absorbance = np.asarray(absorbance, dtype=np.float64)
        if absorbance.shape != (self.n_channels,):
            raise ShapeMismatch(f'Expected {self.n_channels} channels, got {absorbance.shape}')

        sample = self._filter(absorbance)
        seq = self.count
        slot = seq % self.length
        if seq == 0:
            self._shift[:] = sample
            diff = np.zeros(self.n_channels)
        else:
            diff = np.abs(sample - self._previous)
        if seq >= self.length:
            evicted = self._values[slot] - self._shift
            self._sum -= evicted
            self._sum_sq -= evicted * evicted
            self._diff_sum -= self._diffs[slot]

        self._values[slot] = sample
        self._diffs[slot] = diff
        self._timestamps[slot] = timestamp_ms
        centered = sample - self._shift
        self._sum += centered
        self._sum_sq += centered * centered
        self._diff_sum += diff
        self._max.push(seq, sample)
        self._min.push(seq, sample)
        self._previous[:] = sample

        self.count += 1
        self.last_timestamp_ms = timestamp_ms
        if self.count % self.length == 0:
            self._reanchor()
        if self.count < self.length or (self.count - self.length) % self.stride:
            return None
        return self._features(timestamp_ms)

    def _features(self, timestamp_ms: int) -> FeatureVector:
        L = self.length
        oldest = self.count % L
        centered_mean = self._sum / L
        mean = self._shift + centered_mean
        variance = np.maximum(self._sum_sq / L - centered_mean * centered_mean, 0.0)
        stats = self._stats
        stats[:, 0] = mean
        stats[:, 1] = np.sqrt(variance)
        stats[:, 2] = self._min.front()
        stats[:, 3] = self._max.front()
        stats[:, 4] = np.sqrt(variance + mean * mean)
        stats[:, 5] = (self._diff_sum - self._diffs[oldest]) / (L - 1) if L > 1 else 0.0
        return FeatureVector(values=stats.reshape(-1), window_start_ms=int(self._timestamps[oldest]),
                             window_end_ms=timestamp_ms, feature_version=FEATURE_VERSION)


def stream_step(state: StreamState, frame: SpectralFrame, profile: CalibrationProfile,
                compact: CompactModel) -> Optional[StreamOutput]:
    """Absorbance, causal magnification and windowing for one frame; classify when a window is due"""
    if compact.feature_version != FEATURE_VERSION:
        raise VersionMismatch(f'Model expects feature version {compact.feature_version}, '
                              f'stream produces {FEATURE_VERSION}')
    if state.last_timestamp_ms is not None and frame.timestamp_ms <= state.last_timestamp_ms:
        raise OutOfOrderFrame(f'Frame at {frame.timestamp_ms} ms arrived after {state.last_timestamp_ms} ms')
    features = state.push(frame.timestamp_ms, compute_absorbance(frame, profile))
    if features is None:
        return None
    runtime = runtime_for(compact)
    label = runtime.infer_into(features.values)
    return StreamOutput(
        timestamp_ms=frame.timestamp_ms,
        label=HydrationLabel(label),
        probabilities=runtime.probabilities.copy(),
        features=features,
    )
