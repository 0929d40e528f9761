"""
Butterworth band-pass design, zero-phase filtering and Eulerian magnification

Each spectral channel is treated as a single "pixel", so Eulerian magnification
reduces to temporal band-pass amplification per channel:
    y = x + alpha * bandpass(x)
"""
import logging
from typing import Sequence

import numpy as np
from scipy import signal

from src.models.signal import BandSpec, BiquadCascade, EvmParams
from src.models.spectra import AbsorbanceSeries
from src.utils.errors import InvalidBand, InvalidSpec, NonUniformSampling, TooShort

logger = logging.getLogger(__name__)

MAX_JITTER = 0.01


def design_butterworth_bandpass(spec: BandSpec) -> BiquadCascade:
    """
    Digital Butterworth band-pass as a biquad cascade.

    `spec.order` is the band-pass order, i.e. twice the low-pass prototype
    order. scipy pre-warps the edges, applies the low-pass to band-pass
    transform and the bilinear transform.
    """
    errors = spec.validation_errors()
    if errors:
        raise InvalidBand('Invalid band specification', details=errors)
    sos = signal.butter(spec.order // 2, [spec.low_hz, spec.high_hz], btype='bandpass',
                        fs=spec.sample_rate_hz, output='sos')
    cascade = BiquadCascade(sections=sos)
    if not cascade.is_stable():
        raise InvalidBand(f'Design for {spec} is numerically unstable')
    logger.debug(f"Designed {cascade.section_count}-section band-pass for {spec}")
    return cascade


def frequency_response(cascade: BiquadCascade, freqs_hz: Sequence[float], sample_rate_hz: float) -> np.ndarray:
    """Complex response H(e^jw) at the given frequencies"""
    _, response = signal.sosfreqz(cascade.sections, worN=np.asarray(freqs_hz, dtype=np.float64),
                                  fs=sample_rate_hz)
    return response


def filtfilt(cascade: BiquadCascade, data: np.ndarray, axis: int = 0) -> np.ndarray:
    """Forward-backward filtering with odd-reflection padding (zero phase)"""
    data = np.asarray(data, dtype=np.float64)
    length = data.shape[axis]
    if length <= cascade.min_signal_length:
        raise TooShort(f'Signal of {length} samples is too short for zero-phase filtering '
                       f'(needs more than {cascade.min_signal_length})')
    return signal.sosfiltfilt(np.array(cascade.sections), data, axis=axis, padtype='odd',
                              padlen=cascade.pad_length)


def causal_filter(cascade: BiquadCascade, data: np.ndarray, axis: int = 0) -> np.ndarray:
    """Single forward pass from a zero initial state"""
    return signal.sosfilt(np.array(cascade.sections), np.asarray(data, dtype=np.float64), axis=axis)


def check_uniform_sampling(series: AbsorbanceSeries, sample_rate_hz: float) -> None:
    expected_ms = 1000.0 / sample_rate_hz
    steps = np.diff(series.timestamps_ms).astype(np.float64)
    jitter = np.max(np.abs(steps - expected_ms)) / expected_ms
    if jitter > MAX_JITTER:
        raise NonUniformSampling(
            f'Sampling jitter {jitter:.2%} exceeds {MAX_JITTER:.0%} at {sample_rate_hz} Hz',
            details={'jitter': float(jitter)})


def bandpass_component(series: AbsorbanceSeries, band: BandSpec) -> np.ndarray:
    """Zero-phase band-passed copy of every channel"""
    if series.n_samples < 2:
        raise TooShort('Band-pass filtering needs at least 2 samples')
    check_uniform_sampling(series, band.sample_rate_hz)
    return filtfilt(design_butterworth_bandpass(band), series.values, axis=0)


def eulerian_magnify(series: AbsorbanceSeries, params: EvmParams) -> AbsorbanceSeries:
    """Add back alpha times the band-passed signal, per channel"""
    bandpassed = bandpass_component(series, params.band)
    return series.with_values(series.values + params.alpha * bandpassed)


def causal_magnify(series: AbsorbanceSeries, params: EvmParams) -> AbsorbanceSeries:
    """Single-pass variant of eulerian_magnify, as run on the device"""
    if series.n_samples < 2:
        raise TooShort('Magnification needs at least 2 samples')
    check_uniform_sampling(series, params.band.sample_rate_hz)
    cascade = design_butterworth_bandpass(params.band)
    return series.with_values(series.values + params.alpha * causal_filter(cascade, series.values))


def resample_uniform(series: AbsorbanceSeries, target_hz: float) -> AbsorbanceSeries:
    """Linear interpolation onto a uniform grid from the first to the last timestamp"""
    if series.n_samples < 2:
        raise TooShort('Resampling needs at least 2 samples')
    if not (0 < target_hz <= 1000.0):
        raise InvalidSpec('target_hz must be in (0, 1000] for millisecond timestamps')
    start = float(series.timestamps_ms[0])
    span = float(series.timestamps_ms[-1]) - start
    step_ms = 1000.0 / target_hz
    count = int(np.floor(span / step_ms + 1e-9)) + 1
    grid = start + np.arange(count) * step_ms
    source_t = series.timestamps_ms.astype(np.float64)
    values = np.column_stack([
        np.interp(grid, source_t, series.values[:, channel])
        for channel in range(series.values.shape[1])
    ])
    return AbsorbanceSeries(timestamps_ms=np.rint(grid).astype(np.int64), values=values,
                            channel_map=series.channel_map)
