"""
Absorbance computation and per-channel gain calibration
"""
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.models.spectra import (
    N_CHANNELS,
    AbsorbanceSeries,
    CalibrationProfile,
    ChannelMap,
    SpectralFrame,
)
from src.utils.errors import DegenerateReference, ShapeMismatch, ZeroIntensity

logger = logging.getLogger(__name__)


def apply_gains(frame: SpectralFrame, profile: CalibrationProfile) -> SpectralFrame:
    """Multiply channel intensities by the profile gains"""
    return SpectralFrame(timestamp_ms=frame.timestamp_ms, channels=frame.channels * profile.gains)


def compute_absorbance(frame: SpectralFrame, profile: CalibrationProfile) -> np.ndarray:
    """A[c] = log10(i0[c] / (gains[c] * I[c]))"""
    corrected = profile.gains * frame.channels
    if np.any(corrected <= 0):
        dark = np.flatnonzero(corrected <= 0).tolist()
        raise ZeroIntensity(f'Frame at {frame.timestamp_ms} ms has non-positive channels {dark}',
                            details={'timestamp_ms': frame.timestamp_ms, 'channels': dark})
    return np.log10(profile.i0 / corrected)


def absorbance_series(frames: Sequence[SpectralFrame], profile: CalibrationProfile,
                      channel_map: Optional[ChannelMap] = None) -> AbsorbanceSeries:
    """Absorbance of a whole recording; any dark frame rejects the recording"""
    if not frames:
        raise ShapeMismatch('Cannot build an absorbance series from zero frames')
    timestamps = np.array([frame.timestamp_ms for frame in frames], dtype=np.int64)
    intensities = np.vstack([frame.channels for frame in frames])
    corrected = profile.gains * intensities
    if np.any(corrected <= 0):
        row = int(np.argwhere(corrected <= 0)[0][0])
        raise ZeroIntensity(f'Frame at {int(timestamps[row])} ms has non-positive channels',
                            details={'timestamp_ms': int(timestamps[row])})
    values = np.log10(profile.i0 / corrected)
    return AbsorbanceSeries(timestamps_ms=timestamps, values=values, channel_map=channel_map or ChannelMap())


def resample_reference(wavelengths_nm: Sequence[float], absorbance: Sequence[float],
                       channel_map: Optional[ChannelMap] = None) -> np.ndarray:
    """Linearly interpolate a high-resolution spectrum onto the channel wavelengths"""
    channel_map = channel_map or ChannelMap()
    wavelengths = np.asarray(wavelengths_nm, dtype=np.float64)
    values = np.asarray(absorbance, dtype=np.float64)
    if wavelengths.shape != values.shape or wavelengths.ndim != 1 or wavelengths.size < 2:
        raise ShapeMismatch('Reference spectrum needs matching 1-D wavelength and absorbance arrays')
    if not np.all(np.isfinite(values)):
        raise DegenerateReference('Reference spectrum contains non-finite values')
    order = np.argsort(wavelengths)
    wavelengths, values = wavelengths[order], values[order]
    if wavelengths[0] > channel_map.wavelengths_nm[0] or wavelengths[-1] < channel_map.wavelengths_nm[-1]:
        raise ShapeMismatch('Reference spectrum does not cover 410-940 nm')
    return np.interp(channel_map.wavelengths_nm, wavelengths, values)


def _aligned_pair(measured: AbsorbanceSeries, reference: AbsorbanceSeries):
    if measured.values.shape[1] != reference.values.shape[1]:
        raise ShapeMismatch('Measured and reference channel counts differ')
    if not np.all(np.isfinite(reference.values)):
        raise DegenerateReference('Reference absorbance contains non-finite values')
    if measured.n_samples < 1 or reference.n_samples < 1:
        raise ShapeMismatch('Gain fitting needs at least one sample of each series')
    ref_values = reference.values
    if reference.n_samples == 1 and measured.n_samples > 1:
        ref_values = np.broadcast_to(ref_values, measured.values.shape)
    elif reference.n_samples != measured.n_samples:
        raise ShapeMismatch(
            f'Measured has {measured.n_samples} samples, reference has {reference.n_samples}')
    return measured.values, ref_values


def fit_channel_gains(measured: AbsorbanceSeries, reference: AbsorbanceSeries,
                      i0: Optional[Sequence[float]] = None,
                      channels: Optional[Sequence[int]] = None) -> CalibrationProfile:
    """
    Closed-form per-channel gains: log10 g[c] = mean(A_measured[c] - A_reference[c])

    Only the listed channels are fitted when `channels` is given; the others
    keep unit gain. A single-row reference is compared against every measured row.
    """
    measured_values, ref_values = _aligned_pair(measured, reference)
    log_gains = np.mean(measured_values - ref_values, axis=0)
    if channels is not None:
        selected = np.zeros(N_CHANNELS, dtype=bool)
        selected[list(channels)] = True
        log_gains = np.where(selected, log_gains, 0.0)
    gains = np.power(10.0, log_gains)
    profile = CalibrationProfile(
        i0=np.ones(N_CHANNELS) if i0 is None else i0,
        gains=gains,
        created_at_ms=int(measured.timestamps_ms[-1]),
    )
    logger.info(f"✅ Fitted gains for {N_CHANNELS if channels is None else len(channels)} channels "
                f"(range {gains.min():.4f} - {gains.max():.4f})")
    return profile


def gain_residuals(measured: AbsorbanceSeries, reference: AbsorbanceSeries,
                   profile: CalibrationProfile) -> Dict[str, List[float]]:
    """Per-channel residual mean and RMS after gain correction"""
    measured_values, ref_values = _aligned_pair(measured, reference)
    residual = measured_values - np.log10(profile.gains) - ref_values
    return {
        'mean': residual.mean(axis=0).tolist(),
        'rms': np.sqrt(np.mean(residual ** 2, axis=0)).tolist(),
    }
