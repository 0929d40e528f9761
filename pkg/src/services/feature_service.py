"""
Windowed feature extraction and dataset assembly
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.models.dataset import (
    FEATURE_VERSION,
    FeatureVector,
    LabeledDataset,
    PipelineSpec,
    WindowSpec,
)
from src.models.signal import EvmParams
from src.models.spectra import AbsorbanceSeries, HydrationLabel
from src.services.dsp_service import causal_magnify, eulerian_magnify
from src.utils.errors import TooShort

logger = logging.getLogger(__name__)


def window_statistics(windows: np.ndarray) -> np.ndarray:
    """
    Statistics of windows shaped (n_windows, n_channels, length).

    Returns (n_windows, n_channels * 6) in channel-major order:
    mean, std, min, max, rms, absdiff.
    """
    mean = windows.mean(axis=-1)
    std = windows.std(axis=-1)
    low = windows.min(axis=-1)
    high = windows.max(axis=-1)
    rms = np.sqrt(np.mean(windows ** 2, axis=-1))
    if windows.shape[-1] > 1:
        absdiff = np.mean(np.abs(np.diff(windows, axis=-1)), axis=-1)
    else:
        absdiff = np.zeros_like(mean)
    stats = np.stack([mean, std, low, high, rms, absdiff], axis=-1)
    return stats.reshape(stats.shape[0], -1)


def window_count(n_samples: int, length: int, stride: int) -> int:
    if n_samples < length:
        return 0
    return (n_samples - length) // stride + 1


def feature_matrix(series: AbsorbanceSeries, spec: WindowSpec,
                   sample_rate_hz: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Feature rows plus window start/end timestamps"""
    rate = sample_rate_hz or series.sample_rate_hz()
    if rate <= 0:
        raise TooShort('Cannot infer a sample rate from fewer than 2 samples')
    length, stride = spec.in_samples(rate)
    count = window_count(series.n_samples, length, stride)
    if count == 0:
        raise TooShort(f'Series of {series.n_samples} samples holds no full {length}-sample window')
    windows = sliding_window_view(series.values, length, axis=0)[::stride][:count]
    starts = np.arange(count) * stride
    return (
        window_statistics(windows),
        series.timestamps_ms[starts],
        series.timestamps_ms[starts + length - 1],
    )


def extract_features(series: AbsorbanceSeries, spec: WindowSpec,
                     sample_rate_hz: Optional[float] = None) -> List[FeatureVector]:
    """One feature vector per full window; partial trailing windows are dropped"""
    rows, starts, ends = feature_matrix(series, spec, sample_rate_hz)
    return [
        FeatureVector(values=row, window_start_ms=int(start), window_end_ms=int(end),
                      feature_version=FEATURE_VERSION)
        for row, start, end in zip(rows, starts, ends)
    ]


@dataclass
class DatasetBuild:
    dataset: LabeledDataset
    skipped: int


def build_dataset(recordings: Sequence[Tuple[AbsorbanceSeries, HydrationLabel, int]],
                  spec: WindowSpec, sample_rate_hz: Optional[float] = None) -> DatasetBuild:
    """Concatenate window features; each window inherits its recording's label and subject"""
    features, labels, subjects = [], [], []
    skipped = 0
    for series, label, subject_id in recordings:
        try:
            rows, _, _ = feature_matrix(series, spec, sample_rate_hz)
        except TooShort as e:
            skipped += 1
            logger.warning(f"⚠️ Skipping recording of subject {subject_id} ({HydrationLabel(label).name}): {e}")
            continue
        features.append(rows)
        labels.append(np.full(rows.shape[0], int(label)))
        subjects.append(np.full(rows.shape[0], int(subject_id)))
    if not features:
        return DatasetBuild(dataset=LabeledDataset.empty(), skipped=skipped)
    dataset = LabeledDataset(np.vstack(features), np.concatenate(labels), np.concatenate(subjects))
    logger.info(f"📊 Built dataset: {len(dataset)} windows from {len(features)} recordings, {skipped} skipped")
    return DatasetBuild(dataset=dataset, skipped=skipped)


def train_serve_gap(series: AbsorbanceSeries, params: EvmParams, spec: WindowSpec) -> np.ndarray:
    """Mean absolute feature difference between zero-phase and causal preprocessing"""
    offline, _, _ = feature_matrix(eulerian_magnify(series, params), spec, params.band.sample_rate_hz)
    causal, _, _ = feature_matrix(causal_magnify(series, params), spec, params.band.sample_rate_hz)
    return np.mean(np.abs(offline - causal), axis=0)


def preprocess_recordings(recordings: Sequence[Tuple[AbsorbanceSeries, HydrationLabel, int]],
                          pipeline: PipelineSpec) -> DatasetBuild:
    """Magnify each recording on its own (when enabled), then window them all"""
    prepared, skipped = [], 0
    for series, label, subject_id in recordings:
        if pipeline.use_evm:
            try:
                series = eulerian_magnify(series, pipeline.evm)
            except TooShort as e:
                skipped += 1
                logger.warning(f"⚠️ Skipping recording of subject {subject_id} ({HydrationLabel(label).name}): {e}")
                continue
        prepared.append((series, label, subject_id))
    build = build_dataset(prepared, pipeline.window, pipeline.evm.band.sample_rate_hz)
    return DatasetBuild(dataset=build.dataset, skipped=build.skipped + skipped)
