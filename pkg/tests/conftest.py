import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from src.models.dataset import N_FEATURES, LabeledDataset
from src.models.spectra import N_CHANNELS, AbsorbanceSeries
from src.models.synthetic import SessionSpec
from src.services.forest_service import train_forest
from src.services.synth_service import generate_cohort


def series_from(values, rate_hz=1.0, start_ms=0):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = np.tile(values[:, None], (1, N_CHANNELS))
    timestamps = start_ms + np.rint(np.arange(values.shape[0]) * 1000.0 / rate_hz).astype(np.int64)
    return AbsorbanceSeries(timestamps_ms=timestamps, values=values)


def blob_dataset(n_subjects=4, rows_per_class=15, shift=3.0, seed=0):
    """Three Gaussian classes, shifted apart along every feature"""
    rng = np.random.default_rng(seed)
    features, labels, subjects = [], [], []
    for subject in range(1, n_subjects + 1):
        for label in range(3):
            block = rng.normal(0.0, 1.0, (rows_per_class, N_FEATURES))
            block += shift * label
            features.append(block)
            labels.append(np.full(rows_per_class, label))
            subjects.append(np.full(rows_per_class, subject))
    return LabeledDataset(np.vstack(features), np.concatenate(labels), np.concatenate(subjects))


@pytest.fixture
def make_series():
    return series_from


@pytest.fixture(scope='session')
def blobs():
    return blob_dataset()


@pytest.fixture(scope='session')
def blob_model(blobs):
    return train_forest(blobs, n_estimators=12, max_depth=4, seed=3)


@pytest.fixture(scope='session')
def small_cohort():
    return generate_cohort(n_subjects=4, session=SessionSpec(duration_s=900.0), seed=11)
