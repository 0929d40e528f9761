import io

import numpy as np
import pytest

from conftest import series_from
from src.models.dataset import (
    FEATURE_VERSION,
    N_FEATURES,
    STAT_NAMES,
    FeatureVector,
    LabeledDataset,
    PipelineSpec,
    WindowSpec,
    feature_index,
    feature_names,
)
from src.models.signal import EvmParams
from src.models.spectra import N_CHANNELS, HydrationLabel
from src.services.feature_service import (
    build_dataset,
    extract_features,
    feature_matrix,
    preprocess_recordings,
    train_serve_gap,
    window_count,
    window_statistics,
)
from src.utils.errors import InvalidSpec, ShapeMismatch, TooShort
from src.utils.io import read_dataset_csv, write_dataset_csv


class TestFeatureLayout:
    def test_channel_major_names(self):
        names = feature_names()
        assert len(names) == N_FEATURES == 108
        assert names[:6] == ['ch410_mean', 'ch410_std', 'ch410_min', 'ch410_max', 'ch410_rms', 'ch410_absdiff']
        assert names[feature_index(17, 'absdiff')] == 'ch940_absdiff'

    def test_vector_must_hold_every_feature(self):
        with pytest.raises(ShapeMismatch):
            FeatureVector(values=np.zeros(107), window_start_ms=0, window_end_ms=1)

    def test_window_spec_validation(self):
        with pytest.raises(InvalidSpec):
            WindowSpec(length_s=10.0, stride_s=20.0)
        assert WindowSpec(60.0, 10.0).in_samples(2.0) == (120, 20)


class TestWindowStatistics:
    def test_statistics_of_a_known_window(self):
        window = np.array([1.0, 3.0, 2.0, 6.0])
        stats = window_statistics(np.tile(window, (1, N_CHANNELS, 1)))[0, :6]
        assert stats[0] == pytest.approx(3.0)
        assert stats[1] == pytest.approx(np.std(window))
        assert stats[2] == 1.0 and stats[3] == 6.0
        assert stats[4] == pytest.approx(np.sqrt(np.mean(window ** 2)))
        assert stats[5] == pytest.approx((2.0 + 1.0 + 4.0) / 3.0)

    def test_single_sample_window_has_zero_absdiff(self):
        stats = window_statistics(np.ones((1, N_CHANNELS, 1)))
        assert np.all(stats[0, 5::6] == 0.0)


class TestExtractFeatures:
    def test_sixty_seconds_gives_one_window(self, make_series):
        vectors = extract_features(make_series(np.arange(60.0)), WindowSpec())
        assert len(vectors) == 1
        assert vectors[0].window_start_ms == 0
        assert vectors[0].window_end_ms == 59000
        assert vectors[0].feature_version == FEATURE_VERSION

    def test_windows_follow_the_stride(self, make_series):
        vectors = extract_features(make_series(np.arange(125.0)), WindowSpec())
        assert [v.window_start_ms for v in vectors] == [0, 10000, 20000, 30000, 40000, 50000, 60000]

    def test_two_minutes_give_seven_windows(self, make_series):
        vectors = extract_features(make_series(np.arange(120.0)), WindowSpec(60.0, 10.0))
        assert len(vectors) == 7
        assert vectors[-1].window_end_ms == 119000

    def test_window_count_sweep(self, make_series):
        for length in range(1, 8):
            for stride in range(1, length + 1):
                for n_samples in range(1, 30):
                    expected = len(range(0, n_samples - length + 1, stride))
                    assert window_count(n_samples, length, stride) == expected
                    spec = WindowSpec(float(length), float(stride))
                    if expected == 0:
                        with pytest.raises(TooShort):
                            feature_matrix(make_series(np.zeros(n_samples)), spec, 1.0)
                    else:
                        rows, _, _ = feature_matrix(make_series(np.zeros(n_samples)), spec, 1.0)
                        assert rows.shape == (expected, N_FEATURES)

    def test_unit_sinusoid_rms(self, make_series):
        wave = np.sin(2 * np.pi * np.arange(60) / 20.0)
        row = extract_features(make_series(wave), WindowSpec())[0].values
        assert row[feature_index(0, 'rms')] == pytest.approx(0.7071, rel=0.01)

    def test_partial_window_is_too_short(self, make_series):
        with pytest.raises(TooShort):
            extract_features(make_series(np.zeros(59)), WindowSpec())

    def test_channels_are_kept_apart(self, make_series):
        values = np.zeros((60, N_CHANNELS))
        values[:, 3] = 2.0
        row = extract_features(make_series(values), WindowSpec())[0].values
        assert row[feature_index(3, 'mean')] == 2.0
        assert row[feature_index(2, 'mean')] == 0.0


class TestFeatureTransforms:
    @pytest.fixture
    def values(self):
        return np.random.default_rng(8).normal(size=(90, N_CHANNELS))

    @staticmethod
    def stats_of(series):
        rows, starts, ends = feature_matrix(series, WindowSpec(), 1.0)
        return rows.reshape(rows.shape[0], N_CHANNELS, -1), starts, ends

    def test_shifting_timestamps_only_moves_the_windows(self, values):
        base, starts, ends = self.stats_of(series_from(values))
        moved, moved_starts, moved_ends = self.stats_of(series_from(values, start_ms=123456))
        assert np.array_equal(base, moved)
        assert np.array_equal(moved_starts - starts, np.full(starts.size, 123456))
        assert np.array_equal(moved_ends - ends, np.full(ends.size, 123456))

    def test_offset_moves_location_but_not_spread(self, values):
        base, _, _ = self.stats_of(series_from(values))
        shifted, _, _ = self.stats_of(series_from(values + 4.0))
        for stat in ('mean', 'min', 'max'):
            i = STAT_NAMES.index(stat)
            assert np.allclose(shifted[..., i], base[..., i] + 4.0)
        for stat in ('std', 'absdiff'):
            i = STAT_NAMES.index(stat)
            assert np.allclose(shifted[..., i], base[..., i])

    @pytest.mark.parametrize('k', [2.5, -2.0])
    def test_scaling(self, values, k):
        base, _, _ = self.stats_of(series_from(values))
        scaled, _, _ = self.stats_of(series_from(k * values))
        index = {stat: STAT_NAMES.index(stat) for stat in STAT_NAMES}
        assert np.allclose(scaled[..., index['mean']], k * base[..., index['mean']])
        for stat in ('std', 'rms', 'absdiff'):
            assert np.allclose(scaled[..., index[stat]], abs(k) * base[..., index[stat]])
        low, high = (index['min'], index['max']) if k > 0 else (index['max'], index['min'])
        assert np.allclose(scaled[..., index['min']], k * base[..., low])
        assert np.allclose(scaled[..., index['max']], k * base[..., high])


class TestDatasetAssembly:
    def test_windows_inherit_label_and_subject(self, make_series):
        recordings = [
            (make_series(np.zeros(80)), HydrationLabel.FULLY_HYDRATED, 1),
            (make_series(np.ones(70)), HydrationLabel.DEHYDRATED, 2),
        ]
        build = build_dataset(recordings, WindowSpec())
        assert build.skipped == 0
        assert build.dataset.labels.tolist() == [0, 0, 0, 2, 2]
        assert build.dataset.subject_ids.tolist() == [1, 1, 1, 2, 2]

    def test_short_recordings_are_skipped(self, make_series):
        recordings = [
            (make_series(np.zeros(30)), HydrationLabel.MID_HYDRATED, 1),
            (make_series(np.zeros(60)), HydrationLabel.MID_HYDRATED, 1),
        ]
        build = build_dataset(recordings, WindowSpec())
        assert build.skipped == 1
        assert len(build.dataset) == 1

    def test_nothing_usable_gives_an_empty_dataset(self, make_series):
        build = build_dataset([(make_series(np.zeros(5)), HydrationLabel.MID_HYDRATED, 1)], WindowSpec())
        assert len(build.dataset) == 0
        assert build.dataset.n_features == N_FEATURES

    def test_preprocessing_with_and_without_magnification(self, make_series):
        t = np.arange(200)
        series = make_series(1.0 + 0.01 * np.sin(2 * np.pi * 0.05 * t))
        raw = preprocess_recordings([(series, HydrationLabel.DEHYDRATED, 3)], PipelineSpec(use_evm=False))
        evm = preprocess_recordings([(series, HydrationLabel.DEHYDRATED, 3)], PipelineSpec())
        std = feature_index(0, 'std')
        assert len(raw.dataset) == len(evm.dataset) == 15
        assert np.all(evm.dataset.features[:, std] > 4 * raw.dataset.features[:, std])

    def test_dataset_rejects_unknown_labels(self):
        with pytest.raises(ShapeMismatch):
            LabeledDataset(np.zeros((2, N_FEATURES)), [0, 5], [1, 1])

    def test_subset_and_subjects(self, blobs):
        one = blobs.for_subject(2)
        assert one.subjects == [2]
        assert one.classes == [0, 1, 2]
        assert len(LabeledDataset.concatenate([one, blobs.for_subject(3)])) == 2 * len(one)

    def test_csv_round_trip_keeps_every_column(self, blobs):
        buffer = io.StringIO()
        write_dataset_csv(buffer, blobs)
        buffer.seek(0)
        again = read_dataset_csv(buffer)
        assert np.allclose(again.features, blobs.features)
        assert np.array_equal(again.labels, blobs.labels)
        assert np.array_equal(again.subject_ids, blobs.subject_ids)


class TestTrainServeGap:
    def test_causal_and_zero_phase_paths_differ(self, make_series):
        t = np.arange(600)
        series = make_series(1.0 + 0.02 * np.sin(2 * np.pi * 0.05 * t))
        gap = train_serve_gap(series, EvmParams(), WindowSpec())
        assert gap.shape == (N_FEATURES,)
        assert np.all(np.isfinite(gap))
        assert gap[feature_index(0, 'mean')] > 0.0
