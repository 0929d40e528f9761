import numpy as np
import pytest

from src.models.spectra import (
    N_CHANNELS,
    AbsorbanceSeries,
    CalibrationProfile,
    ChannelMap,
    HydrationLabel,
    SpectralFrame,
)
from src.services.calibration_service import (
    absorbance_series,
    apply_gains,
    compute_absorbance,
    fit_channel_gains,
    gain_residuals,
    resample_reference,
)
from src.services.synth_service import preset_solution, simulate_solution
from src.utils.errors import DegenerateReference, InvalidFrame, ShapeMismatch, ZeroIntensity


class TestSpectralTypes:
    def test_frame_rejects_negative_intensity(self):
        channels = np.full(N_CHANNELS, 100.0)
        channels[4] = -1.0
        with pytest.raises(InvalidFrame):
            SpectralFrame(timestamp_ms=0, channels=channels)

    def test_frame_rejects_wrong_channel_count(self):
        with pytest.raises(InvalidFrame):
            SpectralFrame(timestamp_ms=0, channels=np.ones(17))

    def test_channel_map_must_span_410_to_940(self):
        wavelengths = np.linspace(400.0, 940.0, N_CHANNELS)
        with pytest.raises(InvalidFrame):
            ChannelMap(wavelengths_nm=wavelengths)

    def test_default_column_names(self):
        names = ChannelMap().column_names
        assert names[0] == 'ch410' and names[-1] == 'ch940' and len(names) == N_CHANNELS

    def test_profile_round_trips_through_dict(self):
        profile = CalibrationProfile(i0=np.arange(1, 19), gains=np.linspace(0.5, 2.0, 18), created_at_ms=42)
        again = CalibrationProfile.from_dict(profile.to_dict())
        assert np.array_equal(again.i0, profile.i0)
        assert np.array_equal(again.gains, profile.gains)
        assert again.created_at_ms == 42

    def test_profile_missing_field_is_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            CalibrationProfile.from_dict({'i0': [1.0] * 18})

    def test_label_thresholds(self):
        assert HydrationLabel.from_dehydration(0.0) == HydrationLabel.FULLY_HYDRATED
        assert HydrationLabel.from_dehydration(0.5) == HydrationLabel.MID_HYDRATED
        assert HydrationLabel.from_dehydration(0.9) == HydrationLabel.DEHYDRATED


class TestAbsorbance:
    def test_tenth_of_source_is_one_absorbance_unit(self):
        i0 = np.linspace(1000.0, 2000.0, N_CHANNELS)
        frame = SpectralFrame(timestamp_ms=5, channels=i0 / 10.0)
        absorbance = compute_absorbance(frame, CalibrationProfile.unit(i0=i0))
        assert np.allclose(absorbance, 1.0, atol=1e-12)

    def test_gains_scale_the_intensity(self):
        gains = np.full(N_CHANNELS, 2.0)
        frame = SpectralFrame(timestamp_ms=0, channels=np.full(N_CHANNELS, 50.0))
        profile = CalibrationProfile(i0=np.full(N_CHANNELS, 100.0), gains=gains)
        assert np.allclose(compute_absorbance(frame, profile), 0.0, atol=1e-12)
        assert np.allclose(apply_gains(frame, profile).channels, 100.0)

    def test_dark_channel_is_rejected(self):
        channels = np.full(N_CHANNELS, 10.0)
        channels[3] = 0.0
        with pytest.raises(ZeroIntensity):
            compute_absorbance(SpectralFrame(timestamp_ms=0, channels=channels), CalibrationProfile.unit())

    def test_series_keeps_timestamps(self):
        frames = [SpectralFrame(timestamp_ms=t, channels=np.full(N_CHANNELS, 0.1)) for t in (0, 1000, 2000)]
        series = absorbance_series(frames, CalibrationProfile.unit())
        assert series.timestamps_ms.tolist() == [0, 1000, 2000]
        assert np.allclose(series.values, 1.0)

    def test_series_needs_frames(self):
        with pytest.raises(ShapeMismatch):
            absorbance_series([], CalibrationProfile.unit())

    def test_series_rejects_dark_frame(self):
        channels = np.full(N_CHANNELS, 0.1)
        channels[0] = 0.0
        frames = [SpectralFrame(timestamp_ms=0, channels=np.full(N_CHANNELS, 0.1)),
                  SpectralFrame(timestamp_ms=1000, channels=channels)]
        with pytest.raises(ZeroIntensity):
            absorbance_series(frames, CalibrationProfile.unit())


class TestGainFitting:
    def test_identical_series_give_unit_gains(self, make_series):
        series = make_series(np.linspace(0.2, 0.8, 10))
        profile = fit_channel_gains(series, series)
        assert np.allclose(profile.gains, 1.0)

    def test_constant_offset_gives_closed_form_gain(self, make_series):
        reference = make_series(np.full(5, 0.4))
        measured = make_series(np.full(5, 0.7))
        profile = fit_channel_gains(measured, reference)
        assert np.allclose(profile.gains, 10.0 ** 0.3)
        residuals = gain_residuals(measured, reference, profile)
        assert np.allclose(residuals['rms'], 0.0, atol=1e-12)

    def test_only_listed_channels_are_fitted(self, make_series):
        reference = make_series(np.full(4, 0.1))
        measured = make_series(np.full(4, 0.6))
        profile = fit_channel_gains(measured, reference, channels=[0, 5])
        assert np.allclose(profile.gains[[0, 5]], 10.0 ** 0.5)
        others = np.delete(profile.gains, [0, 5])
        assert np.allclose(others, 1.0)

    def test_recovers_hidden_sensor_gains(self):
        measurement = simulate_solution(preset_solution(200.0), n_samples=5, seed=4)
        profile = fit_channel_gains(measurement.measured, measurement.reference_series(),
                                    i0=measurement.source_i0)
        assert np.allclose(profile.gains, measurement.expected_gains(), rtol=1e-9)
        corrected = absorbance_series(measurement.frames, profile)
        assert np.allclose(corrected.values, measurement.true_absorbance, atol=1e-9)

    def test_sample_count_mismatch(self, make_series):
        with pytest.raises(ShapeMismatch):
            fit_channel_gains(make_series(np.ones(4)), make_series(np.ones(3)))


class TestReferenceResampling:
    def test_exact_at_channel_wavelengths(self):
        channel_map = ChannelMap()
        wavelengths = np.linspace(400.0, 950.0, 1101)
        absorbance = 0.001 * wavelengths
        resampled = resample_reference(wavelengths, absorbance, channel_map)
        assert np.allclose(resampled, 0.001 * channel_map.wavelengths_nm)

    def test_must_cover_the_channel_range(self):
        with pytest.raises(ShapeMismatch):
            resample_reference([450.0, 900.0], [0.1, 0.2])

    def test_non_finite_reference_is_degenerate(self):
        values = np.full(20, 0.1)
        values[3] = np.nan
        with pytest.raises(DegenerateReference):
            resample_reference(np.linspace(400.0, 950.0, 20), values)

    def test_non_finite_absorbance_series_is_rejected(self):
        values = np.zeros((2, N_CHANNELS))
        values[1, 1] = np.inf
        with pytest.raises(InvalidFrame):
            AbsorbanceSeries(timestamps_ms=[0, 1000], values=values)
