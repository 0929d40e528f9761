"""
Synthetic spectroscopy data: Beer-Lambert solutions and exercising participants
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from src.models.dataset import N_FEATURES, STAT_NAMES, LabeledDataset, PipelineSpec, feature_index
from src.models.spectra import (
    N_CHANNELS,
    AbsorbanceSeries,
    CalibrationProfile,
    ChannelMap,
    HydrationLabel,
    SpectralFrame,
)
from src.models.synthetic import DiversitySpec, ParticipantSpec, SessionSpec, SolutionSpec
from src.services.calibration_service import absorbance_series, resample_reference
from src.services.feature_service import DatasetBuild, preprocess_recordings
from src.utils.errors import InvalidSpec, ShapeMismatch
from src.utils.seeding import derived_rng

logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).resolve().parent.parent / 'presets'


def load_preset(name: str = 'default_cohort') -> Dict[str, Any]:
    path = PRESET_DIR / f'{name}.json'
    if not path.exists():
        raise InvalidSpec(f'Unknown preset {name!r}', details={'available': sorted(p.stem for p in PRESET_DIR.glob('*.json'))})
    with open(path, encoding='utf-8') as handle:
        return json.load(handle)


def preset_solution(concentration_mg: float, preset: Optional[Dict[str, Any]] = None) -> SolutionSpec:
    solution = (preset or load_preset())['solution']
    return SolutionSpec(concentration_mg=concentration_mg,
                        molar_absorptivity_profile=solution['molar_absorptivity_profile'],
                        solvent_baseline=solution['solvent_baseline'])


def _timestamps(n_samples: int, rate_hz: float) -> np.ndarray:
    return np.rint(np.arange(n_samples) * 1000.0 / rate_hz).astype(np.int64)


def _frames(timestamps: np.ndarray, intensities: np.ndarray) -> List[SpectralFrame]:
    return [SpectralFrame(timestamp_ms=int(t), channels=row) for t, row in zip(timestamps, intensities)]


@dataclass
class SolutionMeasurement:
    """An 18-channel measurement of a solution plus its laboratory reference"""
    spec: SolutionSpec
    frames: List[SpectralFrame]
    measured: AbsorbanceSeries
    reference_wavelengths_nm: np.ndarray
    reference_absorbance: np.ndarray
    gain_errors: np.ndarray
    source_i0: np.ndarray

    @property
    def true_absorbance(self) -> np.ndarray:
        return self.spec.absorbance()

    def reference_series(self) -> AbsorbanceSeries:
        """Reference spectrum resampled onto the channels, one row"""
        values = resample_reference(self.reference_wavelengths_nm, self.reference_absorbance,
                                    self.measured.channel_map)
        return AbsorbanceSeries(timestamps_ms=self.measured.timestamps_ms[:1], values=values[None, :],
                                channel_map=self.measured.channel_map)

    def expected_gains(self) -> np.ndarray:
        """Gains that undo the hidden sensor errors"""
        return 1.0 / self.gain_errors


def simulate_solution(spec: SolutionSpec, reference_resolution: int = 256,
                      gain_errors: Optional[Sequence[float]] = None, max_gain_error: float = 3.0,
                      noise_sigma: float = 0.0, n_samples: int = 1, rate_hz: float = 1.0, seed: int = 0,
                      source_i0: Optional[Sequence[float]] = None,
                      channel_map: Optional[ChannelMap] = None) -> SolutionMeasurement:
    """
    Sensor readings of a solution and a zero-error high-resolution reference.

    The reference grid is `reference_resolution` evenly spaced wavelengths
    over 410-940 nm merged with the channel wavelengths, so resampling it onto
    the channels is exact. Hidden gain errors multiply the sensor intensity;
    noise is added in absorbance.
    """
    if reference_resolution < 2 or n_samples < 1:
        raise InvalidSpec('reference_resolution must be >= 2 and n_samples >= 1')
    if noise_sigma < 0 or max_gain_error < 1:
        raise InvalidSpec('noise_sigma must be >= 0 and max_gain_error >= 1')
    channel_map = channel_map or ChannelMap()
    rng = np.random.default_rng(seed)
    source = np.full(N_CHANNELS, 2000.0) if source_i0 is None else np.asarray(source_i0, dtype=np.float64)

    if gain_errors is None:
        span = math.log10(max_gain_error)
        gain_errors = np.power(10.0, rng.uniform(-span, span, N_CHANNELS))
    gain_errors = np.asarray(gain_errors, dtype=np.float64)
    if gain_errors.shape != (N_CHANNELS,) or np.any(gain_errors <= 0):
        raise InvalidSpec('gain_errors needs 18 positive values')

    true_absorbance = spec.absorbance()
    grid = np.union1d(np.linspace(channel_map.wavelengths_nm[0], channel_map.wavelengths_nm[-1],
                                  reference_resolution), channel_map.wavelengths_nm)
    reference = np.interp(grid, channel_map.wavelengths_nm, true_absorbance)

    noise = rng.normal(0.0, noise_sigma, (n_samples, N_CHANNELS)) if noise_sigma > 0 else 0.0
    sensed = true_absorbance - np.log10(gain_errors) + noise
    intensities = source * np.power(10.0, -np.broadcast_to(sensed, (n_samples, N_CHANNELS)))
    frames = _frames(_timestamps(n_samples, rate_hz), intensities)
    measured = absorbance_series(frames, CalibrationProfile.unit(i0=source), channel_map)
    logger.debug(f"Simulated {spec.concentration_mg} mg solution over {n_samples} samples")
    return SolutionMeasurement(spec=spec, frames=frames, measured=measured, reference_wavelengths_nm=grid,
                               reference_absorbance=reference, gain_errors=gain_errors, source_i0=source)


@dataclass
class SimulatedRecording:
    """One contiguous run of a single hydration label"""
    subject_id: int
    segment_index: int
    label: HydrationLabel
    timestamps_ms: np.ndarray
    intensities: np.ndarray
    absorbance: np.ndarray
    dehydration: np.ndarray

    @property
    def start_ms(self) -> int:
        return int(self.timestamps_ms[0])

    @property
    def end_ms(self) -> int:
        return int(self.timestamps_ms[-1])

    @property
    def n_samples(self) -> int:
        return int(self.timestamps_ms.shape[0])

    def frames(self) -> List[SpectralFrame]:
        return _frames(self.timestamps_ms, self.intensities)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'subject_id': self.subject_id,
            'segment': self.segment_index,
            'label': int(self.label),
            'start_ms': self.start_ms,
            'end_ms': self.end_ms,
            'n_samples': self.n_samples,
        }


def dehydration_labels(levels: np.ndarray) -> np.ndarray:
    levels = np.asarray(levels)
    return np.where(levels < 1.0 / 3.0, HydrationLabel.FULLY_HYDRATED,
                    np.where(levels < 2.0 / 3.0, HydrationLabel.MID_HYDRATED, HydrationLabel.DEHYDRATED))


def participant_absorbance(p: ParticipantSpec, s: SessionSpec) -> np.ndarray:
    """Generative absorbance (T x 18) for a participant over a session"""
    t = s.times_s()
    level = s.dehydration(t)
    effective = level * (1.0 + p.modulation_depth * np.sin(2 * np.pi * p.modulation_hz * t + p.modulation_phase))
    respiration = p.respiration_amplitude * np.sin(2 * np.pi * p.respiration_hz * t + p.respiration_phase)
    absorbance = p.baseline_absorbance + effective[:, None] * p.hydration_sensitivity + respiration[:, None]
    if p.noise_sigma > 0:
        rng = np.random.default_rng(p.seed)
        absorbance = absorbance + rng.normal(0.0, p.noise_sigma, absorbance.shape)
    return absorbance


def simulate_participant(p: ParticipantSpec, s: SessionSpec) -> List[SimulatedRecording]:
    """Intensity stream split into labelled recordings at label changes"""
    timestamps = s.timestamps_ms()
    level = s.dehydration(s.times_s())
    absorbance = participant_absorbance(p, s)
    intensities = p.source_i0 * p.skin_attenuation * np.power(10.0, -absorbance)
    labels = dehydration_labels(level)
    bounds = np.concatenate([[0], np.flatnonzero(np.diff(labels)) + 1, [labels.size]])
    recordings = []
    for segment, (start, stop) in enumerate(zip(bounds[:-1], bounds[1:])):
        recordings.append(SimulatedRecording(
            subject_id=p.subject_id,
            segment_index=segment,
            label=HydrationLabel(int(labels[start])),
            timestamps_ms=timestamps[start:stop],
            intensities=intensities[start:stop],
            absorbance=absorbance[start:stop],
            dehydration=level[start:stop],
        ))
    logger.debug(f"Subject {p.subject_id}: {len(recordings)} recordings over {timestamps.size} samples")
    return recordings


def participant_profile(p: ParticipantSpec) -> CalibrationProfile:
    """On-body profile: true source intensity with gains undoing skin attenuation"""
    return CalibrationProfile(i0=p.source_i0, gains=np.full(N_CHANNELS, 1.0 / p.skin_attenuation))


def device_profile(source_i0: Sequence[float]) -> CalibrationProfile:
    """Off-body profile measured against the device source, unit gains"""
    return CalibrationProfile.unit(i0=source_i0)


def draw_participant(diversity: DiversitySpec, subject_id: int, seed: int) -> ParticipantSpec:
    rng = derived_rng(seed, subject_id)
    return ParticipantSpec(
        subject_id=subject_id,
        skin_attenuation=float(rng.uniform(*diversity.skin_attenuation_range)),
        baseline_absorbance=diversity.baseline + rng.uniform(-diversity.baseline_jitter,
                                                             diversity.baseline_jitter, N_CHANNELS),
        hydration_sensitivity=diversity.sensitivity * rng.uniform(*diversity.sensitivity_scale_range),
        noise_sigma=diversity.noise_sigma,
        seed=int(rng.integers(0, 2 ** 63 - 1)),
        source_i0=diversity.source_i0,
        modulation_depth=float(rng.uniform(*diversity.modulation_depth_range)),
        modulation_hz=float(rng.uniform(*diversity.modulation_hz_range)),
        modulation_phase=float(rng.uniform(0.0, 2 * np.pi)),
        respiration_amplitude=float(rng.uniform(*diversity.respiration_amplitude_range)),
        respiration_hz=float(rng.uniform(*diversity.respiration_hz_range)),
        respiration_phase=float(rng.uniform(0.0, 2 * np.pi)),
    )


@dataclass
class Cohort:
    seed: int
    session: SessionSpec
    diversity: DiversitySpec
    participants: List[ParticipantSpec]
    recordings: Dict[int, List[SimulatedRecording]]
    dataset: LabeledDataset = field(default_factory=LabeledDataset.empty)
    skipped: int = 0

    def manifest(self) -> Dict[str, Any]:
        """Ground truth for every subject and segment"""
        return {
            'seed': self.seed,
            'session': self.session.to_dict(),
            'participants': [p.to_dict() for p in self.participants],
            'segments': [rec.to_dict() for sid in sorted(self.recordings) for rec in self.recordings[sid]],
        }


def build_cohort_dataset(cohort: Cohort, pipeline: Optional[PipelineSpec] = None) -> DatasetBuild:
    """Off-body calibration, optional magnification per recording, then windowing"""
    pipeline = pipeline or PipelineSpec()
    profile = device_profile(cohort.diversity.source_i0)
    records = [(absorbance_series(recording.frames(), profile), recording.label, subject_id)
               for subject_id in sorted(cohort.recordings) for recording in cohort.recordings[subject_id]]
    return preprocess_recordings(records, pipeline)


def generate_cohort(n_subjects: int = 6, diversity: Optional[DiversitySpec] = None,
                    session: Optional[SessionSpec] = None, seed: int = 7,
                    pipeline: Optional[PipelineSpec] = None) -> Cohort:
    """Randomised participants, their recordings and the windowed dataset"""
    if n_subjects < 1:
        raise InvalidSpec('n_subjects must be at least 1')
    diversity = diversity or DiversitySpec()
    session = session or SessionSpec()
    participants = [draw_participant(diversity, subject_id, seed) for subject_id in range(1, n_subjects + 1)]
    cohort = Cohort(
        seed=seed,
        session=session,
        diversity=diversity,
        participants=participants,
        recordings={p.subject_id: simulate_participant(p, session) for p in participants},
    )
    build = build_cohort_dataset(cohort, pipeline)
    cohort.dataset, cohort.skipped = build.dataset, build.skipped
    logger.info(f"✅ Generated cohort of {n_subjects} subjects: {len(cohort.dataset)} windows, seed {seed}")
    return cohort


def nearest_centroid_accuracy(dataset: LabeledDataset, stats: Sequence[str] = ('std',)) -> float:
    """
    Leave-one-subject-out nearest-centroid accuracy on z-scored columns of the
    given statistics; a model-free check that the classes are separable.
    """
    if dataset.n_features != N_FEATURES:
        raise ShapeMismatch(f'Expected {N_FEATURES} feature columns, got {dataset.n_features}')
    unknown = [s for s in stats if s not in STAT_NAMES]
    if unknown:
        raise InvalidSpec(f'Unknown statistics {unknown}')
    columns = [feature_index(channel, stat) for channel in range(N_CHANNELS) for stat in stats]
    X, y, groups = dataset.features[:, columns], dataset.labels, dataset.subject_ids
    correct = 0
    subjects = dataset.subjects
    for subject in subjects:
        test = groups == subject
        train = ~test if len(subjects) > 1 else test
        mean, std = X[train].mean(axis=0), X[train].std(axis=0)
        std[std == 0] = 1.0
        Z = (X - mean) / std
        classes = np.unique(y[train])
        centroids = np.vstack([Z[train & (y == c)].mean(axis=0) for c in classes])
        distances = np.linalg.norm(Z[test][:, None, :] - centroids[None, :, :], axis=2)
        correct += int(np.sum(classes[np.argmin(distances, axis=1)] == y[test]))
    return correct / len(dataset) if len(dataset) else 0.0
