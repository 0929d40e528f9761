"""
Shared state handed to every subcommand handler
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, TextIO, Tuple

from src.models.dataset import LabeledDataset
from src.models.spectra import AbsorbanceSeries, CalibrationProfile, HydrationLabel
from src.services.calibration_service import absorbance_series
from src.services.feature_service import DatasetBuild, preprocess_recordings
from src.utils.config import RunConfig
from src.utils.errors import ConfigError, ShapeMismatch
from src.utils.io import read_dataset_csv, read_frames_csv, read_json, read_profile, write_json
from src.utils.monitoring import RunTracker

logger = logging.getLogger(__name__)

MANIFEST = 'manifest.json'
DEVICE_PROFILE = 'device_profile.json'


@dataclass
class CommandContext:
    config: RunConfig
    out: Path
    stdin: TextIO
    stdout: TextIO
    tracker: RunTracker = field(default_factory=RunTracker)

    def emit(self, text: str) -> None:
        """Human-readable output; machine output goes to files under out/"""
        self.stdout.write(text.rstrip('\n') + '\n')

    def write_report(self, name: str, data: Dict[str, Any]) -> Path:
        path = write_json(self.out / name, data)
        logger.info(f"✅ Wrote {path}")
        return path


def subject_file(subject_id: int) -> str:
    return f'subject_{subject_id}.csv'


def load_recordings(data_dir: Path, profile: CalibrationProfile) -> Tuple[Tuple[AbsorbanceSeries, HydrationLabel, int], ...]:
    """Split each subject stream into the labelled segments listed in the manifest"""
    manifest = read_json(data_dir / MANIFEST)
    if 'segments' not in manifest:
        raise ShapeMismatch(f'{data_dir / MANIFEST} has no segments')
    frames_by_subject: Dict[int, list] = {}
    records = []
    for segment in manifest['segments']:
        subject_id = int(segment['subject_id'])
        if subject_id not in frames_by_subject:
            frames_by_subject[subject_id] = read_frames_csv(data_dir / subject_file(subject_id))
        frames = [frame for frame in frames_by_subject[subject_id]
                  if segment['start_ms'] <= frame.timestamp_ms <= segment['end_ms']]
        if not frames:
            logger.warning(f"⚠️ Segment {segment['segment']} of subject {subject_id} has no frames")
            continue
        records.append((absorbance_series(frames, profile), HydrationLabel(int(segment['label'])), subject_id))
    return tuple(records)


def build_from_streams(data_dir: Path, config: RunConfig, profile_path: Optional[str] = None) -> DatasetBuild:
    profile = read_profile(profile_path or data_dir / DEVICE_PROFILE)
    return preprocess_recordings(load_recordings(data_dir, profile), config.pipeline())


def load_dataset(args, ctx: CommandContext) -> LabeledDataset:
    """Dataset from --dataset CSV, or rebuilt from --data raw streams with the configured pipeline"""
    if getattr(args, 'dataset', None):
        if getattr(args, 'data', None):
            raise ConfigError('Give either --dataset or --data, not both')
        return read_dataset_csv(args.dataset)
    if getattr(args, 'data', None):
        build = build_from_streams(Path(args.data), ctx.config, getattr(args, 'profile', None))
        return build.dataset
    raise ConfigError('A dataset is required: pass --dataset FILE or --data DIR')
