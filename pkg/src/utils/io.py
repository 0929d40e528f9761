"""
File formats: frame / absorbance / dataset / prediction CSVs and JSON documents
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, TextIO, Tuple, Union

import numpy as np
import pandas as pd

from src.models.dataset import LabeledDataset, feature_names
from src.models.spectra import AbsorbanceSeries, CalibrationProfile, ChannelMap, SpectralFrame
from src.utils.errors import InvalidFrame, ShapeMismatch, TooShort
from src.utils.validation import validate_columns

logger = logging.getLogger(__name__)

PathOrBuffer = Union[str, Path, TextIO]
TIMESTAMP = 'timestamp_ms'


def frame_columns(channel_map: Optional[ChannelMap] = None) -> List[str]:
    return [TIMESTAMP] + (channel_map or ChannelMap()).column_names


def _read_csv(source: PathOrBuffer) -> pd.DataFrame:
    try:
        return pd.read_csv(source)
    except pd.errors.EmptyDataError:
        raise TooShort(f'{source} is empty')
    except pd.errors.ParserError as e:
        raise ShapeMismatch(f'{source} is not a well-formed CSV table',
                            details={'source': str(source), 'reason': str(e)})


def _numeric(table: pd.DataFrame, source: Any, dtype=np.float64) -> np.ndarray:
    """Table as a 2-D array; a cell that does not convert raises ShapeMismatch naming its column"""
    columns = []
    for column in table.columns:
        try:
            values = pd.to_numeric(table[column], errors='raise')
            missing = np.flatnonzero(values.isna().to_numpy())
            if missing.size and np.issubdtype(dtype, np.integer):
                raise ValueError(f'missing value in data row {int(missing[0]) + 1}')
            columns.append(values.to_numpy(dtype=dtype))
        except (ValueError, TypeError) as e:
            raise ShapeMismatch(f'{source} column {column} is not numeric',
                                details={'source': str(source), 'column': str(column), 'reason': str(e)})
    if not columns:
        return np.empty((len(table), 0), dtype=dtype)
    return np.column_stack(columns)


def _check_columns(frame: pd.DataFrame, expected: List[str], source: Any) -> None:
    result = validate_columns(frame.columns, expected)
    if not result['valid']:
        raise ShapeMismatch(f'{source} does not have the expected columns', details=result['errors'])


def _timeseries_table(source: PathOrBuffer, channel_map: Optional[ChannelMap]) -> Tuple[np.ndarray, np.ndarray]:
    table = _read_csv(source)
    _check_columns(table, frame_columns(channel_map), source)
    if table.empty:
        raise TooShort(f'{source} has a header but no rows')
    return _numeric(table[[TIMESTAMP]], source, np.int64)[:, 0], _numeric(table.iloc[:, 1:], source)


def read_frames_csv(source: PathOrBuffer, channel_map: Optional[ChannelMap] = None) -> List[SpectralFrame]:
    """timestamp_ms,ch410,...,ch940 with a header row"""
    timestamps, values = _timeseries_table(source, channel_map)
    return [SpectralFrame(timestamp_ms=int(t), channels=row) for t, row in zip(timestamps, values)]


def iter_frames_csv(source: PathOrBuffer, channel_map: Optional[ChannelMap] = None,
                    chunksize: int = 256, skip_invalid: bool = False) -> Iterator[SpectralFrame]:
    """Frames one at a time without loading the whole file"""
    expected = frame_columns(channel_map)
    try:
        reader = pd.read_csv(source, chunksize=chunksize)
        for chunk in reader:
            _check_columns(chunk, expected, 'frame stream')
            if skip_invalid:
                chunk = _drop_unparseable(chunk)
            timestamps = _numeric(chunk[[TIMESTAMP]], 'frame stream', np.int64)[:, 0]
            values = _numeric(chunk.iloc[:, 1:], 'frame stream')
            for t, row in zip(timestamps, values):
                try:
                    frame = SpectralFrame(timestamp_ms=int(t), channels=row)
                except InvalidFrame as e:
                    if not skip_invalid:
                        raise
                    logger.warning(f"⚠️ Rejected frame: {e.message}")
                    continue
                yield frame
    except pd.errors.EmptyDataError:
        raise TooShort('Frame stream is empty')
    except pd.errors.ParserError as e:
        raise ShapeMismatch('Frame stream is not a well-formed CSV table', details={'reason': str(e)})


def _drop_unparseable(chunk: pd.DataFrame) -> pd.DataFrame:
    """Rows with a non-numeric or missing cell are logged and dropped"""
    parsed = chunk.apply(pd.to_numeric, errors='coerce')
    bad = parsed.isna().any(axis=1)
    for position in np.flatnonzero(bad.to_numpy()):
        logger.warning(f"⚠️ Rejected frame: row {chunk.index[position] + 1} has a non-numeric or missing cell")
    return parsed[~bad]


def write_frames_csv(path: PathOrBuffer, timestamps: np.ndarray, intensities: np.ndarray,
                     channel_map: Optional[ChannelMap] = None) -> None:
    table = pd.DataFrame(np.asarray(intensities), columns=frame_columns(channel_map)[1:])
    table.insert(0, TIMESTAMP, np.asarray(timestamps, dtype=np.int64))
    table.to_csv(path, index=False, lineterminator='\n')


def read_absorbance_csv(source: PathOrBuffer, channel_map: Optional[ChannelMap] = None) -> AbsorbanceSeries:
    timestamps, values = _timeseries_table(source, channel_map)
    return AbsorbanceSeries(timestamps_ms=timestamps, values=values, channel_map=channel_map or ChannelMap())


def write_absorbance_csv(path: PathOrBuffer, series: AbsorbanceSeries) -> None:
    write_frames_csv(path, series.timestamps_ms, series.values, series.channel_map)


def read_reference_spectrum(source: PathOrBuffer) -> Tuple[np.ndarray, np.ndarray]:
    """wavelength_nm,absorbance high-resolution laboratory spectrum"""
    table = _read_csv(source)
    _check_columns(table, ['wavelength_nm', 'absorbance'], source)
    values = _numeric(table, source)
    return values[:, 0], values[:, 1]


def write_reference_spectrum(path: PathOrBuffer, wavelengths_nm: np.ndarray, absorbance: np.ndarray) -> None:
    pd.DataFrame({'wavelength_nm': wavelengths_nm, 'absorbance': absorbance}).to_csv(
        path, index=False, lineterminator='\n')


def is_reference_spectrum(source: Union[str, Path]) -> bool:
    try:
        header = pd.read_csv(source, nrows=0).columns.tolist()
    except pd.errors.EmptyDataError:
        raise TooShort(f'{source} is empty')
    return header == ['wavelength_nm', 'absorbance']


def dataset_columns(channel_map: Optional[ChannelMap] = None) -> List[str]:
    return ['subject', 'label'] + feature_names(channel_map)


def write_dataset_csv(path: PathOrBuffer, dataset: LabeledDataset, channel_map: Optional[ChannelMap] = None) -> None:
    table = pd.DataFrame(dataset.features, columns=feature_names(channel_map))
    table.insert(0, 'label', dataset.labels)
    table.insert(0, 'subject', dataset.subject_ids)
    table.to_csv(path, index=False, lineterminator='\n')


def read_dataset_csv(source: PathOrBuffer, channel_map: Optional[ChannelMap] = None) -> LabeledDataset:
    table = _read_csv(source)
    _check_columns(table, dataset_columns(channel_map), source)
    ids = _numeric(table[['subject', 'label']], source, np.int64)
    labels = ids[:, 1]
    if np.any((labels < 0) | (labels > 2)):
        raise ShapeMismatch(f'{source} contains invalid label codes')
    return LabeledDataset(
        features=_numeric(table.iloc[:, 2:], source),
        labels=labels,
        subject_ids=ids[:, 0],
    )


def read_predictions_csv(source: PathOrBuffer, n_rows: int) -> np.ndarray:
    """row_index,predicted_label -> labels aligned to dataset rows"""
    table = _read_csv(source)
    _check_columns(table, ['row_index', 'predicted_label'], source)
    parsed = _numeric(table, source, np.int64)
    rows = parsed[:, 0]
    if rows.size != n_rows or not np.array_equal(np.sort(rows), np.arange(n_rows)):
        raise ShapeMismatch(f'{source} must list every row index 0..{n_rows - 1} exactly once')
    predicted = np.empty(n_rows, dtype=np.int64)
    predicted[rows] = parsed[:, 1]
    return predicted


def write_predictions_csv(path: PathOrBuffer, predicted: np.ndarray) -> None:
    pd.DataFrame({'row_index': np.arange(len(predicted)), 'predicted_label': predicted}).to_csv(
        path, index=False, lineterminator='\n')


def write_json(path: Union[str, Path], data: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(data, handle, indent=2, sort_keys=True)
        handle.write('\n')
    return path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    with open(path, encoding='utf-8') as handle:
        try:
            return json.load(handle)
        except json.JSONDecodeError as e:
            raise ShapeMismatch(f'{path} is not valid JSON: {e}')


def read_profile(path: Union[str, Path]) -> CalibrationProfile:
    return CalibrationProfile.from_dict(read_json(path))
