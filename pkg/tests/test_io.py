import io

import numpy as np
import pandas as pd
import pytest

from conftest import blob_dataset
from src.models.spectra import N_CHANNELS
from src.utils.errors import ShapeMismatch
from src.utils.io import (
    TIMESTAMP,
    frame_columns,
    iter_frames_csv,
    read_absorbance_csv,
    read_dataset_csv,
    read_frames_csv,
    read_predictions_csv,
    read_reference_spectrum,
    write_dataset_csv,
)


def frame_table(n_rows=4):
    table = pd.DataFrame(np.full((n_rows, N_CHANNELS), 100.0), columns=frame_columns()[1:])
    table.insert(0, TIMESTAMP, np.arange(n_rows) * 1000)
    return table.astype(object)


def as_csv(table):
    return io.StringIO(table.to_csv(index=False))


def dataset_table():
    buffer = io.StringIO()
    write_dataset_csv(buffer, blob_dataset(n_subjects=1, rows_per_class=2))
    buffer.seek(0)
    return pd.read_csv(buffer).astype(object)


class TestFrameReaders:
    def test_non_numeric_channel(self):
        table = frame_table()
        table.loc[1, 'ch645'] = 'abc'
        with pytest.raises(ShapeMismatch) as error:
            read_frames_csv(as_csv(table))
        assert error.value.details['column'] == 'ch645'

    def test_missing_timestamp(self):
        table = frame_table()
        table.loc[2, TIMESTAMP] = None
        with pytest.raises(ShapeMismatch) as error:
            read_frames_csv(as_csv(table))
        assert error.value.details['column'] == TIMESTAMP

    def test_absorbance_with_text_cell(self):
        table = frame_table()
        table.loc[0, 'ch410'] = 'n/a'
        with pytest.raises(ShapeMismatch):
            read_absorbance_csv(as_csv(table))

    def test_ragged_row(self):
        text = frame_table().to_csv(index=False) + ','.join(['5000'] + ['1.0'] * (N_CHANNELS + 2)) + '\n'
        with pytest.raises(ShapeMismatch):
            read_frames_csv(io.StringIO(text))

    def test_stream_reader_raises_by_default(self):
        table = frame_table()
        table.loc[1, 'ch645'] = 'abc'
        with pytest.raises(ShapeMismatch):
            list(iter_frames_csv(as_csv(table)))

    def test_stream_reader_skips_unparseable_rows(self):
        table = frame_table(6)
        table.loc[2, 'ch645'] = 'abc'
        table.loc[4, TIMESTAMP] = 'later'
        frames = list(iter_frames_csv(as_csv(table), chunksize=4, skip_invalid=True))
        assert [f.timestamp_ms for f in frames] == [0, 1000, 3000, 5000]


class TestTableReaders:
    def test_dataset_feature_cell(self):
        table = dataset_table()
        table.iloc[3, 7] = 'abc'
        with pytest.raises(ShapeMismatch) as error:
            read_dataset_csv(as_csv(table))
        assert error.value.details['column'] == table.columns[7]

    def test_dataset_label_cell(self):
        table = dataset_table()
        table.loc[0, 'label'] = 'thirsty'
        with pytest.raises(ShapeMismatch) as error:
            read_dataset_csv(as_csv(table))
        assert error.value.details['column'] == 'label'

    def test_clean_dataset_still_reads(self):
        dataset = read_dataset_csv(as_csv(dataset_table()))
        assert dataset.features.shape == (6, 108)
        assert dataset.labels.tolist() == [0, 0, 1, 1, 2, 2]

    def test_predictions_cell(self):
        table = pd.DataFrame({'row_index': [0, 1, 2], 'predicted_label': ['0', 'two', '1']})
        with pytest.raises(ShapeMismatch) as error:
            read_predictions_csv(as_csv(table), 3)
        assert error.value.details['column'] == 'predicted_label'

    def test_reference_spectrum_cell(self):
        table = pd.DataFrame({'wavelength_nm': [400.0, 'x', 420.0], 'absorbance': [0.1, 0.2, 0.3]})
        with pytest.raises(ShapeMismatch) as error:
            read_reference_spectrum(as_csv(table))
        assert error.value.details['column'] == 'wavelength_nm'
