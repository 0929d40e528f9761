import io
import json
import logging

import numpy as np
import pandas as pd
import pytest

from conftest import series_from
from src.main import main
from src.models.dataset import N_FEATURES, LabeledDataset
from src.utils.io import read_dataset_csv, write_absorbance_csv, write_dataset_csv, write_predictions_csv

SMALL_COHORT = ['--n-subjects', '3', '--duration-s', '600', '--seed', '3']
SMALL_FOREST = ['--n-estimators', '10', '--max-depth', '4']


def run(argv, stdin_text=''):
    stdout = io.StringIO()
    code = main(argv, stdin=io.StringIO(stdin_text), stdout=stdout)
    return code, stdout.getvalue()


def load(path):
    with open(path, encoding='utf-8') as handle:
        return json.load(handle)


@pytest.fixture(scope='module')
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp('cli')
    data = root / 'data'
    code, _ = run(['gen-data', *SMALL_COHORT, '--out', str(data)])
    assert code == 0
    model_dir = root / 'model'
    code, _ = run(['train', '--dataset', str(data / 'dataset.csv'), *SMALL_FOREST, '--out', str(model_dir)])
    assert code == 0
    return {'root': root, 'data': data, 'model': model_dir}


class TestGenData:
    def test_writes_streams_solutions_and_manifest(self, workspace):
        data = workspace['data']
        for name in ('subject_1.csv', 'subject_2.csv', 'subject_3.csv', 'manifest.json', 'device_profile.json',
                     'dataset.csv', 'resolved_config.json', 'solution_200mg_measured.csv',
                     'solution_200mg_reference.csv', 'solution_400mg_measured.csv'):
            assert (data / name).exists(), name
        manifest = load(data / 'manifest.json')
        assert {s['subject_id'] for s in manifest['segments']} == {1, 2, 3}
        assert len(manifest['solutions']) == 2
        assert read_dataset_csv(data / 'dataset.csv').subjects == [1, 2, 3]

    def test_prints_a_summary(self, tmp_path):
        code, output = run(['gen-data', '--n-subjects', '1', '--duration-s', '300', '--out', str(tmp_path)])
        assert code == 0
        assert 'subjects: 1' in output and 'windows:' in output

    def test_same_seed_same_files(self, tmp_path):
        first, second = tmp_path / 'a', tmp_path / 'b'
        assert run(['gen-data', *SMALL_COHORT, '--out', str(first)])[0] == 0
        assert run(['gen-data', *SMALL_COHORT, '--out', str(second)])[0] == 0
        names = sorted(p.name for p in first.iterdir() if p.name != 'resolved_config.json')
        assert names == sorted(p.name for p in second.iterdir() if p.name != 'resolved_config.json')
        for name in names:
            assert (first / name).read_bytes() == (second / name).read_bytes(), name
        first_config, second_config = load(first / 'resolved_config.json'), load(second / 'resolved_config.json')
        first_config.pop('out'), second_config.pop('out')
        assert first_config == second_config

    def test_zero_subjects_is_a_validation_error(self, tmp_path):
        assert run(['gen-data', '--n-subjects', '0', '--out', str(tmp_path)])[0] == 1

    def test_unknown_preset(self, tmp_path):
        assert run(['gen-data', '--preset', 'nope', '--out', str(tmp_path)])[0] == 1


class TestCalibrate:
    def test_recovers_the_hidden_device_gains(self, workspace, tmp_path):
        data = workspace['data']
        code, output = run(['calibrate', str(data / 'solution_200mg_measured.csv'),
                            str(data / 'solution_200mg_reference.csv'),
                            '--i0', str(data / 'device_profile.json'), '--out', str(tmp_path)])
        assert code == 0
        assert 'Channel' in output and 'ResRMS' in output
        expected = load(data / 'manifest.json')['solutions'][0]['expected_gains']
        profile = load(tmp_path / 'profile.json')
        assert np.allclose(profile['gains'], expected, rtol=1e-6)
        assert np.allclose(load(tmp_path / 'calibration_report.json')['residuals']['rms'], 0.0, atol=1e-9)

    def test_identical_inputs_give_unit_gains(self, tmp_path):
        path = tmp_path / 'absorbance.csv'
        write_absorbance_csv(path, series_from(np.linspace(0.2, 0.8, 5)))
        code, _ = run(['calibrate', str(path), str(path), '--out', str(tmp_path / 'out')])
        assert code == 0
        assert np.allclose(load(tmp_path / 'out' / 'profile.json')['gains'], 1.0)

    def test_missing_channel_column_is_a_data_error(self, tmp_path):
        path = tmp_path / 'broken.csv'
        write_absorbance_csv(path, series_from(np.ones(3)))
        table = pd.read_csv(path).drop(columns=['ch645'])
        table.to_csv(path, index=False)
        assert run(['calibrate', str(path), str(path), '--out', str(tmp_path / 'out')])[0] == 2

    def test_non_numeric_cell_is_a_data_error(self, tmp_path):
        path = tmp_path / 'broken.csv'
        write_absorbance_csv(path, series_from(np.ones(3)))
        table = pd.read_csv(path).astype(object)
        table.loc[1, 'ch645'] = 'abc'
        table.to_csv(path, index=False)
        assert run(['calibrate', str(path), str(path), '--out', str(tmp_path / 'out')])[0] == 2
        assert not (tmp_path / 'out' / 'profile.json').exists()

    def test_channel_index_out_of_range(self, tmp_path):
        path = tmp_path / 'absorbance.csv'
        write_absorbance_csv(path, series_from(np.ones(3)))
        assert run(['calibrate', str(path), str(path), '--channels', '0,18', '--out', str(tmp_path)])[0] == 1

    def test_missing_file(self, tmp_path):
        missing = str(tmp_path / 'missing.csv')
        assert run(['calibrate', missing, missing, '--out', str(tmp_path)])[0] == 2


class TestPreprocess:
    def test_rebuilds_the_generated_dataset(self, workspace, tmp_path):
        code, output = run(['preprocess', '--data', str(workspace['data']), '--out', str(tmp_path)])
        assert code == 0
        assert 'subjects: 1,2,3' in output
        rebuilt = read_dataset_csv(tmp_path / 'dataset.csv')
        generated = read_dataset_csv(workspace['data'] / 'dataset.csv')
        assert np.allclose(rebuilt.features, generated.features)
        assert np.array_equal(rebuilt.labels, generated.labels)

    def test_without_magnification(self, workspace, tmp_path):
        code, _ = run(['preprocess', '--data', str(workspace['data']), '--no-evm', '--out', str(tmp_path)])
        assert code == 0
        assert not load(tmp_path / 'resolved_config.json')['evm']['use_evm']


class TestModelCommands:
    def test_train_writes_model_and_report(self, workspace):
        model_dir = workspace['model']
        assert (model_dir / 'model.json').exists() and (model_dir / 'model.bin').exists()
        report = load(model_dir / 'train_report.json')
        assert report['params']['n_estimators'] == 10
        assert report['evaluated_on'] == 'train'
        assert report['compact']['size_bytes'] == (model_dir / 'model.bin').stat().st_size
        assert report['compact']['audit']['agreement_rate'] >= 0.99

    def test_evaluate_compact_model(self, workspace, tmp_path):
        code, output = run(['evaluate', '--dataset', str(workspace['data'] / 'dataset.csv'),
                            '--model', str(workspace['model'] / 'model.bin'), '--out', str(tmp_path)])
        assert code == 0
        assert 'Accuracy' in output
        assert load(tmp_path / 'eval_report.json')['report']['accuracy'] > 0.5

    def test_evaluate_external_predictions(self, workspace, tmp_path):
        dataset = read_dataset_csv(workspace['data'] / 'dataset.csv')
        predictions = tmp_path / 'predictions.csv'
        write_predictions_csv(predictions, dataset.labels)
        code, _ = run(['evaluate', '--dataset', str(workspace['data'] / 'dataset.csv'),
                       '--predictions', str(predictions), '--out', str(tmp_path)])
        assert code == 0
        assert load(tmp_path / 'eval_report.json')['report']['accuracy'] == 1.0

    def test_evaluate_needs_a_source(self, workspace, tmp_path):
        assert run(['evaluate', '--dataset', str(workspace['data'] / 'dataset.csv'),
                    '--out', str(tmp_path)])[0] == 1

    def test_dataset_and_data_are_exclusive(self, workspace, tmp_path):
        assert run(['train', '--dataset', str(workspace['data'] / 'dataset.csv'),
                    '--data', str(workspace['data']), '--out', str(tmp_path)])[0] == 1

    def test_grouped_cross_validation(self, workspace, tmp_path):
        code, output = run(['cv', '--dataset', str(workspace['data'] / 'dataset.csv'), '--k', '3',
                            *SMALL_FOREST, '--out', str(tmp_path)])
        assert code == 0
        assert 'Generalization gap' in output
        report = load(tmp_path / 'cv_report.json')
        assert report['k'] == 3 and report['grouped_by_subject'] is True

    def test_too_many_folds_for_the_subjects(self, workspace, tmp_path):
        assert run(['cv', '--dataset', str(workspace['data'] / 'dataset.csv'), '--k', '5',
                    '--out', str(tmp_path)])[0] == 2

    def test_stratified_cross_validation(self, workspace, tmp_path):
        code, _ = run(['cv', '--dataset', str(workspace['data'] / 'dataset.csv'), '--k', '3', '--stratified',
                       *SMALL_FOREST, '--out', str(tmp_path)])
        assert code == 0
        assert load(tmp_path / 'cv_report.json')['grouped_by_subject'] is False

    def test_per_subject(self, workspace, tmp_path):
        code, output = run(['per-subject', '--dataset', str(workspace['data'] / 'dataset.csv'),
                            *SMALL_FOREST, '--out', str(tmp_path)])
        assert code == 0
        assert 'P1' in output
        assert (tmp_path / 'per_subject.json').exists()

    def test_compile_with_audit(self, workspace, tmp_path):
        code, output = run(['compile', '--model', str(workspace['model'] / 'model.json'),
                            '--dataset', str(workspace['data'] / 'dataset.csv'), '--out', str(tmp_path)])
        assert code == 0
        assert (tmp_path / 'model.bin').read_bytes() == (workspace['model'] / 'model.bin').read_bytes()
        assert 'argmax agreement' in output

    def test_same_seed_same_model_bytes(self, workspace, tmp_path):
        code, _ = run(['train', '--dataset', str(workspace['data'] / 'dataset.csv'), *SMALL_FOREST,
                       '--out', str(tmp_path)])
        assert code == 0
        for name in ('model.bin', 'model.json', 'train_report.json'):
            assert (tmp_path / name).read_bytes() == (workspace['model'] / name).read_bytes(), name

    def test_oversized_forest_fails_training(self, tmp_path):
        rng = np.random.default_rng(0)
        noise = LabeledDataset(rng.normal(size=(1500, N_FEATURES)), rng.integers(0, 3, 1500),
                               np.repeat(np.arange(1, 4), 500))
        path = tmp_path / 'noise.csv'
        write_dataset_csv(path, noise)
        out = tmp_path / 'model'
        code, output = run(['train', '--dataset', str(path), '--n-estimators', '12', '--max-depth', '14',
                            '--out', str(out)])
        assert code == 2
        assert not (out / 'model.bin').exists()
        assert (out / 'model.json').exists()
        error = load(out / 'train_report.json')['compact']['error']
        assert error['error'] == 'ModelTooLarge'
        assert error['details']['size'] > error['details']['limit']
        assert output == ''

    def test_compile_rejects_other_model_files(self, workspace, tmp_path):
        dataset = str(workspace['data'] / 'dataset.csv')
        assert run(['compile', '--model', dataset, '--dataset', dataset, '--out', str(tmp_path)])[0] == 1

    def test_compile_needs_the_training_features(self, workspace, tmp_path):
        assert run(['compile', '--model', str(workspace['model'] / 'model.json'), '--out', str(tmp_path)])[0] == 1
        assert not (tmp_path / 'model.bin').exists()


def outputs_of(tmp_path, name, argv, stdin_text=''):
    out = tmp_path / name
    code, output = run([*argv, '--out', str(out)], stdin_text)
    assert code == 0
    files = {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != 'resolved_config.json'}
    return output, files


class TestDeterminism:
    def assert_repeatable(self, tmp_path, argv, stdin_text=''):
        first = outputs_of(tmp_path, 'first', argv, stdin_text)
        second = outputs_of(tmp_path, 'second', argv, stdin_text)
        assert first == second

    def test_cv(self, workspace, tmp_path):
        self.assert_repeatable(tmp_path, ['cv', '--dataset', str(workspace['data'] / 'dataset.csv'), '--k', '3',
                                          *SMALL_FOREST])

    def test_stratified_cv(self, workspace, tmp_path):
        self.assert_repeatable(tmp_path, ['cv', '--dataset', str(workspace['data'] / 'dataset.csv'), '--k', '3',
                                          '--stratified', *SMALL_FOREST])

    def test_per_subject(self, workspace, tmp_path):
        self.assert_repeatable(tmp_path, ['per-subject', '--dataset', str(workspace['data'] / 'dataset.csv'),
                                          *SMALL_FOREST])

    def test_compile(self, workspace, tmp_path):
        self.assert_repeatable(tmp_path, ['compile', '--model', str(workspace['model'] / 'model.json'),
                                          '--dataset', str(workspace['data'] / 'dataset.csv')])

    def test_stream(self, workspace, tmp_path):
        lines = (workspace['data'] / 'subject_2.csv').read_text().splitlines()
        self.assert_repeatable(tmp_path, ['stream', '--model', str(workspace['model'] / 'model.bin'),
                                          '--profile', str(workspace['data'] / 'device_profile.json')],
                               stdin_text='\n'.join(lines[:121]) + '\n')

    def test_calibrate(self, workspace, tmp_path):
        data = workspace['data']
        self.assert_repeatable(tmp_path, ['calibrate', str(data / 'solution_400mg_measured.csv'),
                                          str(data / 'solution_400mg_reference.csv'),
                                          '--i0', str(data / 'device_profile.json')])


class TestRunSummary:
    def test_stage_stats_are_logged(self, workspace, tmp_path, caplog):
        with caplog.at_level(logging.INFO):
            code, _ = run(['compile', '--model', str(workspace['model'] / 'model.json'),
                           '--dataset', str(workspace['data'] / 'dataset.csv'), '--out', str(tmp_path)])
        assert code == 0
        summaries = [r.getMessage() for r in caplog.records if 'Run summary' in r.getMessage()]
        assert summaries and "'success_count': 1" in summaries[-1]

    def test_failed_stage_is_counted(self, workspace, tmp_path, caplog):
        with caplog.at_level(logging.INFO):
            code, _ = run(['cv', '--dataset', str(workspace['data'] / 'dataset.csv'), '--k', '5',
                           '--out', str(tmp_path)])
        assert code == 2
        summaries = [r.getMessage() for r in caplog.records if 'Run summary' in r.getMessage()]
        assert summaries and "'error_count': 1" in summaries[-1]

    def test_resolved_config_is_logged_at_info(self, tmp_path, caplog):
        with caplog.at_level(logging.INFO):
            code, _ = run(['gen-data', '--n-subjects', '1', '--duration-s', '300', '--out', str(tmp_path)])
        assert code == 0
        resolved = [r for r in caplog.records if 'Resolved config' in r.getMessage()]
        assert resolved and resolved[0].levelno == logging.INFO
        assert '"seed": ' in resolved[0].getMessage()


class TestStream:
    def frames_text(self, workspace, n_frames):
        lines = (workspace['data'] / 'subject_1.csv').read_text().splitlines()
        return '\n'.join(lines[:n_frames + 1]) + '\n'

    def test_sixty_frames_give_one_prediction(self, workspace, tmp_path):
        code, output = run(['stream', '--model', str(workspace['model'] / 'model.bin'),
                            '--profile', str(workspace['data'] / 'device_profile.json'), '--out', str(tmp_path)],
                           stdin_text=self.frames_text(workspace, 60))
        assert code == 0
        lines = output.strip().splitlines()
        assert len(lines) == 1
        fields = lines[0].split(',')
        assert fields[0] == '59000'
        assert sum(float(p) for p in fields[2:]) == pytest.approx(1.0, abs=1e-5)

    def test_seventy_frames_give_two(self, workspace, tmp_path):
        code, output = run(['stream', '--model', str(workspace['model'] / 'model.bin'),
                            '--profile', str(workspace['data'] / 'device_profile.json'), '--out', str(tmp_path)],
                           stdin_text=self.frames_text(workspace, 70))
        assert code == 0
        assert len(output.strip().splitlines()) == 2

    def test_unparseable_row_is_skipped(self, workspace, tmp_path):
        lines = self.frames_text(workspace, 61).splitlines()
        fields = lines[30].split(',')
        fields[3] = 'abc'
        lines[30] = ','.join(fields)
        code, output = run(['stream', '--model', str(workspace['model'] / 'model.bin'),
                            '--profile', str(workspace['data'] / 'device_profile.json'), '--out', str(tmp_path)],
                           stdin_text='\n'.join(lines) + '\n')
        assert code == 0
        rows = output.strip().splitlines()
        assert len(rows) == 1
        assert rows[0].split(',')[0] == '60000'

    def test_truncated_model_is_a_data_error(self, workspace, tmp_path):
        broken = tmp_path / 'model.bin'
        broken.write_bytes((workspace['model'] / 'model.bin').read_bytes()[:-5])
        code, output = run(['stream', '--model', str(broken),
                            '--profile', str(workspace['data'] / 'device_profile.json'), '--out', str(tmp_path)],
                           stdin_text=self.frames_text(workspace, 60))
        assert code == 2
        assert output == ''

    def test_stream_needs_a_compiled_model(self, workspace, tmp_path):
        code, _ = run(['stream', '--model', str(workspace['model'] / 'model.json'),
                       '--profile', str(workspace['data'] / 'device_profile.json'), '--out', str(tmp_path)],
                      stdin_text=self.frames_text(workspace, 60))
        assert code == 2


class TestPlotData:
    def test_solution_curves(self, tmp_path):
        code, _ = run(['plot-data', '--kind', 'solution', '--concentrations', '100,300', '--out', str(tmp_path)])
        assert code == 0
        table = pd.read_csv(tmp_path / 'plot_solution.csv')
        assert list(table.columns) == ['wavelength_nm', 'absorbance_100mg', 'absorbance_300mg']
        assert np.all(table['absorbance_300mg'] > table['absorbance_100mg'])

    def test_magnification_tables(self, workspace, tmp_path):
        code, _ = run(['plot-data', '--kind', 'evm', '--input', str(workspace['data'] / 'subject_1.csv'),
                       '--profile', str(workspace['data'] / 'device_profile.json'), '--out', str(tmp_path)])
        assert code == 0
        for name in ('evm_before.csv', 'evm_bandpass.csv', 'evm_after.csv'):
            assert (tmp_path / name).exists()

    def test_evm_needs_input(self, tmp_path):
        assert run(['plot-data', '--kind', 'evm', '--out', str(tmp_path)])[0] == 1


class TestUsageErrors:
    def test_unknown_flag(self, tmp_path):
        assert run(['train', '--bogus', '--out', str(tmp_path)])[0] == 1

    def test_unknown_command(self):
        assert run(['frobnicate'])[0] == 1

    def test_invalid_config_file(self, tmp_path):
        config = tmp_path / 'config.json'
        config.write_text(json.dumps({'forest': {'max_depth': 0}}))
        assert run(['train', '--config', str(config), '--out', str(tmp_path)])[0] == 1
