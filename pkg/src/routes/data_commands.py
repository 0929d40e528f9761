"""
Data subcommands: synthetic cohorts, calibration, preprocessing and plot tables
"""
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from src.models.spectra import AbsorbanceSeries, CalibrationProfile, ChannelMap
from src.models.synthetic import DiversitySpec, SessionSpec
from src.routes.context import (
    DEVICE_PROFILE,
    MANIFEST,
    CommandContext,
    build_from_streams,
    subject_file,
)
from src.services.calibration_service import (
    absorbance_series,
    fit_channel_gains,
    gain_residuals,
    resample_reference,
)
from src.services.dsp_service import bandpass_component, eulerian_magnify
from src.services.synth_service import (
    device_profile,
    generate_cohort,
    load_preset,
    preset_solution,
    simulate_solution,
)
from src.utils.errors import ConfigError
from src.utils.io import (
    is_reference_spectrum,
    read_absorbance_csv,
    read_frames_csv,
    read_profile,
    read_reference_spectrum,
    write_absorbance_csv,
    write_dataset_csv,
    write_frames_csv,
    write_reference_spectrum,
)
from src.utils.seeding import derive_seed
from src.utils.validation import parse_float_list, parse_index_list

logger = logging.getLogger(__name__)

PLOT_KINDS = ('solution', 'evm', 'spectrum')


def register(subparsers, common):
    gen = subparsers.add_parser('gen-data', parents=[common], help='Generate a synthetic cohort and solution files')
    gen.add_argument('--n-subjects', type=int, dest='synth.n_subjects')
    gen.add_argument('--preset', dest='synth.preset')
    gen.add_argument('--duration-s', type=float, dest='synth.duration_s')
    gen.add_argument('--rate-hz', type=float, dest='synth.rate_hz')
    gen.add_argument('--no-evm', action='store_const', const=False, dest='evm.use_evm')
    gen.set_defaults(handler=cmd_gen_data)

    cal = subparsers.add_parser('calibrate', parents=[common], help='Fit per-channel gains against a reference')
    cal.add_argument('measured', help='Measured absorbance CSV, or intensity frames when --i0 is given')
    cal.add_argument('reference', help='Reference absorbance CSV or wavelength_nm,absorbance spectrum')
    cal.add_argument('--i0', help='Profile JSON or comma-separated off-body source intensities')
    cal.add_argument('--channels', help='Comma-separated channel indices to fit (default: all)')
    cal.set_defaults(handler=cmd_calibrate)

    pre = subparsers.add_parser('preprocess', parents=[common], help='Raw streams to a windowed feature dataset')
    pre.add_argument('--data', required=True, help='Directory written by gen-data')
    pre.add_argument('--profile', help=f'Calibration profile (default: DATA/{DEVICE_PROFILE})')
    pre.add_argument('--no-evm', action='store_const', const=False, dest='evm.use_evm')
    pre.set_defaults(handler=cmd_preprocess)

    plot = subparsers.add_parser('plot-data', parents=[common], help='Tables for external plotting')
    plot.add_argument('--kind', choices=PLOT_KINDS, default='solution')
    plot.add_argument('--concentrations', help='Comma-separated mg values (default: preset)')
    plot.add_argument('--input', help='Frames CSV (with --profile) or absorbance CSV')
    plot.add_argument('--profile', help='Calibration profile for frame input')
    plot.set_defaults(handler=cmd_plot_data)


def cmd_gen_data(args, ctx: CommandContext) -> None:
    config = ctx.config
    preset = load_preset(config.synth.preset)
    diversity = DiversitySpec.from_dict(preset['diversity'])
    session = SessionSpec.from_dict({**preset['session'], 'duration_s': config.synth.duration_s,
                                     'rate_hz': config.synth.rate_hz})
    logger.info(f"🚀 Generating {config.synth.n_subjects} subjects from preset {config.synth.preset}")
    cohort = generate_cohort(config.synth.n_subjects, diversity, session, config.seed, config.pipeline())

    ctx.out.mkdir(parents=True, exist_ok=True)
    for participant in cohort.participants:
        recordings = cohort.recordings[participant.subject_id]
        write_frames_csv(ctx.out / subject_file(participant.subject_id),
                         np.concatenate([r.timestamps_ms for r in recordings]),
                         np.vstack([r.intensities for r in recordings]))

    solution = preset['solution']
    device_seed = derive_seed(config.seed, 0)
    solutions = []
    for concentration in solution['concentrations_mg']:
        # same seed for every concentration: one device, one set of gain errors
        measurement = simulate_solution(
            preset_solution(concentration, preset),
            reference_resolution=solution['reference_resolution'],
            max_gain_error=solution['max_gain_error'],
            n_samples=10,
            rate_hz=config.synth.rate_hz,
            seed=device_seed,
            source_i0=diversity.source_i0,
        )
        stem = f'solution_{concentration:g}mg'
        write_frames_csv(ctx.out / f'{stem}_measured.csv', measurement.measured.timestamps_ms,
                         np.vstack([frame.channels for frame in measurement.frames]))
        write_reference_spectrum(ctx.out / f'{stem}_reference.csv', measurement.reference_wavelengths_nm,
                                 measurement.reference_absorbance)
        solutions.append({'concentration_mg': concentration, 'measured': f'{stem}_measured.csv',
                          'reference': f'{stem}_reference.csv',
                          'expected_gains': measurement.expected_gains().tolist()})

    manifest = cohort.manifest()
    manifest['solutions'] = solutions
    ctx.write_report(MANIFEST, manifest)
    ctx.write_report(DEVICE_PROFILE, device_profile(diversity.source_i0).to_dict())
    write_dataset_csv(ctx.out / 'dataset.csv', cohort.dataset)

    ctx.emit(f'subjects: {len(cohort.participants)}')
    ctx.emit(f'segments: {len(manifest["segments"])}')
    ctx.emit(f'windows:  {len(cohort.dataset)} ({cohort.skipped} recordings skipped)')


def _read_i0(text: str) -> np.ndarray:
    if text.endswith('.json'):
        return read_profile(text).i0
    return np.array(parse_float_list(text))


def cmd_calibrate(args, ctx: CommandContext) -> None:
    channel_map = ChannelMap()
    i0 = _read_i0(args.i0) if args.i0 else None
    if i0 is not None:
        measured = absorbance_series(read_frames_csv(args.measured), CalibrationProfile.unit(i0=i0))
    else:
        measured = read_absorbance_csv(args.measured)

    if is_reference_spectrum(args.reference):
        wavelengths, absorbance = read_reference_spectrum(args.reference)
        reference = AbsorbanceSeries(timestamps_ms=measured.timestamps_ms[:1],
                                     values=resample_reference(wavelengths, absorbance, channel_map)[None, :])
    else:
        reference = read_absorbance_csv(args.reference)

    channels = parse_index_list(args.channels) if args.channels else None
    if channels is not None:
        outside = [c for c in channels if not 0 <= c < len(channel_map.wavelengths_nm)]
        if outside or not channels:
            raise ConfigError(f'Channel indices must lie in 0..{len(channel_map.wavelengths_nm) - 1}',
                              details={'channels': outside})

    profile = fit_channel_gains(measured, reference, i0=i0, channels=channels)
    residuals = gain_residuals(measured, reference, profile)
    ctx.write_report('profile.json', profile.to_dict())
    ctx.write_report('calibration_report.json', {'gains': profile.gains.tolist(), 'residuals': residuals,
                                                 'channels': channels})

    lines = [f'{"Channel":<10}{"Gain":>10}{"ResMean":>12}{"ResRMS":>12}']
    for index, name in enumerate(channel_map.column_names):
        lines.append(f'{name:<10}{profile.gains[index]:>10.4f}'
                     f'{residuals["mean"][index]:>12.2e}{residuals["rms"][index]:>12.2e}')
    ctx.emit('\n'.join(lines))


def cmd_preprocess(args, ctx: CommandContext) -> None:
    build = build_from_streams(Path(args.data), ctx.config, args.profile)
    write_dataset_csv(ctx.out / 'dataset.csv', build.dataset)
    ctx.emit(f'windows: {len(build.dataset)} ({build.skipped} recordings skipped)')
    ctx.emit(f'subjects: {",".join(str(s) for s in build.dataset.subjects)}')


def _input_series(args) -> AbsorbanceSeries:
    if not args.input:
        raise ConfigError(f'plot-data --kind {args.kind} needs --input')
    if args.profile:
        return absorbance_series(read_frames_csv(args.input), read_profile(args.profile))
    return read_absorbance_csv(args.input)


def cmd_plot_data(args, ctx: CommandContext) -> None:
    ctx.out.mkdir(parents=True, exist_ok=True)
    channel_map = ChannelMap()

    if args.kind == 'solution':
        preset = load_preset(ctx.config.synth.preset)
        concentrations = (parse_float_list(args.concentrations) if args.concentrations
                          else preset['solution']['concentrations_mg'])
        if not concentrations:
            raise ConfigError('--concentrations is empty')
        table = pd.DataFrame({'wavelength_nm': channel_map.wavelengths_nm})
        for concentration in concentrations:
            measurement = simulate_solution(preset_solution(concentration, preset),
                                            gain_errors=np.ones(len(channel_map.wavelengths_nm)),
                                            source_i0=preset['diversity']['source_i0'])
            table[f'absorbance_{concentration:g}mg'] = measurement.measured.values.mean(axis=0)
        path = ctx.out / 'plot_solution.csv'
        table.to_csv(path, index=False, lineterminator='\n')
        ctx.emit(f'{len(concentrations)} curves -> {path}')

    elif args.kind == 'evm':
        series = _input_series(args)
        params = ctx.config.evm_params()
        bandpass = bandpass_component(series, params.band)
        write_absorbance_csv(ctx.out / 'evm_before.csv', series)
        write_absorbance_csv(ctx.out / 'evm_bandpass.csv', series.with_values(bandpass))
        write_absorbance_csv(ctx.out / 'evm_after.csv', eulerian_magnify(series, params))
        ctx.emit(f'{series.n_samples} samples, alpha {params.alpha:g} -> {ctx.out}/evm_*.csv')

    else:
        series = _input_series(args)
        path = ctx.out / 'plot_spectrum.csv'
        write_reference_spectrum(path, channel_map.wavelengths_nm, series.values.mean(axis=0))
        ctx.emit(f'mean of {series.n_samples} samples -> {path}')
