"""
Model subcommands: training, evaluation, compilation and the streaming runner
"""
import dataclasses
import logging
import time
from pathlib import Path
from typing import Union

from src.models.forest import ForestModel
from src.routes.context import CommandContext, load_dataset
from src.services.edge_service import CompactModel, audit_argmax, compile_model, runtime_for
from src.services.forest_service import (
    cross_validate,
    evaluate,
    evaluate_predictions,
    per_subject_evaluate,
    train_with_params,
)
from src.services.stream_service import StreamState, stream_step
from src.utils.errors import ConfigError, CorruptModel, InvalidFrame, ModelTooLarge, ZeroIntensity
from src.utils.io import (
    iter_frames_csv,
    read_dataset_csv,
    read_json,
    read_predictions_csv,
    read_profile,
)
from src.utils.monitoring import log_stream_health

logger = logging.getLogger(__name__)


def _dataset_flags(parser, with_pipeline: bool = True):
    parser.add_argument('--dataset', help='Feature dataset CSV')
    parser.add_argument('--data', help='Raw stream directory written by gen-data')
    parser.add_argument('--profile', help='Calibration profile for --data')
    if with_pipeline:
        parser.add_argument('--no-evm', action='store_const', const=False, dest='evm.use_evm')


def _forest_flags(parser):
    parser.add_argument('--n-estimators', type=int, dest='forest.n_estimators')
    parser.add_argument('--max-depth', type=int, dest='forest.max_depth')
    parser.add_argument('--max-features', type=int, dest='forest.max_features')


def register(subparsers, common):
    train = subparsers.add_parser('train', parents=[common], help='Train a forest and compile it')
    _dataset_flags(train)
    _forest_flags(train)
    train.add_argument('--test-dataset', help='Held-out dataset CSV for the report (default: training set)')
    train.set_defaults(handler=cmd_train)

    ev = subparsers.add_parser('evaluate', parents=[common], help='Score a model or external predictions')
    _dataset_flags(ev)
    ev.add_argument('--model', help='model.bin or model.json')
    ev.add_argument('--predictions', help='row_index,predicted_label CSV to score instead of a model')
    ev.set_defaults(handler=cmd_evaluate)

    cv = subparsers.add_parser('cv', parents=[common], help='k-fold cross-validation')
    _dataset_flags(cv)
    _forest_flags(cv)
    cv.add_argument('--k', type=int, dest='cv.k')
    cv.add_argument('--stratified', action='store_const', const=False, dest='cv.grouped',
                    help='Stratified row folds instead of subject-grouped folds')
    cv.set_defaults(handler=cmd_cv)

    per = subparsers.add_parser('per-subject', parents=[common], help='One model per subject, 80/20 split')
    _dataset_flags(per)
    _forest_flags(per)
    per.set_defaults(handler=cmd_per_subject)

    comp = subparsers.add_parser('compile', parents=[common], help='Compile model.json to the compact format')
    comp.add_argument('--model', required=True, help='model.json')
    comp.add_argument('--dataset', required=True, help='Training features for the quantisation audit')
    comp.set_defaults(handler=cmd_compile)

    stream = subparsers.add_parser('stream', parents=[common], help='Classify frames from standard input')
    stream.add_argument('--model', required=True, help='model.bin')
    stream.add_argument('--profile', required=True, help='Calibration profile JSON')
    stream.add_argument('--pace', choices=('real', 'fast'), dest='stream.pace')
    stream.add_argument('--health-every', type=int, dest='stream.health_every')
    stream.add_argument('--no-evm', action='store_const', const=False, dest='evm.use_evm')
    stream.set_defaults(handler=cmd_stream)


def load_model(path: Union[str, Path]) -> Union[ForestModel, CompactModel]:
    path = Path(path)
    if path.suffix == '.bin':
        return CompactModel.from_bytes(path.read_bytes())
    if path.suffix == '.json':
        return ForestModel.from_dict(read_json(path))
    raise ConfigError(f'Model file must end in .bin or .json, got {path.name}')


def _compile_report(model: ForestModel, features, ctx: CommandContext):
    """Compile, write model.bin and audit; returns the report section"""
    compact = compile_model(model)
    path = ctx.out / 'model.bin'
    path.write_bytes(compact.to_bytes())
    logger.info(f"✅ Wrote {path} ({compact.size} bytes)")
    audit = audit_argmax(model, compact, features)
    return {'size_bytes': compact.size, 'n_trees': compact.n_trees, 'n_leaves': compact.n_leaves,
            'audit': audit.to_dict()}


def cmd_train(args, ctx: CommandContext) -> None:
    data = load_dataset(args, ctx)
    params = ctx.config.forest_params()
    logger.info(f"🚀 Training {params.n_estimators} trees of depth {params.max_depth} on {len(data)} rows")
    model = train_with_params(data, params, ctx.config.seed)
    ctx.write_report('model.json', model.to_dict())

    test = read_dataset_csv(args.test_dataset) if args.test_dataset else data
    report = evaluate(model, test)
    summary = {
        'params': params.to_dict(),
        'seed': ctx.config.seed,
        'n_rows': len(data),
        'evaluated_on': 'test' if args.test_dataset else 'train',
        'report': report.to_dict(),
    }
    try:
        compact = _compile_report(model, data.features, ctx)
    except ModelTooLarge as e:
        summary['compact'] = {'error': e.to_dict()}
        ctx.write_report('train_report.json', summary)
        logger.error(f"❌ model.bin not written, model.json and train_report.json kept in {ctx.out}")
        raise
    summary['compact'] = compact
    ctx.write_report('train_report.json', summary)
    ctx.emit(report.as_table())
    ctx.emit(f'model.bin: {compact["size_bytes"]} bytes, '
             f'argmax agreement {compact["audit"]["agreement_rate"]:.4f}')


def cmd_evaluate(args, ctx: CommandContext) -> None:
    test = load_dataset(args, ctx)
    if args.predictions:
        report = evaluate_predictions(test, read_predictions_csv(args.predictions, len(test)))
        source = args.predictions
    elif args.model:
        model = load_model(args.model)
        if isinstance(model, CompactModel):
            labels, _ = runtime_for(model).infer_batch(test.features)
            report = evaluate_predictions(test, labels)
        else:
            report = evaluate(model, test)
        source = args.model
    else:
        raise ConfigError('evaluate needs --model or --predictions')
    ctx.write_report('eval_report.json', {'source': str(source), 'report': report.to_dict()})
    ctx.emit(report.as_table())


def cmd_cv(args, ctx: CommandContext) -> None:
    config = ctx.config
    result = cross_validate(load_dataset(args, ctx), k=config.cv.k, grouped_by_subject=config.cv.grouped,
                            params=config.forest_params(), seed=config.seed)
    ctx.write_report('cv_report.json', {
        'k': config.cv.k,
        'grouped_by_subject': config.cv.grouped,
        'use_evm': config.evm.use_evm,
        **result.to_dict(),
    })
    ctx.emit(result.as_table())
    ctx.emit(f'Generalization gap: {result.generalization_gap:.3f}')


def cmd_per_subject(args, ctx: CommandContext) -> None:
    result = per_subject_evaluate(load_dataset(args, ctx), params=ctx.config.forest_params(),
                                  seed=ctx.config.seed)
    ctx.write_report('per_subject.json', result.to_dict())
    ctx.emit(result.as_table())
    for subject, reason in sorted(result.skipped.items()):
        ctx.emit(f'P{subject} skipped: {reason}')


def cmd_compile(args, ctx: CommandContext) -> None:
    model = load_model(args.model)
    if not isinstance(model, ForestModel):
        raise ConfigError('compile takes a model.json')
    features = read_dataset_csv(args.dataset).features
    compact = compile_model(model)
    ctx.out.mkdir(parents=True, exist_ok=True)
    (ctx.out / 'model.bin').write_bytes(compact.to_bytes())
    audit = audit_argmax(model, compact, features)
    report = {'size_bytes': compact.size, 'n_trees': compact.n_trees, 'n_leaves': compact.n_leaves,
              'audit': audit.to_dict()}
    ctx.write_report('compile_report.json', report)
    ctx.emit(f'model.bin: {compact.size} bytes, {compact.n_trees} trees, {compact.n_leaves} leaves')
    ctx.emit(f'argmax agreement: {audit.agreement_rate:.4f}')


def cmd_stream(args, ctx: CommandContext) -> None:
    config = ctx.config
    compact = load_model(args.model)
    if not isinstance(compact, CompactModel):
        raise CorruptModel('stream needs a compiled model.bin')
    profile = read_profile(args.profile)
    evm = config.evm_params()
    if not config.evm.use_evm:
        evm = dataclasses.replace(evm, alpha=0.0)
    state = StreamState(evm, config.window_spec())
    logger.info(f"🚀 Streaming at {config.stream.pace} pace, state {state.footprint_bytes()} bytes")

    outputs = 0
    previous_ms = None
    for frame in iter_frames_csv(ctx.stdin, skip_invalid=True):
        if config.stream.pace == 'real' and previous_ms is not None and frame.timestamp_ms > previous_ms:
            time.sleep((frame.timestamp_ms - previous_ms) / 1000.0)
        previous_ms = frame.timestamp_ms
        try:
            output = stream_step(state, frame, profile, compact)
        except (InvalidFrame, ZeroIntensity) as e:
            logger.warning(f"⚠️ Rejected frame: {e.message}")
            continue
        if output is None:
            continue
        ctx.stdout.write(output.as_line() + '\n')
        ctx.stdout.flush()
        outputs += 1
        if outputs % config.stream.health_every == 0:
            log_stream_health(outputs, state.footprint_bytes())
    log_stream_health(outputs, state.footprint_bytes())
    logger.info(f"✅ Stream finished after {state.count} frames, {outputs} outputs")
