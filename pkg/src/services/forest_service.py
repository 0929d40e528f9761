"""
Random Forest training, prediction, evaluation and cross-validation

Trees are grown greedily on Gini impurity over a per-node random feature
subset; each tree sees a bootstrap sample drawn from its own derived RNG so
the ensemble does not depend on training order.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.model_selection import KFold, StratifiedKFold, train_test_split

from src.models.dataset import FEATURE_VERSION, FeatureVector, LabeledDataset
from src.models.forest import (
    LABEL_CODES,
    N_CLASSES,
    EvalReport,
    ForestModel,
    ForestParams,
    InternalNode,
    LeafNode,
    TreeNode,
)
from src.models.spectra import HydrationLabel
from src.utils.errors import (
    DegenerateData,
    EmptyTestSet,
    InvalidSpec,
    ShapeMismatch,
    TooFewGroups,
    TooFewRows,
    VersionMismatch,
)
from src.utils.seeding import derive_seed, derived_rng

logger = logging.getLogger(__name__)

MIN_TRAINING_ROWS = 10


@dataclass
class Split:
    impurity: float
    feature_index: int
    threshold: float


def default_max_features(n_features: int) -> int:
    return max(1, int(round(math.sqrt(n_features))))


def gini_impurity(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.sum(p * p))


def best_split(X: np.ndarray, y: np.ndarray, features: Sequence[int]) -> Optional[Split]:
    """
    Lowest weighted-Gini (feature, threshold) among the candidate features.

    Thresholds are float32-rounded midpoints between consecutive distinct
    values; ties keep the lowest feature index, then the lowest threshold.
    """
    n = y.shape[0]
    if n < 2:
        return None
    onehot = np.eye(N_CLASSES)[y]
    total = onehot.sum(axis=0)
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    best = None
    for feature in features:
        xs = X[:, feature]
        order = np.argsort(xs, kind='stable')
        xs_sorted = xs[order]
        left = np.cumsum(onehot[order], axis=0)[:-1]
        right = total - left
        gini_left = 1.0 - np.sum(left * left, axis=1) / (n_left * n_left)
        gini_right = 1.0 - np.sum(right * right, axis=1) / (n_right * n_right)
        impurity = (n_left * gini_left + n_right * gini_right) / n

        low, high = xs_sorted[:-1], xs_sorted[1:]
        mids = ((low + high) / 2.0).astype(np.float32).astype(np.float64)
        valid = (high > low) & (mids >= low) & (mids < high)
        if not valid.any():
            continue
        impurity = np.where(valid, impurity, np.inf)
        position = int(np.argmin(impurity))
        if best is None or impurity[position] < best.impurity:
            best = Split(impurity=float(impurity[position]), feature_index=int(feature),
                         threshold=float(mids[position]))
    return best


def build_tree(X: np.ndarray, y: np.ndarray, max_depth: int, max_features: int,
               rng: np.random.Generator, depth: int = 0) -> TreeNode:
    counts = np.bincount(y, minlength=N_CLASSES)
    if depth >= max_depth or np.count_nonzero(counts) <= 1:
        return LeafNode(class_counts=tuple(int(c) for c in counts))
    n_features = X.shape[1]
    features = np.sort(rng.choice(n_features, size=min(max_features, n_features), replace=False))
    split = best_split(X, y, features)
    if split is None:
        return LeafNode(class_counts=tuple(int(c) for c in counts))
    goes_left = X[:, split.feature_index] <= split.threshold
    return InternalNode(
        feature_index=split.feature_index,
        threshold=split.threshold,
        left=build_tree(X[goes_left], y[goes_left], max_depth, max_features, rng, depth + 1),
        right=build_tree(X[~goes_left], y[~goes_left], max_depth, max_features, rng, depth + 1),
    )


def bootstrap_indices(n_rows: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, n_rows, size=n_rows)


def train_forest(data: LabeledDataset, n_estimators: int = 80, max_depth: int = 5, seed: int = 0,
                 max_features: Optional[int] = None) -> ForestModel:
    """Bootstrap-aggregated Gini trees, deterministic given the seed"""
    params = ForestParams(n_estimators=n_estimators, max_depth=max_depth, max_features=max_features)
    if len(data) < MIN_TRAINING_ROWS:
        raise DegenerateData(f'Need at least {MIN_TRAINING_ROWS} rows, got {len(data)}')
    if len(data.classes) < 2:
        raise DegenerateData(f'Need at least 2 classes, got {data.classes}')
    X, y = data.features, data.labels
    n_features = data.n_features
    features_per_node = params.max_features or default_max_features(n_features)

    trees = []
    for tree_index in range(params.n_estimators):
        rng = derived_rng(seed, tree_index)
        sample = bootstrap_indices(len(data), rng)
        trees.append(build_tree(X[sample], y[sample], params.max_depth, features_per_node, rng))

    logger.info(f"✅ Trained forest: {params.n_estimators} trees, depth <= {params.max_depth}, "
                f"{features_per_node}/{n_features} features per node, seed {seed}")
    return ForestModel(
        trees=trees,
        n_estimators=params.n_estimators,
        max_depth=params.max_depth,
        feature_version=FEATURE_VERSION,
        label_codes=LABEL_CODES,
        rng_seed=int(seed),
        n_features=n_features,
    )


def train_with_params(data: LabeledDataset, params: ForestParams, seed: int) -> ForestModel:
    return train_forest(data, params.n_estimators, params.max_depth, seed, params.max_features)


def _accumulate(node: TreeNode, X: np.ndarray, rows: np.ndarray, out: np.ndarray) -> None:
    if rows.size == 0:
        return
    if isinstance(node, LeafNode):
        out[rows] += node.distribution()
        return
    goes_left = X[rows, node.feature_index] <= node.threshold
    _accumulate(node.left, X, rows[goes_left], out)
    _accumulate(node.right, X, rows[~goes_left], out)


def predict_proba(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Mean leaf class distribution over all trees, one row per input"""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise ShapeMismatch(f'Model expects {model.n_features} features, got {X.shape[1]}')
    out = np.zeros((X.shape[0], N_CLASSES))
    rows = np.arange(X.shape[0])
    for tree in model.trees:
        _accumulate(tree, X, rows, out)
    return out / len(model.trees)


def predict_labels(model: ForestModel, X: np.ndarray) -> np.ndarray:
    # argmax keeps the first maximum, i.e. ties go to the lower class code
    return np.argmax(predict_proba(model, X), axis=1)


def predict(model: ForestModel, x: Union[FeatureVector, np.ndarray]) -> Tuple[HydrationLabel, np.ndarray]:
    if isinstance(x, FeatureVector):
        if x.feature_version != model.feature_version:
            raise VersionMismatch(
                f'Feature version {x.feature_version} does not match model version {model.feature_version}')
        values = x.values
    else:
        values = np.asarray(x, dtype=np.float64)
    probabilities = predict_proba(model, values)[0]
    return HydrationLabel(int(np.argmax(probabilities))), probabilities


def evaluate_predictions(test: LabeledDataset, predicted: Sequence[int]) -> EvalReport:
    """Score externally produced labels against a test set"""
    if len(test) == 0:
        raise EmptyTestSet('Cannot evaluate on an empty test set')
    predicted = np.asarray(predicted, dtype=np.int64)
    if predicted.shape != test.labels.shape:
        raise ShapeMismatch(f'{predicted.shape[0]} predictions for {len(test)} test rows')
    if not np.all(np.isin(predicted, LABEL_CODES)):
        raise ShapeMismatch('Predictions contain invalid label codes')
    return EvalReport.from_labels(test.labels, predicted)


def evaluate(model: ForestModel, test: LabeledDataset) -> EvalReport:
    if len(test) == 0:
        raise EmptyTestSet('Cannot evaluate on an empty test set')
    return evaluate_predictions(test, predict_labels(model, test.features))


def _random_state(seed: int, index: int = 0) -> int:
    return derive_seed(seed, index) & 0xFFFFFFFF


def assign_folds(data: LabeledDataset, k: int, grouped_by_subject: bool, seed: int) -> np.ndarray:
    """
    Fold index per row.

    Grouped: subjects are shuffled into k folds, so no subject spans train and
    test. Otherwise stratified k-fold on the labels, falling back to plain
    shuffled k-fold when every class is smaller than k (leave-one-out).
    """
    if k < 2:
        raise InvalidSpec('Cross-validation needs k >= 2')
    folds = np.empty(len(data), dtype=np.int64)
    state = _random_state(seed)
    if grouped_by_subject:
        subjects = np.array(data.subjects)
        if subjects.size < k:
            raise TooFewGroups(f'{subjects.size} subjects cannot fill {k} folds')
        splitter = KFold(n_splits=k, shuffle=True, random_state=state)
        for fold, (_, test) in enumerate(splitter.split(subjects)):
            folds[np.isin(data.subject_ids, subjects[test])] = fold
        return folds
    if len(data) < k:
        raise TooFewGroups(f'{len(data)} rows cannot fill {k} folds')
    if np.all(np.bincount(data.labels, minlength=N_CLASSES)[data.classes] < k):
        splitter = KFold(n_splits=k, shuffle=True, random_state=state)
    else:
        splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=state)
    for fold, (_, test) in enumerate(splitter.split(data.features, data.labels)):
        folds[test] = fold
    return folds


@dataclass
class CrossValidation:
    mean_accuracy: float
    std_accuracy: float
    reports: List[EvalReport]
    train_accuracies: List[float] = field(default_factory=list)

    @property
    def mean_train_accuracy(self) -> float:
        return float(np.mean(self.train_accuracies)) if self.train_accuracies else 0.0

    @property
    def generalization_gap(self) -> float:
        """Mean training accuracy minus mean validation accuracy"""
        return self.mean_train_accuracy - self.mean_accuracy

    def to_dict(self) -> Dict:
        return {
            'mean_accuracy': self.mean_accuracy,
            'std_accuracy': self.std_accuracy,
            'mean_train_accuracy': self.mean_train_accuracy,
            'generalization_gap': self.generalization_gap,
            'fold_accuracies': [report.accuracy for report in self.reports],
            'folds': [report.to_dict() for report in self.reports],
        }

    def as_table(self) -> str:
        lines = [f'{"Fold":<6}{"Accuracy":>10}{"Train":>10}']
        for index, report in enumerate(self.reports):
            train = self.train_accuracies[index] if index < len(self.train_accuracies) else float('nan')
            lines.append(f'{index:<6}{report.accuracy:>10.3f}{train:>10.3f}')
        lines.append(f'{"Mean":<6}{self.mean_accuracy:>10.3f}{self.mean_train_accuracy:>10.3f}')
        lines.append(f'{"Std":<6}{self.std_accuracy:>10.3f}')
        return '\n'.join(lines)


def cross_validate(data: LabeledDataset, k: int = 5, grouped_by_subject: bool = True,
                   params: Optional[ForestParams] = None, seed: int = 0) -> CrossValidation:
    """k-fold accuracy; std is the population standard deviation over folds"""
    params = params or ForestParams()
    folds = assign_folds(data, k, grouped_by_subject, seed)
    reports, train_accuracies = [], []
    for fold in range(k):
        test_rows = np.flatnonzero(folds == fold)
        train_rows = np.flatnonzero(folds != fold)
        if test_rows.size == 0:
            continue
        train = data.subset(train_rows)
        model = train_with_params(train, params, seed)
        reports.append(evaluate(model, data.subset(test_rows)))
        train_accuracies.append(evaluate(model, train).accuracy)
        logger.debug(f"Fold {fold}: accuracy {reports[-1].accuracy:.3f} on {test_rows.size} rows")
    accuracies = np.array([report.accuracy for report in reports])
    result = CrossValidation(
        mean_accuracy=float(accuracies.mean()),
        std_accuracy=float(accuracies.std()),
        reports=reports,
        train_accuracies=train_accuracies,
    )
    logger.info(f"📊 {k}-fold {'grouped' if grouped_by_subject else 'stratified'} CV: "
                f"{result.mean_accuracy:.3f} ± {result.std_accuracy:.3f}")
    return result


def stratified_holdout(labels: np.ndarray, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Sorted train/test row indices; the test side holds ceil(fraction * n) rows in label proportion"""
    rows = np.arange(len(labels))
    try:
        train_rows, test_rows = train_test_split(rows, test_size=fraction, stratify=labels,
                                                 random_state=_random_state(seed))
    except ValueError as e:
        raise TooFewRows(f'Cannot hold out {fraction:.0%} of {len(labels)} rows by label: {e}')
    return np.sort(train_rows), np.sort(test_rows)


@dataclass
class PerSubjectResult:
    accuracies: Dict[int, float]
    skipped: Dict[int, str] = field(default_factory=dict)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(list(self.accuracies.values()))) if self.accuracies else 0.0

    def to_dict(self) -> Dict:
        return {
            'accuracies': {str(k): v for k, v in sorted(self.accuracies.items())},
            'mean_accuracy': self.mean_accuracy,
            'skipped': {str(k): v for k, v in sorted(self.skipped.items())},
        }

    def as_table(self) -> str:
        subjects = sorted(self.accuracies)
        header = ''.join(f'{f"P{s}":>7}' for s in subjects)
        values = ''.join(f'{self.accuracies[s]:>7.2f}' for s in subjects)
        return f'{"":<4}{header}\n{"RF":<4}{values}'


def per_subject_evaluate(data: LabeledDataset, params: Optional[ForestParams] = None, seed: int = 0,
                         test_fraction: float = 0.2) -> PerSubjectResult:
    """Train and test one model per subject on an 80/20 stratified split"""
    params = params or ForestParams()
    result = PerSubjectResult(accuracies={})
    for subject in data.subjects:
        subject_data = data.for_subject(subject)
        try:
            train_rows, test_rows = stratified_holdout(subject_data.labels, test_fraction,
                                                       derive_seed(seed, subject))
            train = subject_data.subset(train_rows)
            if len(train) < MIN_TRAINING_ROWS or len(train.classes) < 2 or test_rows.size == 0:
                raise TooFewRows(f'Subject {subject} has {len(train)} training rows '
                                 f'over {len(train.classes)} classes')
            model = train_with_params(train, params, derive_seed(seed, subject))
            result.accuracies[subject] = evaluate(model, subject_data.subset(test_rows)).accuracy
        except TooFewRows as e:
            result.skipped[subject] = e.message
            logger.warning(f"⚠️ {e.message}, skipped")
    logger.info(f"📊 Per-subject accuracy: mean {result.mean_accuracy:.3f} over {len(result.accuracies)} subjects")
    return result
