"""
Tree ensemble and evaluation report types
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from sklearn.metrics import accuracy_score, confusion_matrix, precision_recall_fscore_support

from src.models.dataset import FEATURE_VERSION, N_FEATURES
from src.models.spectra import HydrationLabel
from src.utils.errors import CorruptModel, InvalidSpec

N_CLASSES = len(HydrationLabel)
LABEL_CODES = tuple(label.value for label in HydrationLabel)


@dataclass
class LeafNode:
    class_counts: Tuple[int, ...]

    @property
    def total(self) -> int:
        return int(sum(self.class_counts))

    def distribution(self) -> np.ndarray:
        counts = np.asarray(self.class_counts, dtype=np.float64)
        return counts / counts.sum()


@dataclass
class InternalNode:
    feature_index: int
    threshold: float
    left: 'TreeNode'
    right: 'TreeNode'


TreeNode = Union[InternalNode, LeafNode]


def tree_depth(node: TreeNode) -> int:
    if isinstance(node, LeafNode):
        return 0
    return 1 + max(tree_depth(node.left), tree_depth(node.right))


def count_nodes(node: TreeNode) -> int:
    if isinstance(node, LeafNode):
        return 1
    return 1 + count_nodes(node.left) + count_nodes(node.right)


def node_to_dict(node: TreeNode) -> Dict[str, Any]:
    if isinstance(node, LeafNode):
        return {'leaf': [int(c) for c in node.class_counts]}
    return {
        'feature': int(node.feature_index),
        'threshold': float(node.threshold),
        'left': node_to_dict(node.left),
        'right': node_to_dict(node.right),
    }


def node_from_dict(data: Dict[str, Any]) -> TreeNode:
    if 'leaf' in data:
        return LeafNode(class_counts=tuple(int(c) for c in data['leaf']))
    return InternalNode(
        feature_index=int(data['feature']),
        threshold=float(data['threshold']),
        left=node_from_dict(data['left']),
        right=node_from_dict(data['right']),
    )


@dataclass(frozen=True)
class ForestParams:
    n_estimators: int = 80
    max_depth: int = 5
    max_features: Optional[int] = None

    def __post_init__(self):
        if self.n_estimators < 1:
            raise InvalidSpec('n_estimators must be at least 1')
        if self.max_depth < 1:
            raise InvalidSpec('max_depth must be at least 1')
        if self.max_features is not None and self.max_features < 1:
            raise InvalidSpec('max_features must be at least 1')

    @classmethod
    def original(cls) -> 'ForestParams':
        """Pre-tuning configuration, kept for complexity comparisons"""
        return cls(n_estimators=100, max_depth=10)

    def to_dict(self) -> Dict[str, Any]:
        return {'n_estimators': self.n_estimators, 'max_depth': self.max_depth,
                'max_features': self.max_features}


@dataclass
class ForestModel:
    trees: List[TreeNode]
    n_estimators: int = 80
    max_depth: int = 5
    feature_version: int = FEATURE_VERSION
    label_codes: Tuple[int, ...] = LABEL_CODES
    rng_seed: int = 0
    n_features: int = N_FEATURES

    def __post_init__(self):
        if len(self.trees) != self.n_estimators:
            raise CorruptModel(f'Expected {self.n_estimators} trees, got {len(self.trees)}')
        deepest = max((tree_depth(tree) for tree in self.trees), default=0)
        if deepest > self.max_depth:
            raise CorruptModel(f'Tree depth {deepest} exceeds max_depth {self.max_depth}')

    def to_dict(self) -> Dict[str, Any]:
        return {
            'n_estimators': self.n_estimators,
            'max_depth': self.max_depth,
            'feature_version': self.feature_version,
            'label_codes': list(self.label_codes),
            'rng_seed': self.rng_seed,
            'n_features': self.n_features,
            'trees': [node_to_dict(tree) for tree in self.trees],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ForestModel':
        try:
            return cls(
                trees=[node_from_dict(tree) for tree in data['trees']],
                n_estimators=int(data['n_estimators']),
                max_depth=int(data['max_depth']),
                feature_version=int(data['feature_version']),
                label_codes=tuple(data['label_codes']),
                rng_seed=int(data['rng_seed']),
                n_features=int(data.get('n_features', N_FEATURES)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise CorruptModel(f'Model JSON is malformed: {e}')


@dataclass
class EvalReport:
    accuracy: float
    precision: List[float]
    recall: List[float]
    f1: List[float]
    confusion: List[List[int]]
    support: List[int] = field(default_factory=list)

    @classmethod
    def from_labels(cls, truth: np.ndarray, predicted: np.ndarray) -> 'EvalReport':
        """Accuracy, per-class precision / recall / F1 and the confusion matrix; 0 wherever a denominator is 0"""
        truth = np.asarray(truth, dtype=np.int64)
        predicted = np.asarray(predicted, dtype=np.int64)
        labels = list(LABEL_CODES)
        precision, recall, f1, support = precision_recall_fscore_support(
            truth, predicted, labels=labels, zero_division=0)
        return cls(
            accuracy=float(accuracy_score(truth, predicted)) if truth.size else 0.0,
            precision=precision.tolist(),
            recall=recall.tolist(),
            f1=f1.tolist(),
            confusion=confusion_matrix(truth, predicted, labels=labels).tolist(),
            support=support.astype(np.int64).tolist(),
        )

    @classmethod
    def from_confusion(cls, confusion: np.ndarray) -> 'EvalReport':
        """Report for a hand-built confusion matrix (rows = truth, columns = prediction)"""
        confusion = np.asarray(confusion, dtype=np.int64)
        truth, predicted = np.nonzero(np.ones_like(confusion))
        counts = confusion.ravel()
        return cls.from_labels(np.repeat(truth, counts), np.repeat(predicted, counts))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'accuracy': self.accuracy,
            'precision': self.precision,
            'recall': self.recall,
            'f1': self.f1,
            'confusion': self.confusion,
            'support': self.support,
        }

    def as_table(self) -> str:
        """Plain-text Class / Prec / Rec / F1 table"""
        lines = [f'{"Class":<16}{"Prec":>6}{"Rec":>6}{"F1":>6}']
        for label in HydrationLabel:
            lines.append(
                f'{label.display_name:<16}{self.precision[label]:>6.2f}'
                f'{self.recall[label]:>6.2f}{self.f1[label]:>6.2f}'
            )
        lines.append(f'{"Accuracy":<16}{self.accuracy:>18.2f}')
        return '\n'.join(lines)
