"""
Compact binary model format and the fixed-buffer edge runtime

Layout (little-endian):
    header   "HTRK" | format_version u16 | feature_version u16 | n_trees u16 | n_classes u8 | reserved u8
    per tree node_count u16, then node_count preorder nodes of 8 bytes
             internal: feature u8 | threshold f32 | right child index u16 | reserved u8
             leaf:     255 u8 | majority class u8 + 3 pad | probability row u16 | reserved u8
    table    n_leaves rows of n_classes Q1.15 u16 entries
"""
import logging
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.models.dataset import N_FEATURES, FeatureVector
from src.models.forest import LABEL_CODES, N_CLASSES, ForestModel, InternalNode, LeafNode, TreeNode, tree_depth
from src.models.spectra import HydrationLabel
from src.services.forest_service import predict_proba
from src.utils.errors import CorruptModel, InvalidSpec, ModelTooLarge, ShapeMismatch, VersionMismatch

logger = logging.getLogger(__name__)

MAGIC = b'HTRK'
FORMAT_VERSION = 1
MAX_MODEL_BYTES = 65536
LEAF = 255
Q15_ONE = 32768

HEADER = struct.Struct('<4sHHHBB')
COUNT = struct.Struct('<H')
INTERNAL = struct.Struct('<BfHB')
LEAF_NODE = struct.Struct('<BBxxxHB')
NODE_SIZE = 8


@dataclass(frozen=True)
class CompactNode:
    feature: int
    threshold: float
    link: int
    majority: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.feature == LEAF


def quantize_distribution(counts: Sequence[int]) -> np.ndarray:
    """
    Q1.15 row summing to exactly 32768.

    Floors of the scaled counts, with the shortfall handed out by largest
    remainder (lower class index first on equal remainders).
    """
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total <= 0:
        raise InvalidSpec('Leaf has no samples')
    scaled = counts * Q15_ONE
    row = scaled // total
    remainder = scaled % total
    shortfall = Q15_ONE - int(row.sum())
    order = sorted(range(counts.size), key=lambda i: (-int(remainder[i]), i))
    for i in order[:shortfall]:
        row[i] += 1
    return row


def _flatten(node: TreeNode, nodes: List[Optional[CompactNode]], rows: List[np.ndarray]) -> None:
    index = len(nodes)
    if isinstance(node, LeafNode):
        row = quantize_distribution(node.class_counts)
        nodes.append(CompactNode(LEAF, 0.0, len(rows), int(np.argmax(row))))
        rows.append(row)
        return
    nodes.append(None)
    _flatten(node.left, nodes, rows)
    right = len(nodes)
    _flatten(node.right, nodes, rows)
    nodes[index] = CompactNode(int(node.feature_index), float(np.float32(node.threshold)), right)


def _pack_node(node: CompactNode) -> bytes:
    if node.is_leaf:
        return LEAF_NODE.pack(LEAF, node.majority, node.link, 0)
    return INTERNAL.pack(node.feature, node.threshold, node.link, 0)


@dataclass(frozen=True, eq=False)
class CompactModel:
    data: bytes
    feature_version: int
    n_classes: int
    trees: Tuple[Tuple[CompactNode, ...], ...]
    prob_table: np.ndarray
    format_version: int = FORMAT_VERSION

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def n_leaves(self) -> int:
        return int(self.prob_table.shape[0])

    @property
    def size(self) -> int:
        return len(self.data)

    @property
    def max_feature_index(self) -> int:
        return max((n.feature for tree in self.trees for n in tree if not n.is_leaf), default=-1)

    def to_bytes(self) -> bytes:
        return self.data

    def __eq__(self, other):
        return isinstance(other, CompactModel) and self.data == other.data

    def __hash__(self):
        return hash(self.data)

    @classmethod
    def from_bytes(cls, data: bytes) -> 'CompactModel':
        """Parse and bounds-check a compact model; any inconsistency is CorruptModel"""
        data = bytes(data)
        if len(data) < HEADER.size:
            raise CorruptModel(f'Model file of {len(data)} bytes is shorter than the header')
        magic, format_version, feature_version, n_trees, n_classes, _ = HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise CorruptModel(f'Bad magic {magic!r}')
        if format_version != FORMAT_VERSION:
            raise CorruptModel(f'Unsupported format version {format_version}')
        if n_classes != N_CLASSES:
            raise CorruptModel(f'Expected {N_CLASSES} classes, header says {n_classes}')
        if n_trees < 1:
            raise CorruptModel('Model has no trees')

        offset = HEADER.size
        trees = []
        for tree_index in range(n_trees):
            if offset + COUNT.size > len(data):
                raise CorruptModel(f'Truncated before tree {tree_index}')
            (count,) = COUNT.unpack_from(data, offset)
            offset += COUNT.size
            if count < 1 or offset + count * NODE_SIZE > len(data):
                raise CorruptModel(f'Tree {tree_index} declares {count} nodes past the end of the file')
            nodes = []
            for i in range(count):
                position = offset + i * NODE_SIZE
                if data[position] == LEAF:
                    _, majority, row, _ = LEAF_NODE.unpack_from(data, position)
                    nodes.append(CompactNode(LEAF, 0.0, row, majority))
                else:
                    feature, threshold, right, _ = INTERNAL.unpack_from(data, position)
                    nodes.append(CompactNode(feature, threshold, right))
            offset += count * NODE_SIZE
            try:
                _check_tree(nodes, tree_index)
            except RecursionError:
                raise CorruptModel(f'Tree {tree_index} is nested too deeply')
            trees.append(tuple(nodes))

        n_leaves = sum(1 for tree in trees for n in tree if n.is_leaf)
        table_bytes = n_leaves * n_classes * 2
        if len(data) - offset != table_bytes:
            raise CorruptModel(f'Probability table is {len(data) - offset} bytes, expected {table_bytes}')
        table = np.frombuffer(data, dtype='<u2', offset=offset).reshape(n_leaves, n_classes)
        for tree in trees:
            for n in tree:
                if n.is_leaf and (n.link >= n_leaves or n.majority >= n_classes):
                    raise CorruptModel(f'Leaf points at probability row {n.link} of {n_leaves}')
        sums = table.astype(np.int64).sum(axis=1)
        if np.any(np.abs(sums - Q15_ONE) > n_classes):
            raise CorruptModel('Probability rows do not sum to one')
        return cls(data=data, feature_version=feature_version, n_classes=n_classes,
                   trees=tuple(trees), prob_table=table.astype(np.int64), format_version=format_version)


def _check_tree(nodes: List[CompactNode], tree_index: int) -> None:
    """Every right-child link must start exactly where the left subtree ends"""
    def subtree_end(i: int) -> int:
        node = nodes[i]
        if node.is_leaf:
            return i + 1
        if not np.isfinite(node.threshold):
            raise CorruptModel(f'Tree {tree_index} node {i} has a non-finite threshold')
        if i + 1 >= len(nodes) or not (i + 1 < node.link < len(nodes)):
            raise CorruptModel(f'Tree {tree_index} node {i} links outside its node array')
        if subtree_end(i + 1) != node.link:
            raise CorruptModel(f'Tree {tree_index} node {i} right link does not follow its left subtree')
        return subtree_end(node.link)

    if subtree_end(0) != len(nodes):
        raise CorruptModel(f'Tree {tree_index} has unreachable nodes')


def compile_model(model: ForestModel) -> CompactModel:
    """Encode a forest into the compact binary layout"""
    if tuple(model.label_codes) != LABEL_CODES:
        raise InvalidSpec(f'Compact models need label codes {LABEL_CODES}')
    if model.n_features >= LEAF:
        raise InvalidSpec(f'Feature indices must fit below {LEAF}')

    chunks = [HEADER.pack(MAGIC, FORMAT_VERSION, model.feature_version, len(model.trees), N_CLASSES, 0)]
    rows: List[np.ndarray] = []
    for tree in model.trees:
        nodes: List[Optional[CompactNode]] = []
        _flatten(tree, nodes, rows)
        chunks.append(COUNT.pack(len(nodes)))
        chunks.extend(_pack_node(node) for node in nodes)
    size = sum(len(chunk) for chunk in chunks) + len(rows) * N_CLASSES * 2
    if size > MAX_MODEL_BYTES:
        raise ModelTooLarge(f'Compact model would be {size} bytes, limit is {MAX_MODEL_BYTES}',
                            details={'size': size, 'limit': MAX_MODEL_BYTES})
    chunks.append(np.asarray(rows, dtype='<u2').tobytes())
    compact = CompactModel.from_bytes(b''.join(chunks))
    logger.info(f"✅ Compiled {compact.n_trees} trees into {compact.size} bytes ({compact.n_leaves} leaves)")
    return compact


def _rebuild(nodes: Tuple[CompactNode, ...], table: np.ndarray, index: int = 0) -> TreeNode:
    node = nodes[index]
    if node.is_leaf:
        return LeafNode(class_counts=tuple(int(v) for v in table[node.link]))
    return InternalNode(
        feature_index=node.feature,
        threshold=node.threshold,
        left=_rebuild(nodes, table, index + 1),
        right=_rebuild(nodes, table, node.link),
    )


def decode_model(compact: CompactModel, n_features: int = N_FEATURES) -> ForestModel:
    """Forest whose leaf counts are the quantised Q1.15 rows"""
    trees = [_rebuild(tree, compact.prob_table) for tree in compact.trees]
    return ForestModel(
        trees=trees,
        n_estimators=len(trees),
        max_depth=max(1, max(tree_depth(tree) for tree in trees)),
        feature_version=compact.feature_version,
        label_codes=LABEL_CODES,
        rng_seed=0,
        n_features=n_features,
    )


class EdgeRuntime:
    """
    Inference over a parsed compact model with preallocated buffers.

    After construction, `infer_into` only writes into the runtime's own
    accumulator and probability arrays.
    """

    def __init__(self, compact: CompactModel):
        self.compact = compact
        features, thresholds, links, roots = [], [], [], []
        for tree in compact.trees:
            base = len(features)
            roots.append(base)
            for node in tree:
                features.append(node.feature)
                thresholds.append(node.threshold)
                links.append(node.link if node.is_leaf else base + node.link)
        self._features = features
        self._thresholds = thresholds
        self._links = links
        self._roots = roots
        self._rows = [np.array(row, dtype=np.int64) for row in compact.prob_table]
        self._scale = float(Q15_ONE * compact.n_trees)
        self._accumulator = np.zeros(compact.n_classes, dtype=np.int64)
        self.probabilities = np.zeros(compact.n_classes, dtype=np.float64)
        self.min_width = compact.max_feature_index + 1

    def infer_into(self, values: np.ndarray) -> int:
        """Label code for one feature row; probabilities land in self.probabilities"""
        accumulator = self._accumulator
        accumulator.fill(0)
        features, thresholds, links = self._features, self._thresholds, self._links
        rows = self._rows
        for node in self._roots:
            feature = features[node]
            while feature != LEAF:
                if values[feature] <= thresholds[node]:
                    node += 1
                else:
                    node = links[node]
                feature = features[node]
            np.add(accumulator, rows[links[node]], out=accumulator)
        np.divide(accumulator, self._scale, out=self.probabilities)
        return int(accumulator.argmax())

    def infer_batch(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] < self.min_width:
            raise ShapeMismatch(f'Model reads feature {self.min_width - 1}, rows have {X.shape[1]} columns')
        labels = np.empty(X.shape[0], dtype=np.int64)
        probabilities = np.empty((X.shape[0], self.compact.n_classes))
        for i, row in enumerate(X):
            labels[i] = self.infer_into(row)
            probabilities[i] = self.probabilities
        return labels, probabilities


@lru_cache(maxsize=8)
def runtime_for(compact: CompactModel) -> EdgeRuntime:
    return EdgeRuntime(compact)


def infer(compact: CompactModel, x: Union[FeatureVector, np.ndarray]) -> Tuple[HydrationLabel, np.ndarray]:
    if isinstance(x, FeatureVector):
        if x.feature_version != compact.feature_version:
            raise VersionMismatch(
                f'Feature version {x.feature_version} does not match model version {compact.feature_version}')
        values = x.values
    else:
        values = np.asarray(x, dtype=np.float64)
    runtime = runtime_for(compact)
    if values.shape[0] < runtime.min_width:
        raise ShapeMismatch(f'Model reads feature {runtime.min_width - 1}, vector has {values.shape[0]}')
    label = runtime.infer_into(values)
    return HydrationLabel(label), runtime.probabilities.copy()


@dataclass
class ArgmaxAudit:
    n_rows: int
    disagreements: List[int] = field(default_factory=list)
    max_probability_error: float = 0.0

    @property
    def agreement_rate(self) -> float:
        return 1.0 - len(self.disagreements) / self.n_rows if self.n_rows else 1.0

    def to_dict(self) -> Dict:
        return {
            'n_rows': self.n_rows,
            'agreement_rate': self.agreement_rate,
            'disagreements': self.disagreements,
            'max_probability_error': self.max_probability_error,
        }


def audit_argmax(model: ForestModel, compact: CompactModel, X: np.ndarray) -> ArgmaxAudit:
    """Rows whose label changes between the float forest and the quantised model"""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    reference = predict_proba(model, X)
    labels, probabilities = runtime_for(compact).infer_batch(X)
    flipped = np.flatnonzero(labels != np.argmax(reference, axis=1)).tolist()
    audit = ArgmaxAudit(
        n_rows=X.shape[0],
        disagreements=flipped,
        max_probability_error=float(np.max(np.abs(probabilities - reference))) if X.shape[0] else 0.0,
    )
    if flipped:
        logger.warning(f"⚠️ Quantisation flips the label on {len(flipped)} of {audit.n_rows} rows")
    else:
        logger.info(f"✅ Quantised model agrees with the forest on all {audit.n_rows} rows")
    return audit
