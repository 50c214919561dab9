"""
Domain types shared across the toolkit and the empirical objects built from
raw tables (confusion matrices, per-group counts).

Segment indices are 0-based and follow the Taxonomy order. Missing segment
labels are stored as -1 in the integer columns.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DuplicateImageId,
    EmptyRow,
    EmptyTable,
    InvalidModel,
    InvalidTable,
    InvalidTaxonomy,
    MissingLabel,
    UnknownSegment,
)

logger = logging.getLogger(__name__)

MISSING = -1
DEFAULT_TOLERANCE = 1e-9
TAU_TOLERANCE = 1e-12


def _frozen(values: Any, dtype=float, ndim: Optional[int] = None) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidTable(f"Expected a {ndim}-dimensional array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _segment_column(values: Optional[Sequence[int]], n: int) -> np.ndarray:
    if values is None:
        return _frozen(np.full(n, MISSING), dtype=np.int64)
    return _frozen(values, dtype=np.int64, ndim=1)


@dataclass(frozen=True)
class Taxonomy:
    """A named attribute and its ordered segments"""
    attribute_name: str
    segments: Tuple[str, ...]

    def __post_init__(self):
        segments = tuple(self.segments)
        object.__setattr__(self, 'segments', segments)
        if len(segments) < 2:
            raise InvalidTaxonomy(f"A taxonomy needs at least 2 segments, got {len(segments)}")
        if any(not isinstance(s, str) or not s for s in segments):
            raise InvalidTaxonomy("Segment names must be non-empty strings")
        if len(set(segments)) != len(segments):
            duplicates = sorted({s for s in segments if segments.count(s) > 1})
            raise InvalidTaxonomy(f"Duplicate segment names: {duplicates}")

    @property
    def K(self) -> int:
        return len(self.segments)

    def index_of(self, name: str) -> int:
        try:
            return self.segments.index(name)
        except ValueError:
            raise UnknownSegment(f"Unknown segment '{name}' for attribute '{self.attribute_name}'",
                                 segment=name) from None

    def name_of(self, index: int) -> str:
        return self.segments[index]

    def to_dict(self) -> Dict[str, Any]:
        return {'attribute_name': self.attribute_name, 'segments': list(self.segments)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Taxonomy':
        return cls(attribute_name=data.get('attribute_name', 'attribute'), segments=tuple(data['segments']))


@dataclass(frozen=True)
class SampleRow:
    image_id: str
    identity_id: str
    true_segment: Optional[int]
    predicted_segment: Optional[int]


@dataclass(frozen=True, eq=False)
class SampleTable:
    """Per-image records stored column-wise"""
    image_ids: Tuple[str, ...]
    identity_ids: Tuple[str, ...]
    true_segments: np.ndarray
    predicted_segments: np.ndarray
    num_segments: int

    def __post_init__(self):
        object.__setattr__(self, 'image_ids', tuple(self.image_ids))
        object.__setattr__(self, 'identity_ids', tuple(self.identity_ids))
        n = len(self.image_ids)
        object.__setattr__(self, 'true_segments', _segment_column(self.true_segments, n))
        object.__setattr__(self, 'predicted_segments', _segment_column(self.predicted_segments, n))

        if len(self.identity_ids) != n or len(self.true_segments) != n or len(self.predicted_segments) != n:
            raise InvalidTable("All SampleTable columns must have the same length")
        if len(set(self.image_ids)) != n:
            seen = set()
            duplicate = next(i for i in self.image_ids if i in seen or seen.add(i))
            raise DuplicateImageId(f"Duplicate image id '{duplicate}'", record=duplicate)
        for column in (self.true_segments, self.predicted_segments):
            bad = (column < MISSING) | (column >= self.num_segments)
            if bad.any():
                row = int(np.flatnonzero(bad)[0])
                raise InvalidTable(f"Segment index {int(column[row])} out of range [0, {self.num_segments})",
                                   record=self.image_ids[row])

    @classmethod
    def from_rows(cls, rows: Sequence[SampleRow], num_segments: int) -> 'SampleTable':
        def seg(v):
            return MISSING if v is None else int(v)
        return cls(
            image_ids=[r.image_id for r in rows],
            identity_ids=[r.identity_id for r in rows],
            true_segments=[seg(r.true_segment) for r in rows],
            predicted_segments=[seg(r.predicted_segment) for r in rows],
            num_segments=num_segments,
        )

    def __len__(self) -> int:
        return len(self.image_ids)

    def rows(self) -> Iterator[SampleRow]:
        for i, image_id in enumerate(self.image_ids):
            t = int(self.true_segments[i])
            p = int(self.predicted_segments[i])
            yield SampleRow(image_id, self.identity_ids[i],
                            None if t == MISSING else t,
                            None if p == MISSING else p)

    @property
    def has_true_labels(self) -> bool:
        return bool(len(self)) and bool((self.true_segments != MISSING).all())

    @property
    def has_predictions(self) -> bool:
        return bool(len(self)) and bool((self.predicted_segments != MISSING).all())

    def require_labels(self, true: bool = False, predicted: bool = False) -> None:
        """Raise MissingLabel naming the first row lacking a required label"""
        if true:
            self._require(self.true_segments, 'true_segment')
        if predicted:
            self._require(self.predicted_segments, 'predicted_segment')

    def _require(self, column: np.ndarray, name: str) -> None:
        missing = np.flatnonzero(column == MISSING)
        if missing.size:
            row = int(missing[0])
            raise MissingLabel(f"Row '{self.image_ids[row]}' has no {name}",
                               record=self.image_ids[row], missing_rows=int(missing.size))

    def with_predictions(self, predicted: Sequence[int]) -> 'SampleTable':
        return SampleTable(self.image_ids, self.identity_ids, self.true_segments, predicted, self.num_segments)

    def with_true_segments(self, true_segments: Sequence[int]) -> 'SampleTable':
        return SampleTable(self.image_ids, self.identity_ids, true_segments, self.predicted_segments,
                           self.num_segments)

    def select(self, mask_or_index: np.ndarray) -> 'SampleTable':
        index = np.asarray(mask_or_index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return SampleTable(
            image_ids=[self.image_ids[i] for i in index],
            identity_ids=[self.identity_ids[i] for i in index],
            true_segments=self.true_segments[index],
            predicted_segments=self.predicted_segments[index],
            num_segments=self.num_segments,
        )

    def identity_index(self) -> Tuple[List[str], np.ndarray]:
        """Sorted distinct identity ids and, per row, the position of its identity"""
        identities, inverse = np.unique(np.asarray(self.identity_ids, dtype=object).astype(str),
                                        return_inverse=True)
        return [str(i) for i in identities], inverse.astype(np.int64)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Row-stochastic matrix of P(predicted = b | true = a)"""
    entries: np.ndarray
    row_counts: Optional[np.ndarray] = None
    tolerance: float = field(default=DEFAULT_TOLERANCE, repr=False)

    def __post_init__(self):
        entries = _frozen(self.entries, dtype=float)
        object.__setattr__(self, 'entries', entries)
        if self.row_counts is not None:
            object.__setattr__(self, 'row_counts', _frozen(self.row_counts, dtype=np.int64, ndim=1))
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1] or entries.shape[0] < 1:
            raise InvalidModel(f"Confusion matrix must be square, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise InvalidModel("Confusion matrix has non-finite entries")
        tol = self.tolerance
        if entries.min() < -tol or entries.max() > 1 + tol:
            raise InvalidModel("Confusion matrix entries must lie in [0, 1]")
        row_sums = entries.sum(axis=1)
        bad = np.flatnonzero(np.abs(row_sums - 1.0) > tol)
        if bad.size:
            raise InvalidModel(f"Confusion matrix rows {bad.tolist()} do not sum to 1",
                               row_sums=row_sums[bad].tolist())
        if self.row_counts is not None and len(self.row_counts) != entries.shape[0]:
            raise InvalidModel("row_counts length does not match the matrix size")

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'entries': self.entries.tolist(),
            'row_counts': None if self.row_counts is None else self.row_counts.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], tolerance: float = DEFAULT_TOLERANCE) -> 'ConfusionMatrix':
        return cls(entries=np.asarray(data['entries'], dtype=float), row_counts=data.get('row_counts'),
                   tolerance=tolerance)


@dataclass(frozen=True, eq=False)
class GroupModel:
    """Prior pi, true success rates p and confusion C, with tau = C^T pi"""
    pi: np.ndarray
    p: np.ndarray
    C: ConfusionMatrix
    tau: np.ndarray
    tolerance: float = field(default=DEFAULT_TOLERANCE, repr=False)

    def __post_init__(self):
        for name in ('pi', 'p', 'tau'):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype=float, ndim=1))
        K = self.C.K
        if len(self.pi) != K or len(self.p) != K or len(self.tau) != K:
            raise InvalidModel(f"pi, p and tau must all have length K={K}")
        if not validate_simplex(self.pi, self.tolerance):
            raise InvalidModel("pi is not on the probability simplex", pi=self.pi.tolist())
        if not np.all(np.isfinite(self.p)) or self.p.min() < 0 or self.p.max() > 1:
            raise InvalidModel("p entries must lie in [0, 1]", p=self.p.tolist())
        expected = self.C.entries.T @ self.pi
        if np.max(np.abs(expected - self.tau)) > TAU_TOLERANCE:
            raise InvalidModel("tau does not match C^T pi", tau=self.tau.tolist())

    @classmethod
    def create(cls, pi: Sequence[float], p: Sequence[float], C: Any,
               tolerance: float = DEFAULT_TOLERANCE) -> 'GroupModel':
        """Build a model from (pi, p, C), deriving tau"""
        confusion = C if isinstance(C, ConfusionMatrix) else ConfusionMatrix(np.asarray(C, dtype=float),
                                                                             tolerance=tolerance)
        pi_arr = np.asarray(pi, dtype=float)
        return cls(pi=pi_arr, p=np.asarray(p, dtype=float), C=confusion,
                   tau=confusion.entries.T @ pi_arr, tolerance=tolerance)

    @property
    def K(self) -> int:
        return self.C.K

    def to_dict(self) -> Dict[str, Any]:
        return {'pi': self.pi.tolist(), 'p': self.p.tolist(), 'C': self.C.entries.tolist(),
                'tau': self.tau.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'GroupModel':
        return cls.create(data['pi'], data['p'], data['C'])


@dataclass(frozen=True, eq=False)
class BinaryTrialTable:
    """Per-identity performance indicator Y with estimated (and optionally true) group"""
    y: np.ndarray
    g_hat: np.ndarray
    num_segments: int
    g_true: Optional[np.ndarray] = None
    identity_ids: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        y = _frozen(self.y, dtype=np.int8, ndim=1)
        g_hat = _frozen(self.g_hat, dtype=np.int64, ndim=1)
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'g_hat', g_hat)
        if len(y) != len(g_hat):
            raise InvalidTable("y and g_hat must have the same length")
        if y.size and (y.min() < 0 or y.max() > 1):
            raise InvalidTable("y must be a bit (0 or 1)")
        if g_hat.size and (g_hat.min() < 0 or g_hat.max() >= self.num_segments):
            raise InvalidTable(f"g_hat values must lie in [0, {self.num_segments})")
        if self.g_true is not None:
            g_true = _frozen(self.g_true, dtype=np.int64, ndim=1)
            object.__setattr__(self, 'g_true', g_true)
            if len(g_true) != len(y):
                raise InvalidTable("g_true must have the same length as y")
            if g_true.size and (g_true.min() < MISSING or g_true.max() >= self.num_segments):
                raise InvalidTable(f"g_true values must lie in [0, {self.num_segments})")
        if self.identity_ids is not None:
            object.__setattr__(self, 'identity_ids', tuple(self.identity_ids))
            if len(self.identity_ids) != len(y):
                raise InvalidTable("identity_ids must have the same length as y")

    def __len__(self) -> int:
        return len(self.y)


def validate_simplex(v: Sequence[float], tol: float = DEFAULT_TOLERANCE) -> bool:
    """True iff all entries are >= -tol and the entries sum to 1 within tol"""
    arr = np.asarray(v, dtype=float)
    if arr.size == 0 or not np.all(np.isfinite(arr)):
        return False
    return bool(arr.min() >= -tol and abs(arr.sum() - 1.0) <= tol)


def empirical_confusion(table: SampleTable, taxonomy: Taxonomy) -> ConfusionMatrix:
    """Row-normalised counts of (true, predicted) pairs; no smoothing"""
    K = taxonomy.K
    if table.num_segments != K:
        raise InvalidTable(f"Table has {table.num_segments} segments, taxonomy has {K}")
    table.require_labels(true=True, predicted=True)

    counts = np.bincount(table.true_segments * K + table.predicted_segments, minlength=K * K).reshape(K, K)
    row_counts = counts.sum(axis=1)
    empty = np.flatnonzero(row_counts == 0)
    if empty.size:
        raise EmptyRow(f"No rows with true segment {[taxonomy.name_of(int(g)) for g in empty]}",
                       groups=empty.tolist())

    entries = counts / row_counts[:, None]
    logger.debug(f"Empirical confusion over {len(table)} rows, K={K}")
    return ConfusionMatrix(entries=entries, row_counts=row_counts)


def group_counts(table: BinaryTrialTable, K: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per estimated group: number of identities and number with Y = 1"""
    if len(table) == 0:
        raise EmptyTable("Trial table is empty")
    counts = np.bincount(table.g_hat, minlength=K).astype(np.int64)
    successes = np.bincount(table.g_hat[table.y == 1], minlength=K).astype(np.int64)
    return counts, successes
