"""
Demographic attribute heads over precomputed embeddings.

Heads are one-vs-rest support vector machines trained on the weighted,
L2-regularised squared hinge loss, either in the primal (linear) or over the
kernel expansion with the full Gram matrix (rbf). The nearest-neighbour
labelling function and the per-identity majority vote share the same
lowest-index tie rule, and every tie is counted.
"""

import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .core_model import SampleTable, Taxonomy
from .errors import (
    DimensionMismatch,
    DuplicateImageId,
    EmptyClass,
    EmptyReference,
    EmptyTable,
    InvalidTable,
    KernelTooLarge,
    MalformedDocument,
    NoConvergenceWarning,
    SingleClass,
    ValidationError,
    ZeroVariance,
)

logger = logging.getLogger(__name__)

HEAD_DOCUMENT_VERSION = 1
DEFAULT_REGULARIZATION = 1.0
DEFAULT_TOLERANCE = 1e-6
DEFAULT_MAX_ITERATIONS = 10000
RBF_MAX_SAMPLES = 50000
KNN_BATCH_SIZE = 1024
SUPPORT_THRESHOLD = 1e-10


class HeadKind(Enum):
    LINEAR = "linear"
    RBF = "rbf"


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """Encoder outputs, one row per image"""
    image_ids: Tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'image_ids', tuple(str(i) for i in self.image_ids))
        matrix = np.array(self.matrix, dtype=float, copy=True)
        if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
            raise InvalidTable(f"Embeddings must be a non-empty I x D matrix, got shape {matrix.shape}")
        if matrix.shape[0] != len(self.image_ids):
            raise InvalidTable(f"{len(self.image_ids)} image ids for {matrix.shape[0]} embedding rows")
        if not np.all(np.isfinite(matrix)):
            row = int(np.flatnonzero(~np.all(np.isfinite(matrix), axis=1))[0])
            raise InvalidTable(f"Embedding of '{self.image_ids[row]}' has non-finite entries",
                               record=self.image_ids[row])
        if len(set(self.image_ids)) != len(self.image_ids):
            seen = set()
            duplicate = next(i for i in self.image_ids if i in seen or seen.add(i))
            raise DuplicateImageId(f"Duplicate image id '{duplicate}' in embeddings", record=duplicate)
        matrix.setflags(write=False)
        object.__setattr__(self, 'matrix', matrix)

    @property
    def I(self) -> int:
        return self.matrix.shape[0]

    @property
    def D(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.I

    def select(self, index: Sequence[int]) -> 'EmbeddingSet':
        index = np.asarray(index, dtype=np.int64)
        return EmbeddingSet([self.image_ids[i] for i in index], self.matrix[index])

    def align(self, image_ids: Sequence[str]) -> 'EmbeddingSet':
        """Rows reordered to follow ``image_ids``; every id must be present"""
        position = {image_id: i for i, image_id in enumerate(self.image_ids)}
        missing = [i for i in image_ids if i not in position]
        if missing:
            raise InvalidTable(f"{len(missing)} image ids have no embedding, first '{missing[0]}'",
                               record=missing[0])
        return self.select([position[i] for i in image_ids])


@dataclass(frozen=True, eq=False)
class SvmHead:
    """Trained one-vs-rest machines, one per segment.

    Linear heads keep ``weights`` (K x D); rbf heads keep ``dual_coefficients``
    (K x S) over ``support_vectors`` (S x D), the rows ``support_indices`` of
    the training embeddings.
    """
    kind: HeadKind
    num_segments: int
    dimension: int
    biases: np.ndarray
    class_weights: np.ndarray
    regularization: float = DEFAULT_REGULARIZATION
    weights: Optional[np.ndarray] = None
    dual_coefficients: Optional[np.ndarray] = None
    support_vectors: Optional[np.ndarray] = None
    support_indices: Optional[np.ndarray] = None
    gamma: Optional[float] = None
    taxonomy: Optional[Taxonomy] = None
    converged: bool = True
    objective_histories: Tuple[np.ndarray, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.regularization <= 0:
            raise ValidationError(f"Regularization must be > 0, got {self.regularization}")
        if len(self.biases) != self.num_segments or len(self.class_weights) != self.num_segments:
            raise ValidationError("Head needs one bias and one class weight per segment")
        if self.kind is HeadKind.LINEAR:
            if self.weights is None or np.shape(self.weights) != (self.num_segments, self.dimension):
                raise ValidationError(f"Linear head needs a {self.num_segments} x {self.dimension} weight matrix")
        else:
            if self.gamma is None or self.gamma <= 0:
                raise ValidationError(f"rbf head needs gamma > 0, got {self.gamma}")
            if self.support_vectors is None or self.dual_coefficients is None:
                raise ValidationError("rbf head needs support vectors and dual coefficients")
            if np.shape(self.dual_coefficients) != (self.num_segments, len(self.support_vectors)):
                raise ValidationError("Dual coefficients must be K x (number of support vectors)")

    @property
    def K(self) -> int:
        return self.num_segments

    def decision_function(self, matrix: np.ndarray) -> np.ndarray:
        """I x K decision values"""
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[1] != self.dimension:
            raise DimensionMismatch(f"Head expects D={self.dimension}, embeddings have shape {matrix.shape}")
        if self.kind is HeadKind.LINEAR:
            return matrix @ self.weights.T + self.biases
        if len(self.support_vectors) == 0:
            return np.broadcast_to(self.biases, (matrix.shape[0], self.K)).copy()
        kernel = rbf_kernel(matrix, self.support_vectors, self.gamma)
        return kernel @ self.dual_coefficients.T + self.biases


@dataclass(frozen=True, eq=False)
class Prediction:
    """Labels from a head or labelling function, with tie diagnostics"""
    table: SampleTable
    ties: int
    tie_rows: np.ndarray = field(repr=False)
    decision_values: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass(frozen=True)
class IdentityVote:
    label: int
    fraction: float
    tie: bool


# -- head training ------------------------------------------------------------

def _as_matrix(X: Union[EmbeddingSet, np.ndarray]) -> np.ndarray:
    return X.matrix if isinstance(X, EmbeddingSet) else np.asarray(X, dtype=float)


def rbf_gamma(X: Union[EmbeddingSet, np.ndarray]) -> float:
    """gamma = 1 / (D * Var(X)), the variance pooled over all I * D entries"""
    matrix = _as_matrix(X)
    if matrix.size < 2:
        raise ZeroVariance("Need at least 2 embedding entries to estimate their variance")
    variance = float(np.var(matrix))
    if variance <= 0:
        raise ZeroVariance("Embeddings have zero variance")
    return 1.0 / (matrix.shape[1] * variance)


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(A, B, 'sqeuclidean'))


def balanced_class_weights(labels: Sequence[int], K: int) -> np.ndarray:
    """(1/K) / frequency per class; for K = 2 this is 0.5 / frequency"""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise EmptyClass("No labels to weight")
    counts = np.bincount(labels, minlength=K)[:K]
    absent = np.flatnonzero(counts == 0)
    if absent.size:
        raise EmptyClass(f"Classes {absent.tolist()} have no samples", classes=absent.tolist())
    frequencies = counts / labels.size
    return (1.0 / K) / frequencies


def _fit_machine(objective, n_params: int, tol: float, max_iter: int) -> Tuple[np.ndarray, np.ndarray, bool]:
    """Minimise a smooth objective from zero with L-BFGS-B, recording the objective per iteration"""
    x0 = np.zeros(n_params)
    history = [objective(x0)[0]]

    def record(xk):
        history.append(objective(xk)[0])

    result = minimize(objective, x0, jac=True, method='L-BFGS-B', callback=record,
                      options={'maxiter': max_iter, 'ftol': tol, 'gtol': 1e-12})
    converged = bool(result.success)
    if not converged:
        logger.debug(f"L-BFGS-B stopped after {result.nit} iterations: {result.message}")
    return result.x, np.asarray(history), converged


def _linear_objective(X: np.ndarray, y: np.ndarray, sample_weights: np.ndarray, C: float):
    def objective(theta):
        w, b = theta[:-1], theta[-1]
        hinge = np.maximum(0.0, 1.0 - y * (X @ w + b))
        value = 0.5 * w @ w + C * np.sum(sample_weights * hinge ** 2)
        coefficient = -2.0 * C * sample_weights * hinge * y
        gradient = np.concatenate([w + X.T @ coefficient, [coefficient.sum()]])
        return value, gradient
    return objective


def _kernel_objective(gram: np.ndarray, y: np.ndarray, sample_weights: np.ndarray, C: float):
    def objective(theta):
        beta, b = theta[:-1], theta[-1]
        k_beta = gram @ beta
        hinge = np.maximum(0.0, 1.0 - y * (k_beta + b))
        value = 0.5 * beta @ k_beta + C * np.sum(sample_weights * hinge ** 2)
        coefficient = -2.0 * C * sample_weights * hinge * y
        gradient = np.concatenate([k_beta + gram @ coefficient, [coefficient.sum()]])
        return value, gradient
    return objective


def train_head(X: Union[EmbeddingSet, np.ndarray], labels: Sequence[int], kind: Union[HeadKind, str] = HeadKind.RBF,
               class_weights: Union[str, Sequence[float], None] = 'balanced',
               regularization: float = DEFAULT_REGULARIZATION, num_segments: Optional[int] = None,
               taxonomy: Optional[Taxonomy] = None, tol: float = DEFAULT_TOLERANCE,
               max_iter: int = DEFAULT_MAX_ITERATIONS, rbf_max_samples: int = RBF_MAX_SAMPLES) -> SvmHead:
    """Train one squared-hinge machine per segment (one-vs-rest).

    Args:
        X: training embeddings
        labels: segment index per row
        kind: 'linear' or 'rbf'
        class_weights: 'balanced', None for unit weights, or an explicit K-vector
        regularization: C, the weight of the loss term against the L2 penalty
    """
    kind = HeadKind(kind)
    matrix = _as_matrix(X)
    labels = np.asarray(labels, dtype=np.int64)
    if matrix.ndim != 2 or len(labels) != matrix.shape[0]:
        raise DimensionMismatch(f"{len(labels)} labels for embeddings of shape {matrix.shape}")
    if regularization <= 0:
        raise ValidationError(f"Regularization must be > 0, got {regularization}")
    K = num_segments or (taxonomy.K if taxonomy is not None else int(labels.max()) + 1)
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise InvalidTable(f"Labels must lie in [0, {K})")
    present = np.unique(labels)
    if present.size < 2:
        raise SingleClass(f"Training needs at least 2 classes, got {present.tolist()}")
    I, D = matrix.shape
    if kind is HeadKind.RBF and I > rbf_max_samples:
        raise KernelTooLarge(f"rbf training on {I} samples exceeds the cap of {rbf_max_samples}",
                             samples=I, cap=rbf_max_samples)

    if isinstance(class_weights, str):
        if class_weights != 'balanced':
            raise ValidationError(f"Unknown class weighting '{class_weights}'")
        weights = balanced_class_weights(labels, K)
    elif class_weights is None:
        weights = np.ones(K)
    else:
        weights = np.asarray(class_weights, dtype=float)
        if weights.shape != (K,) or (weights <= 0).any():
            raise ValidationError(f"Class weights must be {K} positive values")
    sample_weights = weights[labels]

    gamma = None
    gram = None
    if kind is HeadKind.RBF:
        gamma = rbf_gamma(matrix)
        gram = rbf_kernel(matrix, matrix, gamma)

    parameters = np.zeros((K, D if kind is HeadKind.LINEAR else I))
    biases = np.zeros(K)
    histories = []
    converged = True
    for k in range(K):
        y = np.where(labels == k, 1.0, -1.0)
        if kind is HeadKind.LINEAR:
            objective = _linear_objective(matrix, y, sample_weights, regularization)
        else:
            objective = _kernel_objective(gram, y, sample_weights, regularization)
        theta, history, ok = _fit_machine(objective, parameters.shape[1] + 1, tol, max_iter)
        parameters[k], biases[k] = theta[:-1], theta[-1]
        histories.append(history)
        converged &= ok
        logger.debug(f"Machine {k}: objective {history[0]:.6g} -> {history[-1]:.6g} "
                     f"in {len(history) - 1} iterations")

    if not converged:
        warnings.warn(f"{kind.value} head did not reach the stopping rule within {max_iter} iterations",
                      NoConvergenceWarning)
        logger.warning(f"{kind.value} head kept without full convergence")

    head_arrays: Dict[str, Any] = {}
    if kind is HeadKind.LINEAR:
        head_arrays['weights'] = parameters
    else:
        scale = np.max(np.abs(parameters), initial=0.0)
        support = np.flatnonzero(np.any(np.abs(parameters) > SUPPORT_THRESHOLD * max(scale, 1e-300), axis=0))
        head_arrays['support_indices'] = support
        head_arrays['support_vectors'] = matrix[support]
        head_arrays['dual_coefficients'] = parameters[:, support]
        logger.debug(f"rbf head keeps {support.size} of {I} training points as support vectors")

    head = SvmHead(kind=kind, num_segments=K, dimension=D, biases=biases, class_weights=weights,
                   regularization=regularization, gamma=gamma, taxonomy=taxonomy, converged=converged,
                   objective_histories=tuple(histories), **head_arrays)
    logger.info(f"Trained {kind.value} head: K={K}, I={I}, D={D}, C={regularization:g}")
    return head


# -- labelling ----------------------------------------------------------------

def _argmax_lowest(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise argmax (first maximum wins) and a mask of rows whose maximum is shared"""
    best = np.argmax(values, axis=1)
    top = values[np.arange(len(values)), best]
    tied = (values == top[:, None]).sum(axis=1) > 1
    return best, tied


def _labelled_table(image_ids: Sequence[str], predicted: np.ndarray, num_segments: int,
                    template: Optional[SampleTable]) -> SampleTable:
    if template is None:
        return SampleTable(image_ids, image_ids, None, predicted, num_segments)
    position = {image_id: i for i, image_id in enumerate(template.image_ids)}
    missing = [i for i in image_ids if i not in position]
    if missing:
        raise InvalidTable(f"Image '{missing[0]}' is not in the label table", record=missing[0])
    rows = np.array([position[i] for i in image_ids], dtype=np.int64)
    return SampleTable(
        image_ids=image_ids,
        identity_ids=[template.identity_ids[r] for r in rows],
        true_segments=template.true_segments[rows] if len(rows) else [],
        predicted_segments=predicted,
        num_segments=num_segments,
    )


def predict(head: SvmHead, X: EmbeddingSet, template: Optional[SampleTable] = None) -> Prediction:
    """One-vs-rest decision: per image the segment with the largest decision value.

    ``template`` supplies identity ids and true segments by image id; without
    it every image is its own identity.
    """
    values = head.decision_function(X.matrix)
    predicted, tied = _argmax_lowest(values)
    ties = int(tied.sum())
    if ties:
        logger.warning(f"{ties} predictions had tied decision values; lowest segment index kept")
    table = _labelled_table(X.image_ids, predicted, head.K, template)
    return Prediction(table=table, ties=ties, tie_rows=np.flatnonzero(tied), decision_values=values)


def knn_label(query: EmbeddingSet, reference: EmbeddingSet, reference_labels: Sequence[int], k: int = 1,
              num_segments: Optional[int] = None, template: Optional[SampleTable] = None) -> Prediction:
    """Majority label among the k nearest references under Euclidean distance.

    Equal distances are ordered by reference position; equal votes go to the
    lowest segment index.
    """
    labels = np.asarray(reference_labels, dtype=np.int64)
    if reference.I == 0 or labels.size == 0:
        raise EmptyReference("Reference set is empty")
    if len(labels) != reference.I:
        raise DimensionMismatch(f"{len(labels)} labels for {reference.I} reference embeddings")
    if query.D != reference.D:
        raise DimensionMismatch(f"Query D={query.D} differs from reference D={reference.D}")
    if not 1 <= k <= reference.I:
        raise ValidationError(f"k must lie in [1, {reference.I}], got {k}")
    K = num_segments or int(labels.max()) + 1

    predicted = np.empty(query.I, dtype=np.int64)
    tied = np.zeros(query.I, dtype=bool)
    for start in range(0, query.I, KNN_BATCH_SIZE):
        block = query.matrix[start:start + KNN_BATCH_SIZE]
        distances = cdist(block, reference.matrix, 'euclidean')
        nearest = np.argsort(distances, axis=1, kind='stable')[:, :k]
        votes = np.zeros((len(block), K), dtype=np.int64)
        np.add.at(votes, (np.repeat(np.arange(len(block)), k), labels[nearest].ravel()), 1)
        predicted[start:start + len(block)], tied[start:start + len(block)] = _argmax_lowest(votes)

    ties = int(tied.sum())
    if ties:
        logger.warning(f"{ties} k-NN votes were tied; lowest segment index kept")
    table = _labelled_table(query.image_ids, predicted, K, template)
    return Prediction(table=table, ties=ties, tie_rows=np.flatnonzero(tied))


def majority_vote_identity(table: SampleTable) -> Dict[str, IdentityVote]:
    """Per identity: most frequent predicted segment, its share, and whether the maximum was tied"""
    if len(table) == 0:
        raise EmptyTable("Cannot vote over an empty table")
    table.require_labels(predicted=True)
    K = table.num_segments
    identities, inverse = table.identity_index()
    counts = np.bincount(inverse * K + table.predicted_segments,
                         minlength=len(identities) * K).reshape(len(identities), K)
    best, tied = _argmax_lowest(counts)
    fractions = counts[np.arange(len(identities)), best] / counts.sum(axis=1)
    if tied.any():
        logger.info(f"{int(tied.sum())} identities have a tied majority; lowest segment index kept")
    return {identity: IdentityVote(int(best[i]), float(fractions[i]), bool(tied[i]))
            for i, identity in enumerate(identities)}


def derive_identity_labels(table: SampleTable) -> Tuple[SampleTable, Dict[str, IdentityVote]]:
    """Set every image's true segment to its identity's majority-vote prediction"""
    votes = majority_vote_identity(table)
    true_segments = [votes[identity].label for identity in table.identity_ids]
    return table.with_true_segments(true_segments), votes


def balanced_subset(table: SampleTable, taxonomy: Taxonomy, per_segment: int,
                    max_images_per_identity: Optional[int] = None, seed: int = 0) -> SampleTable:
    """Equal number of images per true segment, optionally capped per identity.

    Selection is a seeded shuffle; the subset keeps the table's row order.
    """
    table.require_labels(true=True)
    if per_segment < 1:
        raise ValidationError(f"per_segment must be >= 1, got {per_segment}")
    rng = np.random.default_rng(seed)
    chosen: List[np.ndarray] = []
    for g in range(taxonomy.K):
        rows = rng.permutation(np.flatnonzero(table.true_segments == g))
        if max_images_per_identity is not None:
            taken: Dict[str, int] = {}
            keep = []
            for r in rows:
                identity = table.identity_ids[r]
                if taken.get(identity, 0) < max_images_per_identity:
                    taken[identity] = taken.get(identity, 0) + 1
                    keep.append(r)
            rows = np.asarray(keep, dtype=np.int64)
        if len(rows) < per_segment:
            raise EmptyClass(f"Segment '{taxonomy.name_of(g)}' has {len(rows)} eligible images, "
                             f"{per_segment} requested", segment=taxonomy.name_of(g), available=len(rows))
        chosen.append(rows[:per_segment])
    return table.select(np.sort(np.concatenate(chosen)))


def select_head(train: EmbeddingSet, train_labels: Sequence[int], val: EmbeddingSet, val_labels: Sequence[int],
                kind: Union[HeadKind, str] = HeadKind.RBF, regularizations: Sequence[float] = (0.1, 1.0, 10.0),
                **train_options) -> Tuple[SvmHead, Dict[float, float]]:
    """Train one head per regularization value and keep the best on validation accuracy (first wins ties)"""
    val_labels = np.asarray(val_labels, dtype=np.int64)
    scores: Dict[float, float] = {}
    best_head, best_score = None, -1.0
    for regularization in regularizations:
        head = train_head(train, train_labels, kind, regularization=regularization, **train_options)
        predicted = head.decision_function(val.matrix).argmax(axis=1)
        score = float(np.mean(predicted == val_labels))
        scores[float(regularization)] = score
        logger.info(f"C={regularization:g}: validation accuracy {score:.4f}")
        if score > best_score:
            best_head, best_score = head, score
    return best_head, scores


# -- serialization ------------------------------------------------------------

def head_to_document(head: SvmHead, embeddings_path: Optional[str] = None,
                     embeddings_sha256: Optional[str] = None) -> Dict[str, Any]:
    """Versioned JSON-ready document; rbf support vectors are referenced by row index"""
    document: Dict[str, Any] = {
        'version': HEAD_DOCUMENT_VERSION,
        'kind': head.kind.value,
        'num_segments': head.num_segments,
        'dimension': head.dimension,
        'regularization': head.regularization,
        'class_weights': head.class_weights.tolist(),
        'biases': head.biases.tolist(),
        'converged': head.converged,
        'taxonomy': None if head.taxonomy is None else head.taxonomy.to_dict(),
    }
    if head.kind is HeadKind.LINEAR:
        document['weights'] = head.weights.tolist()
    else:
        document.update({
            'gamma': head.gamma,
            'dual_coefficients': head.dual_coefficients.tolist(),
            'support_indices': head.support_indices.tolist(),
            'embeddings': {'path': embeddings_path, 'sha256': embeddings_sha256},
        })
    return document


def head_from_document(document: Dict[str, Any], embeddings: Optional[EmbeddingSet] = None) -> SvmHead:
    """Rebuild a head; rbf heads need the training embeddings the document points at"""
    try:
        version = int(document['version'])
        if version != HEAD_DOCUMENT_VERSION:
            raise MalformedDocument(f"Unsupported head document version {version}")
        kind = HeadKind(document['kind'])
        taxonomy = Taxonomy.from_dict(document['taxonomy']) if document.get('taxonomy') else None
        common = dict(
            kind=kind,
            num_segments=int(document['num_segments']),
            dimension=int(document['dimension']),
            regularization=float(document['regularization']),
            class_weights=np.asarray(document['class_weights'], dtype=float),
            biases=np.asarray(document['biases'], dtype=float),
            converged=bool(document.get('converged', True)),
            taxonomy=taxonomy,
        )
        if kind is HeadKind.LINEAR:
            return SvmHead(weights=np.asarray(document['weights'], dtype=float), **common)
        support = np.asarray(document['support_indices'], dtype=np.int64)
        dual = np.asarray(document['dual_coefficients'], dtype=float).reshape(common['num_segments'], len(support))
        gamma = float(document['gamma'])
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedDocument(f"Invalid head document: {e}") from e

    if embeddings is None:
        raise MalformedDocument("rbf head document needs its training embeddings")
    if embeddings.D != common['dimension']:
        raise DimensionMismatch(f"Head expects D={common['dimension']}, embeddings have D={embeddings.D}")
    if support.size and (support.min() < 0 or support.max() >= embeddings.I):
        raise MalformedDocument("Support indices fall outside the referenced embeddings")
    return SvmHead(dual_coefficients=dual, support_vectors=embeddings.matrix[support], support_indices=support,
                   gamma=gamma, **common)

