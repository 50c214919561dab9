"""
Readers and writers for every on-disk artifact.

Embeddings are binary (FEMB), per-image and per-identity tables are CSV with
segment names, everything structured is JSON. JSON output is deterministic:
sorted keys, two-space indent, shortest round-trip floats, NaN as null.
"""

import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticValidationError

from .core_model import (
    DEFAULT_TOLERANCE,
    MISSING,
    BinaryTrialTable,
    ConfusionMatrix,
    SampleTable,
    Taxonomy,
    validate_simplex,
)
from .errors import (
    BadMagic,
    DuplicateImageId,
    FairProbeError,
    InvalidModel,
    InvalidTable,
    MalformedDocument,
    MissingLabel,
    NonFiniteValue,
    TruncatedFile,
    UnknownSegment,
)
from .probing import EmbeddingSet
from .report import AuditReport
from .simulator import SimConfig, SimReport, SimTolerances

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

EMBEDDING_MAGIC = b'FEMB'
EMBEDDING_VERSION = 1
_HEADER = np.dtype([('version', '<u4'), ('I', '<u4'), ('D', '<u4')])


# -- JSON ---------------------------------------------------------------------

def _plain(value: Any) -> Any:
    """numpy scalars/arrays to Python values, non-finite floats to None"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def dump_json(document: Any) -> str:
    return json.dumps(_plain(document), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + '\n'


def write_json(path: PathLike, document: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_json(document), encoding='utf-8')
    logger.debug(f"Wrote {path}")


def read_json(path: PathLike) -> Any:
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise MalformedDocument(f"Invalid JSON: {e.msg}", file=str(path), line=e.lineno) from e
    except FileNotFoundError as e:
        raise MalformedDocument("File not found", file=str(path)) from e


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


# -- JSON documents -----------------------------------------------------------

class TaxonomyDocument(BaseModel):
    model_config = ConfigDict(extra='forbid')

    attribute_name: str
    segments: List[str]


class ConfusionDocument(BaseModel):
    entries: List[List[float]]
    row_counts: Optional[List[int]] = None
    taxonomy: Optional[TaxonomyDocument] = None


class PriorDocument(BaseModel):
    pi: List[float]


class ModelDocument(BaseModel):
    model_config = ConfigDict(extra='forbid')

    pi: List[float]
    p: List[float]
    C: List[List[float]]


class TolerancesDocument(BaseModel):
    model_config = ConfigDict(extra='forbid')

    se_multiplier: float = Field(4.0, gt=0)
    cov_slack: float = Field(0.05, ge=0)
    max_dropped_fraction: float = Field(0.1, ge=0, le=1)


class SimConfigDocument(BaseModel):
    model_config = ConfigDict(extra='forbid')

    model: ModelDocument
    identities_per_run: int = Field(gt=0)
    replications: int = Field(gt=0)
    seed: int = Field(0, ge=0)
    tolerances: TolerancesDocument = TolerancesDocument()
    checks: List[str] = ['prop1', 'prop2']
    label: str = ''


class SweepDocument(BaseModel):
    configs: List[SimConfigDocument]


class SimReportDocument(BaseModel):
    model_config = ConfigDict(extra='forbid')

    config: SimConfigDocument
    replications_used: int = Field(ge=0)
    replications_dropped: int = Field(ge=0)
    groups: Optional[Dict[str, List[Optional[float]]]] = None
    corrected: Optional[Dict[str, Any]] = None
    verdicts: Dict[str, Optional[bool]]
    errors: List[Dict[str, Any]] = []


class SimReportsDocument(BaseModel):
    reports: List[SimReportDocument]


class AuditReportDocument(BaseModel):
    model_config = ConfigDict(extra='forbid')

    taxonomy: TaxonomyDocument
    scale: Literal['percent', 'unit']
    accuracy: Optional[Dict[str, Any]] = None
    fairness: Optional[Dict[str, Any]] = None
    robustness: Optional[Dict[str, Any]] = None
    confusion: Optional[Dict[str, Any]] = None
    estimator: Optional[Dict[str, Any]] = None
    provenance: Dict[str, Any] = {}
    notes: List[Dict[str, Any]] = []


class HeadDocument(BaseModel):
    model_config = ConfigDict(extra='allow')

    version: int
    kind: str
    num_segments: int = Field(ge=2)
    dimension: int = Field(ge=1)
    regularization: float = Field(gt=0)
    class_weights: List[float]
    biases: List[float]


def _validated(model, data: Any, path: PathLike):
    try:
        return model.model_validate(data)
    except PydanticValidationError as e:
        first = e.errors()[0]
        where = '.'.join(str(p) for p in first['loc'])
        raise MalformedDocument(f"{model.__name__}: {where}: {first['msg']}", file=str(path),
                                field=where, errors=e.error_count()) from e


def _with_file(error: FairProbeError, path: PathLike) -> FairProbeError:
    return error.with_context(file=str(path))


def read_taxonomy(path: PathLike) -> Taxonomy:
    document = _validated(TaxonomyDocument, read_json(path), path)
    try:
        return Taxonomy(document.attribute_name, tuple(document.segments))
    except FairProbeError as e:
        raise _with_file(e, path)


def write_taxonomy(path: PathLike, taxonomy: Taxonomy) -> None:
    write_json(path, taxonomy.to_dict())


def read_confusion(path: PathLike, taxonomy: Optional[Taxonomy] = None,
                   tolerance: float = DEFAULT_TOLERANCE) -> ConfusionMatrix:
    document = _validated(ConfusionDocument, read_json(path), path)
    try:
        C = ConfusionMatrix(np.asarray(document.entries, dtype=float),
                            None if document.row_counts is None else np.asarray(document.row_counts),
                            tolerance=tolerance)
    except FairProbeError as e:
        raise _with_file(e, path)
    if taxonomy is not None and C.K != taxonomy.K:
        raise InvalidTable(f"Confusion matrix is {C.K} x {C.K}, taxonomy has {taxonomy.K} segments",
                           file=str(path))
    return C


def write_confusion(path: PathLike, C: ConfusionMatrix, taxonomy: Optional[Taxonomy] = None) -> None:
    document = C.to_dict()
    document['taxonomy'] = None if taxonomy is None else taxonomy.to_dict()
    write_json(path, document)


def read_prior(path: PathLike, tolerance: float = DEFAULT_TOLERANCE) -> np.ndarray:
    pi = np.asarray(_validated(PriorDocument, read_json(path), path).pi, dtype=float)
    if not validate_simplex(pi, tolerance):
        raise InvalidModel(f"Prior must be a probability vector, got {pi.tolist()}", file=str(path))
    return pi


def write_prior(path: PathLike, pi: Sequence[float]) -> None:
    write_json(path, {'pi': list(pi)})


def read_sim_configs(path: PathLike, default_tolerances: Optional[SimTolerances] = None) -> List[SimConfig]:
    """A single config object, a list of them, or {"configs": [...]}.

    Configs without a tolerances block take ``default_tolerances`` when given.
    """
    data = read_json(path)
    if isinstance(data, list):
        data = {'configs': data}
    if isinstance(data, dict) and 'configs' in data:
        documents = _validated(SweepDocument, data, path).configs
    else:
        documents = [_validated(SimConfigDocument, data, path)]
    configs = []
    for index, document in enumerate(documents):
        try:
            data = document.model_dump()
            if default_tolerances is not None and 'tolerances' not in document.model_fields_set:
                data['tolerances'] = default_tolerances.to_dict()
            configs.append(SimConfig.from_dict(data))
        except FairProbeError as e:
            raise e.with_context(file=str(path), record=index)
    return configs


def write_sim_reports(path: PathLike, reports: Sequence[SimReport]) -> None:
    if len(reports) == 1:
        write_json(path, reports[0].to_dict())
    else:
        write_json(path, {'reports': [r.to_dict() for r in reports]})


def read_sim_reports(path: PathLike) -> List[SimReport]:
    """Reports as written by write_sim_reports: one object or {"reports": [...]}"""
    data = read_json(path)
    if isinstance(data, dict) and 'reports' in data:
        _validated(SimReportsDocument, data, path)
        documents = data['reports']
    else:
        _validated(SimReportDocument, data, path)
        documents = [data]
    reports = []
    for index, document in enumerate(documents):
        try:
            reports.append(SimReport.from_dict(document))
        except FairProbeError as e:
            raise e.with_context(file=str(path), record=index)
    return reports


def write_audit_report(path: PathLike, report: AuditReport) -> None:
    write_json(path, report.to_dict())


def read_audit_report(path: PathLike) -> AuditReport:
    data = read_json(path)
    _validated(AuditReportDocument, data, path)
    return AuditReport.from_dict(data)


def read_head_document(path: PathLike) -> Dict[str, Any]:
    data = read_json(path)
    _validated(HeadDocument, data, path)
    return data


def write_table(path: PathLike, frame: pd.DataFrame) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator='\n')


# -- embeddings ---------------------------------------------------------------

def read_embeddings(path: PathLike) -> EmbeddingSet:
    """FEMB: magic, u32 version, u32 I, u32 D, I*D little-endian f32, then I ids one per line"""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != EMBEDDING_MAGIC:
        raise BadMagic(f"Expected magic {EMBEDDING_MAGIC!r}, found {data[:4]!r}", file=str(path))
    if len(data) < 4 + _HEADER.itemsize:
        raise TruncatedFile("Header is incomplete", file=str(path))
    header = np.frombuffer(data, dtype=_HEADER, count=1, offset=4)[0]
    version, I, D = int(header['version']), int(header['I']), int(header['D'])
    if version != EMBEDDING_VERSION:
        raise MalformedDocument(f"Unsupported embedding version {version}", file=str(path))

    offset = 4 + _HEADER.itemsize
    payload_size = I * D * 4
    if len(data) < offset + payload_size:
        raise TruncatedFile(f"Payload has {len(data) - offset} bytes, {payload_size} expected",
                            file=str(path))
    matrix = np.frombuffer(data, dtype='<f4', count=I * D, offset=offset).reshape(I, D).astype(np.float64)

    bad = ~np.isfinite(matrix)
    if bad.any():
        row, col = (int(v) for v in np.argwhere(bad)[0])
        raise NonFiniteValue(f"Non-finite embedding value at row {row}, column {col}",
                             file=str(path), row=row, col=col)

    ids_offset = offset + payload_size
    try:
        lines = data[ids_offset:].decode('utf-8').split('\n')
    except UnicodeDecodeError as e:
        raise MalformedDocument(f"Image ids are not valid UTF-8 at byte {ids_offset + e.start}",
                                file=str(path), offset=ids_offset + e.start) from e
    if lines and lines[-1] == '':
        lines.pop()
    if len(lines) < I:
        raise TruncatedFile(f"{len(lines)} image ids for {I} embeddings", file=str(path))
    try:
        embeddings = EmbeddingSet(lines[:I], matrix)
    except FairProbeError as e:
        raise _with_file(e, path)
    logger.debug(f"Read {I} x {D} embeddings from {path}")
    return embeddings


def write_embeddings(path: PathLike, embeddings: EmbeddingSet) -> None:
    if any('\n' in i for i in embeddings.image_ids):
        raise InvalidTable("Image ids cannot contain newlines")
    header = np.array([(EMBEDDING_VERSION, embeddings.I, embeddings.D)], dtype=_HEADER)
    payload = np.ascontiguousarray(embeddings.matrix, dtype='<f4')
    ids = ''.join(f"{i}\n" for i in embeddings.image_ids).encode('utf-8')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(EMBEDDING_MAGIC + header.tobytes() + payload.tobytes() + ids)


# -- CSV tables ---------------------------------------------------------------

def _read_csv(path: PathLike, required: Sequence[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except FileNotFoundError as e:
        raise InvalidTable("File not found", file=str(path)) from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise InvalidTable(f"Unreadable CSV: {e}", file=str(path)) from e
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise InvalidTable(f"Missing columns {missing}", file=str(path), columns=list(frame.columns))
    return frame


def _line(index: int) -> int:
    # header is line 1
    return index + 2


def _segment_indices(frame: pd.DataFrame, column: str, taxonomy: Taxonomy, path: PathLike,
                     allow_missing: bool = True) -> np.ndarray:
    lookup = {name: i for i, name in enumerate(taxonomy.segments)}
    values = np.full(len(frame), MISSING, dtype=np.int64)
    for index, name in enumerate(frame[column]):
        name = name.strip()
        if not name:
            if not allow_missing:
                raise MissingLabel(f"Empty {column}", file=str(path), line=_line(index))
            continue
        if name not in lookup:
            raise UnknownSegment(f"Unknown segment '{name}' in column {column}",
                                 file=str(path), line=_line(index), record=frame['image_id'].iloc[index]
                                 if 'image_id' in frame.columns else None)
        values[index] = lookup[name]
    return values


def _check_duplicates(ids: pd.Series, path: PathLike, what: str = 'image id') -> None:
    duplicated = ids.duplicated()
    if duplicated.any():
        index = int(np.flatnonzero(duplicated.to_numpy())[0])
        raise DuplicateImageId(f"Duplicate {what} '{ids.iloc[index]}'", file=str(path),
                               line=_line(index), record=ids.iloc[index])


def read_labels(path: PathLike, taxonomy: Taxonomy) -> SampleTable:
    """CSV with image_id, identity_id and optional true_segment / predicted_segment names"""
    frame = _read_csv(path, ['image_id', 'identity_id'])
    _check_duplicates(frame['image_id'], path)
    true = _segment_indices(frame, 'true_segment', taxonomy, path) if 'true_segment' in frame else None
    predicted = (_segment_indices(frame, 'predicted_segment', taxonomy, path)
                 if 'predicted_segment' in frame else None)
    try:
        table = SampleTable(frame['image_id'].tolist(), frame['identity_id'].tolist(), true, predicted, taxonomy.K)
    except FairProbeError as e:
        raise _with_file(e, path)
    logger.info(f"Read {len(table)} rows from {path}")
    return table


def read_predictions(path: PathLike, taxonomy: Taxonomy) -> Dict[str, int]:
    """image_id -> predicted segment index from a CSV with image_id, predicted_segment"""
    frame = _read_csv(path, ['image_id', 'predicted_segment'])
    _check_duplicates(frame['image_id'], path)
    predicted = _segment_indices(frame, 'predicted_segment', taxonomy, path, allow_missing=False)
    return dict(zip(frame['image_id'].tolist(), predicted.tolist()))


def attach_predictions(table: SampleTable, predictions: Dict[str, int], source: Optional[PathLike] = None) -> SampleTable:
    """Fill predicted segments by image id; every table row needs a prediction"""
    missing = [i for i in table.image_ids if i not in predictions]
    if missing:
        raise MissingLabel(f"{len(missing)} images have no prediction, first '{missing[0]}'",
                           file=None if source is None else str(source), record=missing[0])
    extra = len(predictions) - len(table)
    if extra > 0:
        logger.warning(f"Ignoring {extra} predictions for images absent from the label table")
    return table.with_predictions([predictions[i] for i in table.image_ids])


def _segment_names(values: np.ndarray, taxonomy: Taxonomy) -> List[str]:
    return ['' if v == MISSING else taxonomy.name_of(int(v)) for v in values]


def write_labels(path: PathLike, table: SampleTable, taxonomy: Taxonomy) -> None:
    frame = pd.DataFrame({'image_id': list(table.image_ids), 'identity_id': list(table.identity_ids)})
    if (table.true_segments != MISSING).any():
        frame['true_segment'] = _segment_names(table.true_segments, taxonomy)
    if (table.predicted_segments != MISSING).any():
        frame['predicted_segment'] = _segment_names(table.predicted_segments, taxonomy)
    write_table(path, frame)


def write_predictions(path: PathLike, table: SampleTable, taxonomy: Taxonomy) -> None:
    """Same layout as the label CSV, predicted_segment always present"""
    table.require_labels(predicted=True)
    write_labels(path, table, taxonomy)


def read_trials(path: PathLike, taxonomy: Taxonomy) -> BinaryTrialTable:
    """CSV with identity_id, y (0/1), g_hat and optional g_true as segment names"""
    frame = _read_csv(path, ['identity_id', 'y', 'g_hat'])
    y = frame['y'].str.strip()
    bad = ~y.isin(['0', '1'])
    if bad.any():
        index = int(np.flatnonzero(bad.to_numpy())[0])
        raise InvalidTable(f"y must be 0 or 1, got '{y.iloc[index]}'", file=str(path), line=_line(index))
    g_hat = _segment_indices(frame, 'g_hat', taxonomy, path, allow_missing=False)
    g_true = _segment_indices(frame, 'g_true', taxonomy, path) if 'g_true' in frame else None
    try:
        return BinaryTrialTable(y=y.astype(int).to_numpy(), g_hat=g_hat, num_segments=taxonomy.K,
                                g_true=g_true, identity_ids=frame['identity_id'].tolist())
    except FairProbeError as e:
        raise _with_file(e, path)


def write_trials(path: PathLike, trials: BinaryTrialTable, taxonomy: Taxonomy) -> None:
    identity_ids = trials.identity_ids or [f"id{i}" for i in range(len(trials))]
    frame = pd.DataFrame({
        'identity_id': list(identity_ids),
        'y': trials.y.astype(int),
        'g_hat': _segment_names(trials.g_hat, taxonomy),
    })
    if trials.g_true is not None:
        frame['g_true'] = _segment_names(trials.g_true, taxonomy)
    write_table(path, frame)


def provenance(inputs: Dict[str, Optional[PathLike]], seed: Optional[int], version: str) -> Dict[str, Any]:
    """Input digests, tool version and seed; no timestamps so reruns stay byte-identical"""
    return {
        'tool_version': version,
        'seed': seed,
        'inputs': {name: {'path': Path(p).name, 'sha256': sha256_file(p)}
                   for name, p in sorted(inputs.items()) if p is not None},
    }


def read_label_table(labels_path: PathLike, taxonomy: Taxonomy,
                     predictions_path: Optional[PathLike] = None) -> Tuple[SampleTable, Dict[str, str]]:
    """Label CSV with predictions optionally taken from a separate CSV; returns the table and its sources"""
    table = read_labels(labels_path, taxonomy)
    sources = {'labels': str(labels_path)}
    if predictions_path is not None:
        table = attach_predictions(table, read_predictions(predictions_path, taxonomy), predictions_path)
        sources['predictions'] = str(predictions_path)
    return table, sources
