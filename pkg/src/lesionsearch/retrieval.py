"""Exact cosine-distance index, top-k queries, and clinical evaluation.

The index is a brute-force scan over unit embeddings: candidates are ranked
by ascending cosine distance with ties broken by insertion order, which
makes results reproducible and lets tests compare against an independent
full-scan oracle exactly.

Three candidate-pool settings mirror common clinical protocols:
``all_patients`` (every lesion is a candidate), ``same_patient`` (only the
query patient's lesions), and ``cross_patient`` (only other patients'
lesions). Evaluation treats entries sharing the query's lesion type as
relevant and always excludes the query itself from its candidate pool.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EVAL_SETTINGS = ("all_patients", "same_patient", "cross_patient")

_SETTING_ALIASES = {
    "all": "all_patients",
    "same": "same_patient",
    "cross": "cross_patient",
}


def normalize_setting(setting: str) -> str:
    setting = _SETTING_ALIASES.get(setting, setting)
    if setting not in EVAL_SETTINGS:
        raise ValueError(
            f"unknown evaluation setting {setting!r}; expected one of {EVAL_SETTINGS}"
        )
    return setting


@dataclass(frozen=True)
class IndexEntry:
    id: str
    embedding: np.ndarray
    patient_id: str
    study_id: str
    lesion_type: str


@dataclass(frozen=True)
class Index:
    """Immutable embedding store; build through ``build_index``."""

    ids: tuple[str, ...]
    matrix: np.ndarray  # (count, dim) float64, unit rows
    patient_ids: tuple[str, ...]
    study_ids: tuple[str, ...]
    lesion_types: tuple[str, ...]

    @property
    def count(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1]) if self.matrix.size else 0

    def entry(self, position: int) -> IndexEntry:
        return IndexEntry(
            id=self.ids[position],
            embedding=self.matrix[position],
            patient_id=self.patient_ids[position],
            study_id=self.study_ids[position],
            lesion_type=self.lesion_types[position],
        )

    def label_histogram(self) -> dict[str, int]:
        hist: dict[str, int] = {}
        for label in self.lesion_types:
            hist[label] = hist.get(label, 0) + 1
        return hist

    def label_set(self) -> tuple[str, ...]:
        seen: list[str] = []
        for label in self.lesion_types:
            if label not in seen:
                seen.append(label)
        return tuple(seen)


@dataclass(frozen=True)
class RankedList:
    """(id, distance) pairs in ascending distance order."""

    items: tuple[tuple[str, float], ...]
    query_id: str | None = None

    def ids(self) -> list[str]:
        return [i for i, _ in self.items]

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class EvalReport:
    setting: str
    map_at_10: float
    precision_at_1: float
    precision_at_10: float
    query_count: int
    per_query: tuple[dict, ...]

    def to_dict(self) -> dict:
        return {
            "setting": self.setting,
            "map_at_10": self.map_at_10,
            "precision_at_1": self.precision_at_1,
            "precision_at_10": self.precision_at_10,
            "query_count": self.query_count,
            "per_query": list(self.per_query),
        }


def build_index(
    ids, embeddings: np.ndarray, patient_ids, study_ids, lesion_types
) -> Index:
    """Validate and assemble an index; insertion order is preserved and is
    the deterministic tie-breaker for equal distances."""
    ids = tuple(str(i) for i in ids)
    matrix = np.asarray(embeddings, dtype=np.float64)
    if len(ids) == 0:
        matrix = matrix.reshape(0, matrix.shape[1] if matrix.ndim == 2 else 0)
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise ValueError("embeddings must be (count, dim) matching ids")
    patient_ids = tuple(str(p) for p in patient_ids)
    study_ids = tuple(str(s) for s in study_ids)
    lesion_types = tuple(str(t) for t in lesion_types)
    if not (len(patient_ids) == len(study_ids) == len(lesion_types) == len(ids)):
        raise ValueError("metadata lists must match ids in length")
    seen: set[str] = set()
    for pos, entry_id in enumerate(ids):
        if entry_id in seen:
            raise ValueError(f"duplicate index id {entry_id!r}")
        seen.add(entry_id)
        norm = float(np.linalg.norm(matrix[pos]))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(
                f"embedding for id {entry_id!r} is not unit-norm (||v|| = {norm})"
            )
    return Index(
        ids=ids,
        matrix=matrix.copy(),
        patient_ids=patient_ids,
        study_ids=study_ids,
        lesion_types=lesion_types,
    )


def _pool_mask(index: Index, setting: str, query_patient: str | None) -> np.ndarray:
    setting = normalize_setting(setting)
    if setting == "all_patients":
        return np.ones(index.count, dtype=bool)
    if query_patient is None:
        raise ValueError(f"setting {setting!r} requires a query patient id")
    same = np.array([p == query_patient for p in index.patient_ids], dtype=bool)
    return same if setting == "same_patient" else ~same


def query(
    index: Index,
    q: np.ndarray,
    k: int = 9,
    setting: str = "all_patients",
    query_patient: str | None = None,
    exclude_id: str | None = None,
) -> RankedList:
    """Exact top-k scan: filter the pool by setting, drop ``exclude_id``,
    rank by ascending cosine distance (ties by insertion order), truncate.

    An empty pool yields an empty RankedList, not an error.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(q, dtype=np.float64)
    if index.count == 0:
        return RankedList(items=(), query_id=exclude_id)
    if q.shape != (index.dim,):
        raise ValueError(f"query dim {q.shape} does not match index dim {index.dim}")
    norm = float(np.linalg.norm(q))
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"query must be unit-norm, got ||q|| = {norm}")

    mask = _pool_mask(index, setting, query_patient)
    if exclude_id is not None:
        for pos, entry_id in enumerate(index.ids):
            if entry_id == exclude_id:
                mask = mask.copy()
                mask[pos] = False
                break
    positions = np.flatnonzero(mask)
    if positions.size == 0:
        return RankedList(items=(), query_id=exclude_id)
    distances = 1.0 - index.matrix[positions] @ q
    order = np.argsort(distances, kind="stable")[:k]
    items = tuple(
        (index.ids[positions[i]], float(distances[i])) for i in order
    )
    return RankedList(items=items, query_id=exclude_id)


def precision_at_k(ranked: RankedList, relevant: set, k: int) -> float:
    """|top-min(k, len) hits| / k; the denominator stays k even when fewer
    than k candidates were returned."""
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = sum(1 for entry_id, _ in ranked.items[:k] if entry_id in relevant)
    return hits / k


def average_precision_at_k(ranked: RankedList, relevant: set, k: int) -> float:
    """AP@k = sum of precision-at-hit over the first k ranks, divided by
    min(relevant in pool, k).

    ``ranked`` must be the full pool ranking (untruncated) so the
    normalizer can count the pool's relevant entries; 0 when the pool holds
    no relevant item.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pool_relevant = sum(1 for entry_id, _ in ranked.items if entry_id in relevant)
    if pool_relevant == 0:
        return 0.0
    hits = 0
    ap_sum = 0.0
    for rank, (entry_id, _) in enumerate(ranked.items[:k], start=1):
        if entry_id in relevant:
            hits += 1
            ap_sum += hits / rank
    return ap_sum / min(pool_relevant, k)


def evaluate(
    index: Index,
    setting: str = "all_patients",
    queries=None,
    k_map: int = 10,
    k_prec: tuple[int, ...] = (1, 10),
) -> EvalReport:
    """Run the retrieval protocol: every query's relevant set is the entries
    sharing its lesion type, the query itself is always excluded, and the
    pool follows the setting. Queries whose pool comes up empty are skipped;
    if none remain, raises with the setting named.
    """
    setting = normalize_setting(setting)
    if index.count == 0:
        raise ValueError("cannot evaluate an empty index")
    if queries is None:
        queries = [index.entry(pos) for pos in range(index.count)]
    per_query: list[dict] = []
    for entry in queries:
        ranked = query(
            index,
            entry.embedding,
            k=index.count,
            setting=setting,
            query_patient=entry.patient_id,
            exclude_id=entry.id,
        )
        if len(ranked) == 0:
            continue
        pool_ids = set(ranked.ids())
        relevant = {
            index.ids[pos]
            for pos in range(index.count)
            if index.lesion_types[pos] == entry.lesion_type and index.ids[pos] in pool_ids
        }
        row = {
            "query_id": entry.id,
            "ap_at_10": average_precision_at_k(ranked, relevant, k_map),
        }
        for k in k_prec:
            row[f"precision_at_{k}"] = precision_at_k(ranked, relevant, k)
        per_query.append(row)
    if not per_query:
        raise ValueError(
            f"no usable queries under setting {setting!r} "
            "(every candidate pool was empty)"
        )
    return EvalReport(
        setting=setting,
        map_at_10=float(np.mean([r["ap_at_10"] for r in per_query])),
        precision_at_1=float(np.mean([r["precision_at_1"] for r in per_query])),
        precision_at_10=float(np.mean([r["precision_at_10"] for r in per_query])),
        query_count=len(per_query),
        per_query=tuple(per_query),
    )


def knn_classify(index: Index, q: np.ndarray, k: int, exclude_id: str | None = None) -> str:
    """Majority lesion type among the top-k; ties broken by smaller mean
    distance, then by label order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if index.count == 0:
        raise ValueError("cannot classify against an empty index")
    ranked = query(index, q, k=k, setting="all_patients", exclude_id=exclude_id)
    if len(ranked) == 0:
        raise ValueError("candidate pool is empty")
    label_of = dict(zip(index.ids, index.lesion_types))
    votes: dict[str, list[float]] = {}
    for entry_id, dist in ranked.items:
        votes.setdefault(label_of[entry_id], []).append(dist)
    return min(
        votes.items(), key=lambda kv: (-len(kv[1]), float(np.mean(kv[1])), kv[0])
    )[0]


def classification_report(predictions, truths) -> tuple[float, float]:
    """(accuracy, macro F1) over parallel label lists.

    Macro F1 averages per-class F1 = 2TP / (2TP + FP + FN) across every
    class observed in either list; a class with an empty denominator
    contributes 0.
    """
    predictions = list(predictions)
    truths = list(truths)
    if len(predictions) != len(truths):
        raise ValueError(
            f"length mismatch: {len(predictions)} predictions vs {len(truths)} truths"
        )
    if not truths:
        raise ValueError("cannot score empty label lists")
    accuracy = sum(p == t for p, t in zip(predictions, truths)) / len(truths)
    classes: list[str] = []
    for label in truths + predictions:
        if label not in classes:
            classes.append(label)
    f1s = []
    for cls in classes:
        tp = sum(1 for p, t in zip(predictions, truths) if p == cls and t == cls)
        fp = sum(1 for p, t in zip(predictions, truths) if p == cls and t != cls)
        fn = sum(1 for p, t in zip(predictions, truths) if p != cls and t == cls)
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return accuracy, float(np.mean(f1s))


# ---------------------------------------------------------------------------
# Index persistence: JSON header line, packed float64 embeddings, JSON
# metadata table.
# ---------------------------------------------------------------------------


def save_index(index: Index, path: str | Path, meta: dict | None = None) -> None:
    header = {
        "dim": index.dim,
        "count": index.count,
        "label_set": list(index.label_set()),
        "dtype": "<f8",
        "meta": meta or {},
    }
    metadata = {
        "ids": list(index.ids),
        "patient_ids": list(index.patient_ids),
        "study_ids": list(index.study_ids),
        "lesion_types": list(index.lesion_types),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(index.matrix.astype("<f8").tobytes())
        fh.write(json.dumps(metadata).encode("utf-8"))


def load_index(path: str | Path) -> tuple[Index, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        count, dim = int(header["count"]), int(header["dim"])
        payload = fh.read(count * dim * 8)
        metadata = json.loads(fh.read().decode("utf-8"))
    matrix = np.frombuffer(payload, dtype="<f8").reshape(count, dim).astype(np.float64)
    index = build_index(
        metadata["ids"],
        matrix,
        metadata["patient_ids"],
        metadata["study_ids"],
        metadata["lesion_types"],
    )
    return index, dict(header.get("meta", {}))
