"""Knowledge-graph data model, split loaders, and ground-truth datasets."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

from .errors import ParseError, RangeError, UnknownLabelError, ValidationError


class Triple(NamedTuple):
    subject: int
    predicate: int
    object: int


class Query(NamedTuple):
    subject: int
    predicate: int


class KnowledgeGraph:
    """Interned triple store with disjoint train/validation/test splits.

    Entity and relation ids are dense integers assigned by first appearance
    while scanning the training file, then validation, then test. Instances
    are immutable after construction and safe to share across threads.
    """

    def __init__(
        self,
        entity_labels: Sequence[str],
        relation_labels: Sequence[str],
        train: Sequence[Triple],
        validation: Sequence[Triple],
        test: Sequence[Triple],
        name: str = "kg",
    ):
        self.entity_labels = tuple(entity_labels)
        self.relation_labels = tuple(relation_labels)
        self.train = tuple(train)
        self.validation = tuple(validation)
        self.test = tuple(test)
        self.name = name
        self.entity_index = {label: i for i, label in enumerate(self.entity_labels)}
        self.relation_index = {label: i for i, label in enumerate(self.relation_labels)}
        self._check()
        self._build_indexes()

    @property
    def n_entities(self) -> int:
        return len(self.entity_labels)

    @property
    def n_relations(self) -> int:
        return len(self.relation_labels)

    @property
    def n_triples(self) -> int:
        return len(self.train) + len(self.validation) + len(self.test)

    def _check(self) -> None:
        if len(self.entity_index) != len(self.entity_labels):
            raise ValidationError("duplicate entity labels in label table")
        if len(self.relation_index) != len(self.relation_labels):
            raise ValidationError("duplicate relation labels in label table")
        for split_name, split in (("train", self.train), ("validation", self.validation), ("test", self.test)):
            for t in split:
                if not (0 <= t.subject < self.n_entities and 0 <= t.object < self.n_entities):
                    raise ValidationError(f"{split_name} triple {t} has an entity id out of range")
                if not 0 <= t.predicate < self.n_relations:
                    raise ValidationError(f"{split_name} triple {t} has a relation id out of range")
        seen: dict[Triple, str] = {}
        for split_name, split in (("train", self.train), ("validation", self.validation), ("test", self.test)):
            for t in set(split):
                if t in seen:
                    raise ValidationError(
                        f"triple {self.labels_of(t)} appears in both {seen[t]} and {split_name}"
                    )
            for t in set(split):
                seen[t] = split_name

    def _build_indexes(self) -> None:
        self._objects_tv: dict[tuple[int, int], set[int]] = {}
        self._objects_all: dict[tuple[int, int], set[int]] = {}
        self._incident_train: dict[int, list[Triple]] = {}
        self._neighbor_counts: dict[int, Counter] = {}
        for split, include_tv in ((self.train, True), (self.validation, True), (self.test, False)):
            for t in split:
                key = (t.subject, t.predicate)
                self._objects_all.setdefault(key, set()).add(t.object)
                if include_tv:
                    self._objects_tv.setdefault(key, set()).add(t.object)
        for t in self.train:
            self._incident_train.setdefault(t.subject, []).append(t)
            if t.object != t.subject:
                self._incident_train.setdefault(t.object, []).append(t)
            self._neighbor_counts.setdefault(t.subject, Counter())[t.object] += 1
            if t.object != t.subject:
                self._neighbor_counts.setdefault(t.object, Counter())[t.subject] += 1

    def known_objects(self, subject: int, predicate: int, include_test: bool = False) -> frozenset[int]:
        """Objects o with (subject, predicate, o) in train+validation (+test)."""
        table = self._objects_all if include_test else self._objects_tv
        return frozenset(table.get((subject, predicate), ()))

    def incident_train(self, entity: int) -> tuple[Triple, ...]:
        """Train triples featuring the entity as subject or object, in file order."""
        return tuple(self._incident_train.get(entity, ()))

    def train_degree(self, entity: int) -> int:
        return len(self._incident_train.get(entity, ()))

    def edge_count(self, u: int, v: int) -> int:
        """Multiplicity of undirected train edges between u and v."""
        return self._neighbor_counts.get(u, Counter()).get(v, 0)

    def neighbors(self, u: int) -> Counter:
        return self._neighbor_counts.get(u, Counter())

    def labels_of(self, triple: Triple) -> tuple[str, str, str]:
        return (
            self.entity_labels[triple.subject],
            self.relation_labels[triple.predicate],
            self.entity_labels[triple.object],
        )

    def triple_of(self, subject: str, predicate: str, object: str) -> Triple:
        """Resolve a label triple to ids, raising UnknownLabelError when missing."""
        try:
            s = self.entity_index[subject]
        except KeyError:
            raise UnknownLabelError(f"unknown entity label {subject!r}") from None
        try:
            p = self.relation_index[predicate]
        except KeyError:
            raise UnknownLabelError(f"unknown relation label {predicate!r}") from None
        try:
            o = self.entity_index[object]
        except KeyError:
            raise UnknownLabelError(f"unknown entity label {object!r}") from None
        return Triple(s, p, o)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            self.entity_labels == other.entity_labels
            and self.relation_labels == other.relation_labels
            and self.train == other.train
            and self.validation == other.validation
            and self.test == other.test
        )

    def __repr__(self) -> str:
        return (
            f"KnowledgeGraph({self.name!r}, entities={self.n_entities}, "
            f"relations={self.n_relations}, triples={self.n_triples})"
        )


@dataclass(frozen=True)
class GroundTruthEntry:
    prediction: Triple
    explanation: tuple[Triple, ...]
    quality: int


@dataclass(frozen=True)
class GroundTruthDataset:
    kg: KnowledgeGraph
    entries: tuple[GroundTruthEntry, ...]

    def __post_init__(self):
        if not self.entries:
            raise ValidationError("ground-truth dataset has no entries")


def _read_split(path: str | Path, intern_entity, intern_relation) -> list[Triple]:
    triples = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(
                f"expected 3 tab-separated columns, got {len(fields)}",
                source=str(path),
                line=lineno,
            )
        s, p, o = fields
        triples.append(Triple(intern_entity(s), intern_relation(p), intern_entity(o)))
    return triples


def load_kg(
    train_path: str | Path,
    validation_path: str | Path,
    test_path: str | Path,
    name: str = "kg",
) -> KnowledgeGraph:
    """Load a KG from three tab-separated label files.

    Ids are assigned in file order: train first, then validation, then test;
    within a line the subject is interned before the object.
    """
    entity_labels: list[str] = []
    relation_labels: list[str] = []
    entity_index: dict[str, int] = {}
    relation_index: dict[str, int] = {}

    def intern_entity(label: str) -> int:
        if label not in entity_index:
            entity_index[label] = len(entity_labels)
            entity_labels.append(label)
        return entity_index[label]

    def intern_relation(label: str) -> int:
        if label not in relation_index:
            relation_index[label] = len(relation_labels)
            relation_labels.append(label)
        return relation_index[label]

    train = _read_split(train_path, intern_entity, intern_relation)
    validation = _read_split(validation_path, intern_entity, intern_relation)
    test = _read_split(test_path, intern_entity, intern_relation)
    return KnowledgeGraph(entity_labels, relation_labels, train, validation, test, name=name)


def save_kg(
    kg: KnowledgeGraph,
    train_path: str | Path,
    validation_path: str | Path,
    test_path: str | Path,
) -> None:
    """Write the three splits back to tab-separated label files."""
    for path, split in ((train_path, kg.train), (validation_path, kg.validation), (test_path, kg.test)):
        lines = ["\t".join(kg.labels_of(t)) for t in split]
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def discretize_ratings(ratings: Sequence[float]) -> list[int]:
    """Map ratings in [0, 1] to {-1, 0, +1} by empirical tertiles.

    Thresholds are the order statistics of rank floor(n/3)+1 and
    floor(2n/3)+1 of the sorted ratings; values below the first threshold map
    to -1, values below the second to 0, the rest to +1. Degenerate inputs
    where both thresholds coincide map everything to 0.
    """
    values = [float(r) for r in ratings]
    if not values:
        raise ValueError("cannot discretize an empty rating sequence")
    for r in values:
        if not 0.0 <= r <= 1.0:
            raise RangeError(f"rating {r} outside [0, 1]")
    ordered = sorted(values)
    n = len(ordered)
    t1 = ordered[n // 3]
    t2 = ordered[(2 * n) // 3]
    if t1 == t2:
        return [0] * n
    return [-1 if r < t1 else (0 if r < t2 else 1) for r in values]


def _resolve_label_triple(kg: KnowledgeGraph, raw, *, source: str, line: int) -> Triple:
    if not (isinstance(raw, (list, tuple)) and len(raw) == 3 and all(isinstance(x, str) for x in raw)):
        raise ParseError(f"expected a 3-label triple, got {raw!r}", source=source, line=line)
    return kg.triple_of(*raw)


def load_ground_truth(kg: KnowledgeGraph, entries_path: str | Path) -> GroundTruthDataset:
    """Load a ground-truth explanation dataset from a JSON-lines file.

    Each record carries ``prediction`` (3 labels), ``explanation`` (list of
    3-label triples) and either a categorical ``quality`` in {-1, 0, 1}, a
    real ``rating`` in [0, 1], or neither. Ratings are discretized jointly
    over the whole file; records with no rating and no quality are treated
    as rule-derived and assigned quality +1.
    """
    path = Path(entries_path)
    train_set = set(kg.train)
    parsed: list[tuple[Triple, tuple[Triple, ...], int | None, float | None]] = []
    text = path.read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON record: {exc}", source=str(path), line=lineno) from None
        if not isinstance(record, dict) or "prediction" not in record or "explanation" not in record:
            raise ParseError(
                "record must be an object with 'prediction' and 'explanation' fields",
                source=str(path),
                line=lineno,
            )
        prediction = _resolve_label_triple(kg, record["prediction"], source=str(path), line=lineno)
        raw_explanation = record["explanation"]
        if not isinstance(raw_explanation, list):
            raise ParseError("'explanation' must be a list of triples", source=str(path), line=lineno)
        explanation = tuple(
            sorted(_resolve_label_triple(kg, raw, source=str(path), line=lineno) for raw in raw_explanation)
        )
        for t in explanation:
            if t not in train_set:
                raise ValidationError(
                    f"explanation triple {kg.labels_of(t)} is not in the train split"
                )
        quality: int | None = None
        rating: float | None = None
        if "quality" in record and "rating" in record:
            raise ParseError("record carries both 'quality' and 'rating'", source=str(path), line=lineno)
        if "quality" in record:
            quality = record["quality"]
            if quality not in (-1, 0, 1):
                raise ParseError(f"quality {quality!r} not in {{-1, 0, 1}}", source=str(path), line=lineno)
        elif "rating" in record:
            rating = float(record["rating"])
            if not 0.0 <= rating <= 1.0:
                raise RangeError(f"rating {rating} outside [0, 1] at {path}:{lineno}")
        parsed.append((prediction, explanation, quality, rating))

    rated_positions = [i for i, item in enumerate(parsed) if item[3] is not None]
    discretized: dict[int, int] = {}
    if rated_positions:
        labels = discretize_ratings([parsed[i][3] for i in rated_positions])
        discretized = dict(zip(rated_positions, labels))

    entries = []
    for i, (prediction, explanation, quality, rating) in enumerate(parsed):
        if quality is None:
            quality = discretized[i] if rating is not None else 1
        entries.append(GroundTruthEntry(prediction, explanation, quality))
    return GroundTruthDataset(kg, tuple(entries))
