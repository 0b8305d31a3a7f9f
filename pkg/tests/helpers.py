"""Shared fixtures and independent oracles used across the test suite."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from kgxbench import kge
from kgxbench.kg import KnowledgeGraph, Triple


def chain_kg(n: int = 50) -> KnowledgeGraph:
    """Successor chain next(e_i) = e_{i+1} with parallel and inverse glue edges.

    Every consecutive pair carries train triples (e_i, follows, e_{i+1}) and
    (e_{i+1}, prev, e_i); the next triples are split with i % 10 == 3 held out
    for validation and i % 10 == 7 for test, so held-out links stay inferable.
    """
    entities = [f"e{i}" for i in range(n)]
    relations = ["next", "follows", "prev"]
    train, validation, test = [], [], []
    for i in range(n - 1):
        train.append(Triple(i, 1, i + 1))
        train.append(Triple(i + 1, 2, i))
        t = Triple(i, 0, i + 1)
        if i % 10 == 3:
            validation.append(t)
        elif i % 10 == 7:
            test.append(t)
        else:
            train.append(t)
    return KnowledgeGraph(entities, relations, train, validation, test, name="chain")


CHAIN_HP = kge.HyperParams(
    dimension=4,
    epochs=200,
    learning_rate=5e-2,
    batch_size=4,
    negatives_per_positive=20,
    margin=1.0,
    seed=0,
)


def colored_chain_kg(n: int = 50, n_colors: int = 3) -> KnowledgeGraph:
    """Bare successor chain plus color-attribute edges; all in train.

    Each chain link is the only positional evidence for its pair, so removing
    (e_i, next, e_{i+1}) from e_i's neighborhood should hurt that link's rank
    while removing a color edge should not.
    """
    entities = [f"e{i}" for i in range(n)] + [f"c{j}" for j in range(n_colors)]
    relations = ["next", "has_color"]
    train = [Triple(i, 0, i + 1) for i in range(n - 1)]
    train += [Triple(i, 1, n + (i % n_colors)) for i in range(n)]
    return KnowledgeGraph(entities, relations, train, [], [], name="colored_chain")


def tiny_kg() -> KnowledgeGraph:
    """Five-entity hand KG used for scoring and ranking examples."""
    entities = ["a", "b", "c", "d", "x"]
    relations = ["r", "s"]
    train = [Triple(0, 0, 1), Triple(1, 0, 2), Triple(0, 1, 3), Triple(3, 1, 4)]
    validation = [Triple(2, 0, 3)]
    test = [Triple(3, 0, 4)]
    return KnowledgeGraph(entities, relations, train, validation, test, name="tiny")


def hand_model(kg: KnowledgeGraph, entity_rows, relation_rows, kind=kge.TRANSLATIONAL) -> kge.KgeModel:
    ent = np.asarray(entity_rows, dtype=complex if kind == kge.COMPLEX else float)
    rel = np.asarray(relation_rows, dtype=complex if kind == kge.COMPLEX else float)
    hp = kge.HyperParams(dimension=ent.shape[1], epochs=1)
    return kge.KgeModel(kind, ent, rel, hp)


def random_kg(rng: np.random.Generator, n_entities: int, n_relations: int, n_triples: int) -> KnowledgeGraph:
    """Random multigraph split across the three sets; duplicates removed."""
    entities = [f"v{i}" for i in range(n_entities)]
    relations = [f"p{j}" for j in range(n_relations)]
    seen: set[Triple] = set()
    triples = []
    while len(triples) < n_triples:
        t = Triple(
            int(rng.integers(n_entities)),
            int(rng.integers(n_relations)),
            int(rng.integers(n_entities)),
        )
        if t not in seen:
            seen.add(t)
            triples.append(t)
    third = max(1, len(triples) // 3)
    return KnowledgeGraph(
        entities, relations, triples[: len(triples) - 2 * third],
        triples[len(triples) - 2 * third : len(triples) - third],
        triples[len(triples) - third :],
        name="random",
    )


def random_model(rng: np.random.Generator, kg: KnowledgeGraph, kind: str, dim: int) -> kge.KgeModel:
    hp = kge.HyperParams(dimension=dim, epochs=1, seed=int(rng.integers(1 << 31)))
    if kind == kge.TRANSLATIONAL:
        ent = rng.normal(size=(kg.n_entities, dim))
        rel = rng.normal(size=(kg.n_relations, dim))
    else:
        ent = rng.normal(size=(kg.n_entities, dim)) + 1j * rng.normal(size=(kg.n_entities, dim))
        rel = rng.normal(size=(kg.n_relations, dim)) + 1j * rng.normal(size=(kg.n_relations, dim))
    return kge.KgeModel(kind, ent, rel, hp)


# -- independent oracles -------------------------------------------------------

def nearest_rank_tertile_labels(ratings) -> list[int]:
    """Quantile oracle: order statistics at ranks floor(n/3)+1 and floor(2n/3)+1."""
    ordered = sorted(float(r) for r in ratings)
    n = len(ordered)
    first = ordered[(n // 3 + 1) - 1]
    second = ordered[((2 * n) // 3 + 1) - 1]
    if first == second:
        return [0] * n
    labels = []
    for r in ratings:
        if r < first:
            labels.append(-1)
        elif r < second:
            labels.append(0)
        else:
            labels.append(1)
    return labels


def brute_force_realistic_rank(model: kge.KgeModel, kg: KnowledgeGraph, triple: Triple) -> float:
    """Sort-based rank oracle: mean 1-based position of the target's tie block."""
    s, p, o = triple
    known = {
        t.object
        for split in (kg.train, kg.validation, kg.test)
        for t in split
        if t.subject == s and t.predicate == p
    }
    candidates = [e for e in range(kg.n_entities) if e == o or e not in known]
    scored = sorted(((kge.score(model, s, p, e), e) for e in candidates), key=lambda x: -x[0])
    target_score = kge.score(model, s, p, o)
    positions = [i + 1 for i, (sc, _) in enumerate(scored) if sc == target_score]
    return sum(positions) / len(positions)


def brute_force_path_count(kg: KnowledgeGraph, start: int, target: int) -> int:
    """Count undirected train paths of length 0..2 from start to target."""
    edges = [(t.subject, t.object) for t in kg.train]

    def between(u, v):
        if u == v:
            return sum(1 for a, b in edges if a == u and b == u)
        return sum(1 for a, b in edges if (a == u and b == v) or (a == v and b == u))

    count = 1 if start == target else 0
    count += between(start, target)
    for mid in range(kg.n_entities):
        if mid not in (start, target):
            count += between(start, mid) * between(mid, target)
    return count


def brute_force_report(predicted, gold, beta=1.0):
    """Confusion-matrix oracle computed with plain counting."""
    labels = (-1, 0, 1)
    out = {}
    for label in labels:
        tp = sum(1 for g, p in zip(gold, predicted) if g == label and p == label)
        fp = sum(1 for g, p in zip(gold, predicted) if g != label and p == label)
        fn = sum(1 for g, p in zip(gold, predicted) if g == label and p != label)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        denominator = beta * beta * precision + recall
        f = (1 + beta * beta) * precision * recall / denominator if denominator else 0.0
        out[label] = (precision, recall, f)
    accuracy = sum(1 for g, p in zip(gold, predicted) if g == p) / len(gold)
    return out, accuracy


# -- on-disk fixtures -----------------------------------------------------------

def write_kg_dir(kg: KnowledgeGraph, data_dir: Path) -> Path:
    """Lay out a KG under data/<name>/ the way the workflow expects it."""
    base = data_dir / kg.name
    base.mkdir(parents=True, exist_ok=True)
    for filename, split in (("train.tsv", kg.train), ("valid.tsv", kg.validation), ("test.tsv", kg.test)):
        lines = ["\t".join(kg.labels_of(t)) for t in split]
        (base / filename).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return base


def write_ground_truth(kg: KnowledgeGraph, entries, base: Path) -> Path:
    """entries: iterable of (prediction, explanation triples, extra-record-fields)."""
    path = base / "ground_truth.jsonl"
    lines = []
    for prediction, explanation, extra in entries:
        record = {
            "prediction": list(kg.labels_of(prediction)),
            "explanation": [list(kg.labels_of(t)) for t in explanation],
        }
        record.update(extra)
        lines.append(json.dumps(record))
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


FR200K_ENTITIES = 2125
FR200K_RELATIONS = 6
FR200K_TRIPLES = 12357


def write_fr200k_shaped(data_dir: Path, name: str = "FR200K") -> Path:
    """Deterministic synthetic dataset with the FR200K shape.

    The real corpus is not distributable with the test suite, so the loader
    statistics are checked against a generated stand-in with exactly 2125
    entities, 6 relations, and 12357 triples across the three splits.
    """
    rng = np.random.default_rng(200)
    ordered: list[tuple[int, int, int]] = []
    seen: set[tuple[int, int, int]] = set()
    for i in range(FR200K_ENTITIES - 1):
        t = (i, i % FR200K_RELATIONS, i + 1)
        seen.add(t)
        ordered.append(t)
    while len(ordered) < FR200K_TRIPLES:
        t = (
            int(rng.integers(FR200K_ENTITIES)),
            int(rng.integers(FR200K_RELATIONS)),
            int(rng.integers(FR200K_ENTITIES)),
        )
        if t not in seen:
            seen.add(t)
            ordered.append(t)
    n_eval = FR200K_TRIPLES // 10
    splits = {
        "train.tsv": ordered[: FR200K_TRIPLES - 2 * n_eval],
        "valid.tsv": ordered[FR200K_TRIPLES - 2 * n_eval : FR200K_TRIPLES - n_eval],
        "test.tsv": ordered[FR200K_TRIPLES - n_eval :],
    }
    base = data_dir / name
    base.mkdir(parents=True, exist_ok=True)
    for filename, triples in splits.items():
        lines = [f"fr_e{s:04d}\tfr_r{p}\tfr_e{o:04d}" for s, p, o in triples]
        (base / filename).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return base
