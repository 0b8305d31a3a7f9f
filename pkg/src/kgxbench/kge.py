"""Embedding models for link prediction: training, tuning, ranking, post-training."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .kg import KnowledgeGraph, Query, Triple

TRANSLATIONAL = "translational"
COMPLEX = "complex"
KINDS = (TRANSLATIONAL, COMPLEX)

CHECKPOINT_LAYOUT = "kge-checkpoint-1"

# random-search grid used by tune()
GRID_DIMENSIONS = (32, 64, 128)
GRID_LEARNING_RATES = (1e-3, 5e-3, 1e-2)
GRID_MARGINS = (1.0, 2.0)
GRID_NEGATIVES = (5, 10)
DEFAULT_EPOCHS = 100
DEFAULT_BATCH_SIZE = 128
DEFAULT_POST_TRAIN_EPOCHS = 50

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


@dataclass(frozen=True)
class HyperParams:
    dimension: int = 32
    epochs: int = DEFAULT_EPOCHS
    learning_rate: float = 1e-2
    batch_size: int = DEFAULT_BATCH_SIZE
    negatives_per_positive: int = 5
    margin: float = 1.0
    regularization: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be positive")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.regularization < 0:
            raise ValueError("regularization must be non-negative")


@dataclass
class KgeModel:
    """Trained embeddings; real matrices for translational models, complex otherwise."""

    kind: str
    entity_embeddings: np.ndarray
    relation_embeddings: np.ndarray
    hp: HyperParams

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        expected = np.complexfloating if self.kind == COMPLEX else np.floating
        for mat in (self.entity_embeddings, self.relation_embeddings):
            if mat.ndim != 2 or mat.shape[1] != self.hp.dimension:
                raise ValueError("embedding matrix shape does not match the configured dimension")
            if not np.issubdtype(mat.dtype, expected):
                raise ValueError(f"embedding dtype {mat.dtype} does not match kind {self.kind}")

    @property
    def n_entities(self) -> int:
        return self.entity_embeddings.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation_embeddings.shape[0]


class RankedTriple(NamedTuple):
    triple: Triple
    rank: float


def _check_ids(model: KgeModel, s: int, p: int, o: int | None = None) -> None:
    if not 0 <= s < model.n_entities:
        raise ValueError(f"subject id {s} out of range")
    if not 0 <= p < model.n_relations:
        raise ValueError(f"predicate id {p} out of range")
    if o is not None and not 0 <= o < model.n_entities:
        raise ValueError(f"object id {o} out of range")


def score(model: KgeModel, s: int, p: int, o: int) -> float:
    """Plausibility of (s, p, o); higher is better for both model kinds."""
    _check_ids(model, s, p, o)
    e_s = model.entity_embeddings[s]
    r_p = model.relation_embeddings[p]
    e_o = model.entity_embeddings[o]
    if model.kind == TRANSLATIONAL:
        return float(-np.linalg.norm(e_s + r_p - e_o))
    return float(np.real(np.sum(e_s * r_p * np.conj(e_o))))


def object_scores(model: KgeModel, s: int, p: int) -> np.ndarray:
    """Scores of (s, p, e) for every entity e, as one vector."""
    _check_ids(model, s, p)
    ent = model.entity_embeddings
    rel = model.relation_embeddings
    if model.kind == TRANSLATIONAL:
        return -np.linalg.norm(ent[s] + rel[p] - ent, axis=1)
    sp = ent[s] * rel[p]
    return np.real(np.conj(ent) @ sp)


# -- internal training representation: a dict of real float64 arrays --------

def _init_params(kind: str, n_entities: int, n_relations: int, dim: int, rng) -> dict[str, np.ndarray]:
    scale = 1.0 / math.sqrt(dim)

    def draw(rows: int) -> np.ndarray:
        return rng.uniform(-scale, scale, size=(rows, dim))

    if kind == TRANSLATIONAL:
        return {"ent": draw(n_entities), "rel": draw(n_relations)}
    return {
        "ent_re": draw(n_entities),
        "ent_im": draw(n_entities),
        "rel_re": draw(n_relations),
        "rel_im": draw(n_relations),
    }


def _params_from_model(model: KgeModel) -> dict[str, np.ndarray]:
    if model.kind == TRANSLATIONAL:
        return {"ent": model.entity_embeddings.copy(), "rel": model.relation_embeddings.copy()}
    return {
        "ent_re": model.entity_embeddings.real.copy(),
        "ent_im": model.entity_embeddings.imag.copy(),
        "rel_re": model.relation_embeddings.real.copy(),
        "rel_im": model.relation_embeddings.imag.copy(),
    }


def _model_from_params(kind: str, params: dict[str, np.ndarray], hp: HyperParams) -> KgeModel:
    if kind == TRANSLATIONAL:
        ent, rel = params["ent"], params["rel"]
    else:
        ent = params["ent_re"] + 1j * params["ent_im"]
        rel = params["rel_re"] + 1j * params["rel_im"]
    for mat in (ent, rel):
        if not np.all(np.isfinite(mat)):
            raise ArithmeticError("non-finite embedding entries after training")
    return KgeModel(kind, ent, rel, hp)


def _translational_grads(params, positives, negatives, margin, regularization):
    ent, rel = params["ent"], params["rel"]
    n_pairs = len(negatives)
    k = n_pairs // len(positives)

    def distances(triples):
        diff = ent[triples[:, 0]] + rel[triples[:, 1]] - ent[triples[:, 2]]
        dist = np.linalg.norm(diff, axis=1)
        return diff, dist

    diff_pos, dist_pos = distances(positives)
    diff_neg, dist_neg = distances(negatives)
    hinge = margin + np.repeat(dist_pos, k) - dist_neg
    active = hinge > 0
    loss = float(np.sum(hinge[active]) / n_pairs)

    grads = {"ent": np.zeros_like(ent), "rel": np.zeros_like(rel)}
    # d loss / d dist_pos_i = (#active pairs of i) / n_pairs; d / d dist_neg = -1/n_pairs
    coef_pos = np.add.reduceat(active.astype(np.float64), np.arange(0, n_pairs, k)) / n_pairs
    coef_neg = np.where(active, -1.0 / n_pairs, 0.0)

    safe_pos = np.maximum(dist_pos, 1e-12)
    safe_neg = np.maximum(dist_neg, 1e-12)
    unit_pos = diff_pos / safe_pos[:, None] * coef_pos[:, None]
    unit_neg = diff_neg / safe_neg[:, None] * coef_neg[:, None]
    for triples, unit in ((positives, unit_pos), (negatives, unit_neg)):
        np.add.at(grads["ent"], triples[:, 0], unit)
        np.add.at(grads["rel"], triples[:, 1], unit)
        np.add.at(grads["ent"], triples[:, 2], -unit)
    if regularization:
        loss += regularization * sum(float(np.sum(v * v)) for v in params.values())
        for key in grads:
            grads[key] += 2.0 * regularization * params[key]
    return loss, grads


def _complex_grads(params, positives, negatives, regularization):
    ent_re, ent_im = params["ent_re"], params["ent_im"]
    rel_re, rel_im = params["rel_re"], params["rel_im"]
    triples = np.concatenate([positives, negatives])
    labels = np.concatenate([np.ones(len(positives)), np.zeros(len(negatives))])
    total = len(triples)

    s_idx, p_idx, o_idx = triples[:, 0], triples[:, 1], triples[:, 2]
    a, b = ent_re[s_idx], ent_im[s_idx]
    c, d = rel_re[p_idx], rel_im[p_idx]
    e, f = ent_re[o_idx], ent_im[o_idx]

    logits = np.sum((a * c - b * d) * e + (a * d + b * c) * f, axis=1)
    loss = float(np.sum(np.logaddexp(0.0, logits) - labels * logits) / total)
    dlogit = ((1.0 / (1.0 + np.exp(-logits))) - labels) / total

    grads = {key: np.zeros_like(val) for key, val in params.items()}
    w = dlogit[:, None]
    np.add.at(grads["ent_re"], s_idx, w * (c * e + d * f))
    np.add.at(grads["ent_im"], s_idx, w * (-d * e + c * f))
    np.add.at(grads["rel_re"], p_idx, w * (a * e + b * f))
    np.add.at(grads["rel_im"], p_idx, w * (-b * e + a * f))
    np.add.at(grads["ent_re"], o_idx, w * (a * c - b * d))
    np.add.at(grads["ent_im"], o_idx, w * (a * d + b * c))
    if regularization:
        loss += regularization * sum(float(np.sum(v * v)) for v in params.values())
        for key in grads:
            grads[key] += 2.0 * regularization * params[key]
    return loss, grads


def batch_loss_and_grads(
    kind: str,
    params: dict[str, np.ndarray],
    positives: np.ndarray,
    negatives: np.ndarray,
    hp: HyperParams,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mini-batch loss and dense analytic gradients.

    Translational models use pairwise margin ranking loss (negatives grouped
    per positive), complex models binary cross-entropy with logits. Both add
    an optional L2 penalty over all parameters.
    """
    if kind == TRANSLATIONAL:
        return _translational_grads(params, positives, negatives, hp.margin, hp.regularization)
    if kind == COMPLEX:
        return _complex_grads(params, positives, negatives, hp.regularization)
    raise ValueError(f"unknown model kind {kind!r}")


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float):
        self.lr = lr
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - _ADAM_BETA1 ** self.t
        bc2 = 1.0 - _ADAM_BETA2 ** self.t
        for key, g in grads.items():
            m = self.m[key]
            v = self.v[key]
            m *= _ADAM_BETA1
            m += (1.0 - _ADAM_BETA1) * g
            v *= _ADAM_BETA2
            v += (1.0 - _ADAM_BETA2) * g * g
            params[key] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + _ADAM_EPS)


def _corrupt(batch: np.ndarray, k: int, rng, n_entities: int) -> np.ndarray:
    repeated = np.repeat(batch, k, axis=0)
    side = rng.integers(0, 2, size=len(repeated))
    replacement = rng.integers(0, n_entities, size=len(repeated))
    negatives = repeated.copy()
    negatives[side == 0, 0] = replacement[side == 0]
    negatives[side == 1, 2] = replacement[side == 1]
    return negatives


def train(
    kg: KnowledgeGraph,
    kind: str,
    hp: HyperParams,
    epoch_callback: Callable[[int, float], None] | None = None,
) -> KgeModel:
    """Train embeddings on the train split; bit-identical for a fixed seed."""
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    if not kg.train:
        raise ValueError("cannot train on an empty train split")
    rng = np.random.default_rng(hp.seed)
    params = _init_params(kind, kg.n_entities, kg.n_relations, hp.dimension, rng)
    optimizer = _Adam(params, hp.learning_rate)
    data = np.asarray(kg.train, dtype=np.int64)
    for epoch in range(hp.epochs):
        order = rng.permutation(len(data))
        epoch_losses = []
        for start in range(0, len(data), hp.batch_size):
            batch = data[order[start : start + hp.batch_size]]
            negatives = _corrupt(batch, hp.negatives_per_positive, rng, kg.n_entities)
            loss, grads = batch_loss_and_grads(kind, params, batch, negatives, hp)
            optimizer.step(params, grads)
            epoch_losses.append(loss)
        if epoch_callback is not None:
            epoch_callback(epoch, float(np.mean(epoch_losses)))
    return _model_from_params(kind, params, hp)


def rank_components(model: KgeModel, kg: KnowledgeGraph, triple: Triple) -> tuple[float, float, float]:
    """(optimistic, realistic, pessimistic) filtered rank of the triple's object."""
    s, p, o = triple
    _check_ids(model, s, p, o)
    scores = object_scores(model, s, p)
    excluded = kg.known_objects(s, p, include_test=True) - {o}
    allowed = np.ones(model.n_entities, dtype=bool)
    if excluded:
        allowed[list(excluded)] = False
    target = scores[o]
    candidate_scores = scores[allowed]
    optimistic = 1.0 + float(np.count_nonzero(candidate_scores > target))
    ties = float(np.count_nonzero(candidate_scores == target)) - 1.0
    pessimistic = optimistic + ties
    return optimistic, (optimistic + pessimistic) / 2.0, pessimistic


def rank(model: KgeModel, kg: KnowledgeGraph, triple: Triple) -> RankedTriple:
    """Realistic filtered rank; other true completions are removed first."""
    _, realistic, _ = rank_components(model, kg, triple)
    return RankedTriple(triple, realistic)


def lp(model: KgeModel, kg: KnowledgeGraph, query: Query) -> int:
    """Best object completion of (s, p, ?), skipping known train/validation objects.

    Falls back to the unfiltered argmax when filtering removes every entity;
    exact ties go to the smallest entity id.
    """
    s, p = query
    _check_ids(model, s, p)
    scores = object_scores(model, s, p)
    known = kg.known_objects(s, p, include_test=False)
    if len(known) < model.n_entities:
        masked = scores.copy()
        if known:
            masked[list(known)] = -np.inf
    else:
        masked = scores
    return int(np.argmax(masked))


def select_predictions(
    ranked: Sequence[RankedTriple],
    threshold: float = 1.0,
    n_max: int = 100,
) -> list[Triple]:
    """Triples ranked at or under the threshold, input order, truncated to n_max."""
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    selected = [rt.triple for rt in ranked if rt.rank <= threshold]
    return selected[:n_max]


def validation_mrr(model: KgeModel, kg: KnowledgeGraph) -> float:
    """Mean reciprocal realistic filtered rank over the validation split."""
    if not kg.validation:
        raise ValueError("validation split is empty")
    return float(np.mean([1.0 / rank(model, kg, t).rank for t in kg.validation]))


def sample_grid_configs(budget: int, seed: int) -> list[HyperParams]:
    """Seeded uniform samples from the documented search grid, in draw order."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    configs = []
    for _ in range(budget):
        dimension = GRID_DIMENSIONS[rng.integers(len(GRID_DIMENSIONS))]
        lr = GRID_LEARNING_RATES[rng.integers(len(GRID_LEARNING_RATES))]
        margin = GRID_MARGINS[rng.integers(len(GRID_MARGINS))]
        negatives = GRID_NEGATIVES[rng.integers(len(GRID_NEGATIVES))]
        configs.append(
            HyperParams(
                dimension=dimension,
                epochs=DEFAULT_EPOCHS,
                learning_rate=lr,
                batch_size=DEFAULT_BATCH_SIZE,
                negatives_per_positive=negatives,
                margin=margin,
                regularization=0.0,
                seed=seed,
            )
        )
    return configs


def tune(kg: KnowledgeGraph, kind: str, budget: int, seed: int = 0) -> HyperParams:
    """Random search over the grid; best validation MRR wins, earlier sample on ties."""
    if not kg.validation:
        raise ValueError("tuning requires a non-empty validation split")
    configs = sample_grid_configs(budget, seed)
    best_hp = None
    best_mrr = -np.inf
    for hp in configs:
        model = train(kg, kind, hp)
        mrr = validation_mrr(model, kg)
        if mrr > best_mrr:
            best_hp, best_mrr = hp, mrr
    return best_hp


def post_train(
    model: KgeModel,
    kg: KnowledgeGraph,
    focus_entity: int,
    removed: Sequence[Triple] = (),
    added: Sequence[Triple] = (),
    epochs: int = DEFAULT_POST_TRAIN_EPOCHS,
) -> KgeModel:
    """Re-train only the focus entity's embedding row on its modified neighborhood.

    The focus row is re-initialized from a seed derived from (hp.seed,
    focus_entity) and fitted to the focus-incident train triples with
    `removed` dropped and `added` included; every other parameter is frozen
    and the input model is left untouched.
    """
    if not 0 <= focus_entity < model.n_entities:
        raise ValueError(f"focus entity id {focus_entity} out of range")
    train_set = set(kg.train)
    removed_set = set(removed)
    added_set = set(added)
    for t in removed_set:
        if t not in train_set:
            raise ValueError(f"removed triple {t} is not in the train split")
    for t in added_set:
        if not (0 <= t.subject < model.n_entities and 0 <= t.object < model.n_entities):
            raise ValueError(f"added triple {t} has an entity id out of range")
        if not 0 <= t.predicate < model.n_relations:
            raise ValueError(f"added triple {t} has a relation id out of range")
    for t in removed_set | added_set:
        if focus_entity not in (t.subject, t.object):
            raise ValueError(f"triple {t} does not feature the focus entity {focus_entity}")

    params = _params_from_model(model)
    hp = model.hp
    rng = np.random.default_rng(np.random.SeedSequence((hp.seed, focus_entity)))
    scale = 1.0 / math.sqrt(hp.dimension)
    ent_keys = ("ent",) if model.kind == TRANSLATIONAL else ("ent_re", "ent_im")
    for key in ent_keys:
        params[key][focus_entity] = rng.uniform(-scale, scale, size=hp.dimension)

    data_list = [t for t in kg.incident_train(focus_entity) if t not in removed_set]
    present = set(data_list)
    data_list.extend(sorted(added_set - present))
    if data_list and epochs > 0:
        data = np.asarray(data_list, dtype=np.int64)
        # Adam state for the focus row only; all other rows never move.
        opt = _Adam({key: params[key][focus_entity] for key in ent_keys}, hp.learning_rate)
        for _ in range(epochs):
            order = rng.permutation(len(data))
            for start in range(0, len(data), hp.batch_size):
                batch = data[order[start : start + hp.batch_size]]
                negatives = _corrupt(batch, hp.negatives_per_positive, rng, model.n_entities)
                _, grads = batch_loss_and_grads(model.kind, params, batch, negatives, hp)
                # row slices are views, so the optimizer writes through to params
                row_params = {key: params[key][focus_entity] for key in ent_keys}
                row_grads = {key: grads[key][focus_entity] for key in ent_keys}
                opt.step(row_params, row_grads)
    return _model_from_params(model.kind, params, hp)


def model_to_bytes(model: KgeModel) -> bytes:
    """Checkpoint encoding: 8-byte LE header length, JSON header, row-major matrices."""
    header = {
        "layout": CHECKPOINT_LAYOUT,
        "kind": model.kind,
        "hp": asdict(model.hp),
        "entities": model.n_entities,
        "relations": model.n_relations,
        "dimension": model.hp.dimension,
        "dtype": str(model.entity_embeddings.dtype),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    return b"".join(
        (
            struct.pack("<Q", len(blob)),
            blob,
            np.ascontiguousarray(model.entity_embeddings).tobytes(),
            np.ascontiguousarray(model.relation_embeddings).tobytes(),
        )
    )


def model_from_bytes(raw: bytes) -> KgeModel:
    if len(raw) < 8:
        raise ValueError("checkpoint is truncated")
    (header_len,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    if header.get("layout") != CHECKPOINT_LAYOUT:
        raise ValueError(f"unsupported checkpoint layout {header.get('layout')!r}")
    dtype = np.dtype(header["dtype"])
    n_ent, n_rel, dim = header["entities"], header["relations"], header["dimension"]
    body = raw[8 + header_len :]
    ent_bytes = n_ent * dim * dtype.itemsize
    rel_bytes = n_rel * dim * dtype.itemsize
    if len(body) != ent_bytes + rel_bytes:
        raise ValueError(f"checkpoint has {len(body)} matrix bytes, expected {ent_bytes + rel_bytes}")
    ent = np.frombuffer(body[:ent_bytes], dtype=dtype).reshape(n_ent, dim).copy()
    rel = np.frombuffer(body[ent_bytes:], dtype=dtype).reshape(n_rel, dim).copy()
    return KgeModel(header["kind"], ent, rel, HyperParams(**header["hp"]))


def save_model(model: KgeModel, path: str | Path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path: str | Path) -> KgeModel:
    return model_from_bytes(Path(path).read_bytes())
