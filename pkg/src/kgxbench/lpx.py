"""Explanation search for link predictions as combinatorial subset selection.

Candidate explanations are subsets of the train triples around a prediction;
an objective (necessary or sufficient relevance, both built on partial
re-training) scores them, and the argmax wins. Random per-element baselines
skip the objective entirely.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kge
from .errors import ConfigurationError, ExplanationFailure
from .kg import KnowledgeGraph, Query, Triple

RANDOM_SUBJECT = "random_subject"
RANDOM_PREDICATE = "random_predicate"
RANDOM_OBJECT = "random_object"
SINGLE_TRIPLE = "single_triple"
NEIGHBORHOOD = "neighborhood"

NECESSARY = "necessary"
SUFFICIENT = "sufficient"

_RANDOM_METHODS = (RANDOM_SUBJECT, RANDOM_PREDICATE, RANDOM_OBJECT)

# published method names accepted in setup files, mapped onto the native
# search variants (name, config overrides)
METHOD_ALIASES = {
    "kelpie": (NEIGHBORHOOD, {}),
    "kelpie++": (NEIGHBORHOOD, {"summarize": True}),
    "criage": (SINGLE_TRIPLE, {}),
    "dp": (SINGLE_TRIPLE, {}),
}


@dataclass(frozen=True)
class LpxConfig:
    method: str = NEIGHBORHOOD
    mode: str = NECESSARY
    k: int = 4
    prefilter_size: int = 20
    summarize: bool = False
    seed: int = 0
    comparison_limit: int = 10

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.prefilter_size < self.k:
            raise ValueError("prefilter_size must be >= k")
        if self.mode not in (NECESSARY, SUFFICIENT):
            raise ValueError(f"unknown relevance mode {self.mode!r}")
        if self.comparison_limit < 1:
            raise ValueError("comparison_limit must be >= 1")


@dataclass(frozen=True)
class Explanation:
    triples: tuple[Triple, ...]

    @classmethod
    def of(cls, triples: Iterable[Triple]) -> "Explanation":
        return cls(tuple(sorted(set(triples))))

    @property
    def is_empty(self) -> bool:
        return not self.triples

    def __len__(self) -> int:
        return len(self.triples)

    def __iter__(self):
        return iter(self.triples)


EMPTY_EXPLANATION = Explanation(())


@dataclass(frozen=True)
class CandidateSet:
    prediction: Triple
    candidates: tuple[Explanation, ...]

    def __post_init__(self):
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError("candidate set contains duplicate explanations")
        for c in self.candidates:
            if c.is_empty:
                raise ValueError("candidate explanations must be non-empty")


@dataclass(frozen=True)
class ExplainResult:
    prediction: Triple
    explanation: Explanation
    relevance: float | None
    failure: str | None = None


def baseline_candidates(kg: KnowledgeGraph, prediction: Triple, config: LpxConfig) -> CandidateSet:
    """One candidate: a seeded sample of train triples sharing the chosen element."""
    if config.method not in _RANDOM_METHODS:
        raise ValueError(f"baseline_candidates does not handle method {config.method!r}")
    if config.method == RANDOM_SUBJECT:
        pool = list(kg.incident_train(prediction.subject))
    elif config.method == RANDOM_OBJECT:
        pool = list(kg.incident_train(prediction.object))
    else:
        pool = [t for t in kg.train if t.predicate == prediction.predicate]
    pool = list(dict.fromkeys(pool))
    if not pool:
        return CandidateSet(prediction, ())
    rng = np.random.default_rng(config.seed)
    take = min(config.k, len(pool))
    chosen = rng.choice(len(pool), size=take, replace=False)
    return CandidateSet(prediction, (Explanation.of(pool[i] for i in chosen),))


def _fit_score(kg: KnowledgeGraph, triple: Triple, prediction: Triple) -> int:
    """Undirected train paths of length <= 2 from the triple's far endpoint to the object."""
    s = prediction.subject
    endpoint = triple.object if triple.subject == s else triple.subject
    target = prediction.object
    count = 1 if endpoint == target else 0
    count += kg.edge_count(endpoint, target)
    for mid, mult in kg.neighbors(endpoint).items():
        if mid != endpoint and mid != target:
            count += mult * kg.edge_count(mid, target)
    return count


def kelpie_candidates(kg: KnowledgeGraph, prediction: Triple, config: LpxConfig) -> CandidateSet:
    """Neighborhood search space: prefilter incident triples by fit, then enumerate subsets.

    Subsets of the prefiltered pool are listed by size 1..k and, within one
    size, in lexicographic order of their id triples.
    """
    if config.method not in (NEIGHBORHOOD, SINGLE_TRIPLE):
        raise ValueError(f"kelpie_candidates does not handle method {config.method!r}")
    k = 1 if config.method == SINGLE_TRIPLE else config.k
    incident = list(dict.fromkeys(kg.incident_train(prediction.subject)))
    if not incident:
        return CandidateSet(prediction, ())
    fit = {t: _fit_score(kg, t, prediction) for t in incident}
    pool = sorted(incident, key=lambda t: (-fit[t], t))[: config.prefilter_size]
    if config.summarize:
        pool = list(summarize(kg, set(pool)))
    base = sorted(pool)
    candidates = [
        Explanation(combo) for size in range(1, k + 1) for combo in combinations(base, size)
    ]
    return CandidateSet(prediction, tuple(candidates))


def _degree_bucket(degree: int) -> int:
    if degree <= 1:
        return 0
    if degree <= 4:
        return 1
    return 2


def summarize(kg: KnowledgeGraph, subgraph: set[Triple]) -> set[Triple]:
    """Thin a one-entity subgraph: keep one triple per (predicate, direction,
    far-endpoint degree bucket), choosing the lexicographically smallest."""
    if not subgraph:
        return set()
    train_set = set(kg.train)
    for t in subgraph:
        if t not in train_set:
            raise ValueError(f"triple {t} is not in the train split")
    common = set.intersection(*({t.subject, t.object} for t in subgraph))
    if not common:
        raise ValueError("subgraph triples do not share a common entity")
    focal = min(common)
    representatives: dict[tuple[int, bool, int], Triple] = {}
    for t in sorted(subgraph):
        outgoing = t.subject == focal
        far = t.object if outgoing else t.subject
        key = (t.predicate, outgoing, _degree_bucket(kg.train_degree(far)))
        representatives.setdefault(key, t)
    return set(representatives.values())


def comparison_set(
    model: kge.KgeModel,
    kg: KnowledgeGraph,
    prediction: Triple,
    limit: int,
) -> tuple[int, ...]:
    """First `limit` entities (ascending id) whose completion differs from the object."""
    if limit < 1:
        raise ValueError("limit must be >= 1")
    found = []
    for entity in range(kg.n_entities):
        if kge.lp(model, kg, Query(entity, prediction.predicate)) != prediction.object:
            found.append(entity)
            if len(found) == limit:
                break
    return tuple(found)


def _transplant(triples: Iterable[Triple], old_subject: int, new_subject: int) -> list[Triple]:
    moved = []
    for t in triples:
        s = new_subject if t.subject == old_subject else t.subject
        o = new_subject if t.object == old_subject else t.object
        moved.append(Triple(s, t.predicate, o))
    return moved


def relevance(
    model: kge.KgeModel,
    kg: KnowledgeGraph,
    prediction: Triple,
    candidate: Explanation,
    mode: str,
    config: LpxConfig,
    comparison: Sequence[int] | None = None,
) -> float:
    """Objective value of a candidate explanation.

    Necessary: rank degradation of the prediction after post-training its
    subject without the candidate triples. Sufficient: mean rank improvement
    of (c, p, o) after transplanting the candidate onto each comparison
    entity c and post-training c's row.
    """
    for t in candidate:
        if prediction.subject not in (t.subject, t.object):
            raise ValueError(f"candidate triple {t} is not incident to the prediction subject")
    if mode == NECESSARY:
        base = kge.rank(model, kg, prediction).rank
        retrained = kge.post_train(model, kg, prediction.subject, removed=candidate.triples)
        return kge.rank(retrained, kg, prediction).rank - base
    if mode == SUFFICIENT:
        entities = tuple(comparison) if comparison is not None else comparison_set(
            model, kg, prediction, config.comparison_limit
        )
        if not entities:
            raise ConfigurationError("sufficient relevance needs a non-empty comparison set")
        improvements = []
        for c in entities:
            moved = _transplant(candidate.triples, prediction.subject, c)
            target = Triple(c, prediction.predicate, prediction.object)
            before = kge.rank(model, kg, target).rank
            retrained = kge.post_train(model, kg, c, added=moved)
            improvements.append(before - kge.rank(retrained, kg, target).rank)
        return float(np.mean(improvements))
    raise ValueError(f"unknown relevance mode {mode!r}")


def best_explanation(
    prediction: Triple,
    candidates: Sequence[Explanation],
    relevances: Sequence[float],
) -> Explanation:
    """Argmax by relevance; exact ties prefer fewer triples, then lexicographic order."""
    if not candidates:
        raise ExplanationFailure(f"no candidate explanations for prediction {prediction}")
    if len(candidates) != len(relevances):
        raise ValueError("candidates and relevances are misaligned")
    best = candidates[0]
    best_rel = relevances[0]
    for cand, rel in zip(candidates[1:], relevances[1:]):
        if rel > best_rel or (rel == best_rel and (len(cand), cand.triples) < (len(best), best.triples)):
            best, best_rel = cand, rel
    return best


# -- explainer pipelines ------------------------------------------------------

ExplainerFn = Callable[[KnowledgeGraph, kge.KgeModel, Triple, LpxConfig], tuple[Explanation, float | None]]


def _random_pipeline(kg, model, prediction, config):
    cs = baseline_candidates(kg, prediction, config)
    if not cs.candidates:
        raise ExplanationFailure(f"no train triples involve the requested element of {prediction}")
    return cs.candidates[0], None


def _search_pipeline(kg, model, prediction, config):
    cs = kelpie_candidates(kg, prediction, config)
    if not cs.candidates:
        raise ExplanationFailure(f"no train triples are incident to the subject of {prediction}")
    comparison = None
    if config.mode == SUFFICIENT:
        comparison = comparison_set(model, kg, prediction, config.comparison_limit)
    relevances = [
        relevance(model, kg, prediction, cand, config.mode, config, comparison=comparison)
        for cand in cs.candidates
    ]
    best = best_explanation(prediction, cs.candidates, relevances)
    return best, relevances[cs.candidates.index(best)]


EXPLAINER_REGISTRY: dict[str, ExplainerFn] = {
    RANDOM_SUBJECT: _random_pipeline,
    RANDOM_PREDICATE: _random_pipeline,
    RANDOM_OBJECT: _random_pipeline,
    SINGLE_TRIPLE: _search_pipeline,
    NEIGHBORHOOD: _search_pipeline,
}


def register_explainer(name: str, fn: ExplainerFn) -> None:
    """Plug in a new explanation method usable from setup files."""
    EXPLAINER_REGISTRY[name.lower()] = fn


def resolve_method(name: str) -> tuple[str, dict]:
    """Canonicalize a method name, expanding published-method aliases."""
    lowered = name.lower()
    if lowered in METHOD_ALIASES:
        return METHOD_ALIASES[lowered]
    if lowered in EXPLAINER_REGISTRY:
        return lowered, {}
    raise KeyError(name)


def explain_records(
    predictions: Sequence[Triple],
    kg: KnowledgeGraph,
    model: kge.KgeModel,
    config: LpxConfig,
) -> list[ExplainResult]:
    """Explain each prediction; failures become empty-explanation markers."""
    try:
        pipeline = EXPLAINER_REGISTRY[config.method]
    except KeyError:
        raise ConfigurationError(f"unknown explanation method {config.method!r}") from None
    results = []
    for prediction in predictions:
        try:
            explanation, rel = pipeline(kg, model, prediction, config)
            results.append(ExplainResult(prediction, explanation, rel))
        except (ExplanationFailure, ConfigurationError) as exc:
            results.append(ExplainResult(prediction, EMPTY_EXPLANATION, None, failure=str(exc)))
    return results


def explain(
    predictions: Sequence[Triple],
    kg: KnowledgeGraph,
    model: kge.KgeModel,
    config: LpxConfig,
) -> list[Explanation]:
    return [r.explanation for r in explain_records(predictions, kg, model, config)]
