"""Forward-simulatability evaluation of explanations with an LLM-style verifier.

Each prediction is turned into two link-prediction prompts, one bare and one
carrying the verbalized explanation; a verifier answers both, and the change
in answer correctness (against the embedding model's own completion) is the
per-item score in {-1, 0, +1}.
"""
from __future__ import annotations

import hashlib
import logging
import os
import re
import string
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
import requests

from . import kge
from .errors import VerifierTransportError
from .kg import KnowledgeGraph, Query, Triple
from .lpx import Explanation

logger = logging.getLogger(__name__)

ZERO_SHOT = "zero_shot"
FEW_SHOT = "few_shot"

DEFAULT_TOKEN_ENV = "VERIFIER_API_TOKEN"

_INSTRUCTION_BLOCK = (
    "You are a helpful, respectful and honest assistant.\n"
    "Your response should be crisp, short and not repetitive.\n"
    "Discard any preamble, explanation, greeting, or final consideration."
)

_FORMAT_BLOCK = (
    "A triple is a statement <subject, predicate, object>.\n"
    "The subject and the object are entities, and the predicate is a relation "
    "from the subject to the object.\n"
    "Perform a Link Prediction task, given a query as an incomplete triple "
    "<subject, predicate, ?>, predict the missing object that completes the "
    "triple making it a true statement.\n"
    "Strict requirement: output solely the name of a single object entity, "
    "discard any explanation or other text.\n"
    "Correct format: Elizabeth_of_Bohemia\n"
    "Incorrect format: The object entity is Elizabeth_of_Bohemia."
)

_CONSTRAINT_PREFIX = "Pick the answer from: "


@dataclass(frozen=True)
class EvalConfig:
    prompting: str = ZERO_SHOT
    constrained: bool = False
    n_examples: int = 5
    constraint_size: int = 16
    llm_model: str = "mock"
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.prompting not in (ZERO_SHOT, FEW_SHOT):
            raise ValueError(f"unknown prompting method {self.prompting!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.n_examples < 1:
            raise ValueError("n_examples must be >= 1")
        if self.constrained and self.constraint_size < 2:
            raise ValueError("constraint_size must be >= 2 when constrained")


@dataclass(frozen=True)
class Prompt:
    text: str
    query: Query
    with_explanation: bool


@dataclass(frozen=True)
class SimulationResult:
    raw_answer: str
    matched_entity: int | None
    correct: int


@dataclass(frozen=True)
class FsvVector:
    values: tuple[int, ...]

    def __post_init__(self):
        for v in self.values:
            if v not in (-1, 0, 1):
                raise ValueError(f"FSV value {v} outside {{-1, 0, 1}}")

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        return iter(self.values)


@dataclass(frozen=True)
class EvalRecord:
    prediction: Triple
    lp_answer: int
    without: SimulationResult
    with_explanation: SimulationResult
    fsv: int


def verbalize(kg: KnowledgeGraph, explanation: Explanation) -> str:
    """Render an explanation verbatim, one "(s, p, o)" line per triple."""
    lines = []
    for t in sorted(explanation.triples):
        s, p, o = kg.labels_of(t)
        lines.append(f"({s}, {p}, {o})")
    return "\n".join(lines)


def _fewshot_examples(kg: KnowledgeGraph, query: Query, config: EvalConfig) -> list[Triple]:
    rng = np.random.default_rng(config.seed)
    pool = [t for t in kg.train if t.predicate == query.predicate]
    if len(pool) > config.n_examples:
        idx = rng.choice(len(pool), size=config.n_examples, replace=False)
        return [pool[i] for i in idx]
    chosen = list(pool)
    missing = config.n_examples - len(chosen)
    if missing > 0:
        seen = set(chosen)
        rest = [t for t in kg.train if t not in seen]
        if len(rest) > missing:
            idx = rng.choice(len(rest), size=missing, replace=False)
            chosen.extend(rest[i] for i in idx)
        else:
            chosen.extend(rest)
    return chosen


def _constraint_labels(
    kg: KnowledgeGraph, model: kge.KgeModel, query: Query, config: EvalConfig
) -> list[str]:
    scores = kge.object_scores(model, query.subject, query.predicate)
    answer = kge.lp(model, kg, query)
    by_score = np.argsort(-scores, kind="stable")
    chosen = [answer]
    for entity in by_score:
        if len(chosen) == min(config.constraint_size, kg.n_entities):
            break
        if int(entity) != answer:
            chosen.append(int(entity))
    order = np.random.default_rng(config.seed).permutation(len(chosen))
    return [kg.entity_labels[chosen[i]] for i in order]


def build_prompt(
    kg: KnowledgeGraph,
    model: kge.KgeModel,
    query: Query,
    explanation_text: str,
    config: EvalConfig,
) -> Prompt:
    """Instantiate the prompt template for one query.

    Blocks, separated by blank lines: instruction, task description with
    format rules, optional solved-query examples, the query line (followed
    directly by the explanation lines when present), and the optional
    answer constraint.
    """
    blocks = [_INSTRUCTION_BLOCK, _FORMAT_BLOCK]
    if config.prompting == FEW_SHOT:
        lines = []
        for t in _fewshot_examples(kg, query, config):
            s, p, o = kg.labels_of(t)
            lines.append(f"({s}, {p}, ?) {o}")
        blocks.append("\n".join(lines))
    subject = kg.entity_labels[query.subject]
    predicate = kg.relation_labels[query.predicate]
    query_block = f"({subject}, {predicate}, ?)"
    if explanation_text:
        query_block = f"{query_block}\n{explanation_text}"
    blocks.append(query_block)
    if config.constrained:
        labels = _constraint_labels(kg, model, query, config)
        blocks.append(_CONSTRAINT_PREFIX + ", ".join(labels))
    return Prompt("\n\n".join(blocks), query, bool(explanation_text))


_PUNCT_AND_SPACE = string.punctuation + string.whitespace


def _normalize(text: str) -> str:
    cleaned = text.strip().lower().strip(_PUNCT_AND_SPACE)
    return re.sub(r"\s+", "_", cleaned)


def match_answer(kg: KnowledgeGraph, raw_answer: str) -> int | None:
    """Map a raw verifier answer onto an entity id, or None when nothing matches."""
    normalized = _normalize(raw_answer)
    if not normalized:
        return None
    table: dict[str, int] = {}
    for entity_id, label in enumerate(kg.entity_labels):
        table.setdefault(_normalize(label), entity_id)
    return table.get(normalized)


def indicator(lp_answer: int, matched: int | None) -> int:
    return 1 if matched is not None and matched == lp_answer else 0


def fsv_of(i_without: int, i_with: int) -> int:
    if i_without not in (0, 1) or i_with not in (0, 1):
        raise ValueError("indicator values must be 0 or 1")
    return i_with - i_without


# -- verifiers ----------------------------------------------------------------

class Verifier:
    """Answers link-prediction prompts; stateless between calls."""

    def simulate(self, prompt: str) -> str:
        raise NotImplementedError

    def simulate_batch(self, prompts: Sequence[str]) -> list[str]:
        return [self.simulate(p) for p in prompts]


class ScriptedVerifier(Verifier):
    """Mock verifier driven by a prompt->answer table or a policy callable."""

    def __init__(
        self,
        table: Mapping[str, str] | None = None,
        policy: Callable[[str], str] | None = None,
        default: str = "",
    ):
        self.table = dict(table or {})
        self.policy = policy
        self.default = default

    def simulate(self, prompt: str) -> str:
        if prompt in self.table:
            return self.table[prompt]
        if self.policy is not None:
            return self.policy(prompt)
        return self.default


class HashMockVerifier(Verifier):
    """Deterministic stand-in: picks an entity label from a hash of the prompt."""

    def __init__(self, entity_labels: Sequence[str]):
        if not entity_labels:
            raise ValueError("needs at least one entity label")
        self.entity_labels = tuple(entity_labels)

    def simulate(self, prompt: str) -> str:
        digest = hashlib.sha256(prompt.encode("utf-8")).digest()
        return self.entity_labels[int.from_bytes(digest[:8], "little") % len(self.entity_labels)]


class RemoteVerifier(Verifier):
    """Chat-completion client: POSTs one JSON request per prompt.

    The bearer token is read from ``token_env`` when set; transport problems
    and malformed responses raise VerifierTransportError.
    """

    def __init__(
        self,
        url: str,
        model: str,
        max_tokens: int = 32,
        timeout: float = 30.0,
        token_env: str = DEFAULT_TOKEN_ENV,
        session: requests.Session | None = None,
    ):
        self.url = url
        self.model = model
        self.max_tokens = max_tokens
        self.timeout = timeout
        self.token_env = token_env
        self.session = session or requests.Session()

    def simulate(self, prompt: str) -> str:
        headers = {}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
            "max_tokens": self.max_tokens,
        }
        try:
            response = self.session.post(self.url, json=body, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise VerifierTransportError(f"verifier request failed: {exc}") from exc
        if response.status_code != 200:
            raise VerifierTransportError(f"verifier returned HTTP {response.status_code}")
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise VerifierTransportError(f"malformed verifier response: {exc}") from exc
        return content if isinstance(content, str) else ""


# -- batched evaluation -------------------------------------------------------

def _call_with_retry(verifier, prompts, attempts, backoff):
    for attempt in range(attempts):
        try:
            answers = verifier.simulate_batch(prompts)
            if len(answers) != len(prompts):
                raise VerifierTransportError(
                    f"verifier returned {len(answers)} answers for {len(prompts)} prompts"
                )
            return answers
        except VerifierTransportError as exc:
            if attempt == attempts - 1:
                logger.warning("verifier batch failed after %d attempts: %s", attempts, exc)
                return [None] * len(prompts)
            time.sleep(backoff * (2**attempt))
    return [None] * len(prompts)


def evaluate_records(
    predictions: Sequence[Triple],
    explanations: Sequence[Explanation],
    kg: KnowledgeGraph,
    model: kge.KgeModel,
    verifier: Verifier,
    config: EvalConfig,
    retry_attempts: int = 3,
    retry_backoff: float = 0.5,
    max_in_flight: int = 1,
) -> list[EvalRecord]:
    """Run the without/with simulation pair for every item, batched.

    The two prompts of one item are enqueued consecutively but chunked by
    ``batch_size``, so they may land in different batches. Failed batches are
    retried with exponential backoff; items still failing count as incorrect.
    """
    if len(predictions) != len(explanations):
        raise ValueError("predictions and explanations must have equal length")
    lp_cache: dict[Query, int] = {}
    queries = []
    for prediction in predictions:
        query = Query(prediction.subject, prediction.predicate)
        if query not in lp_cache:
            lp_cache[query] = kge.lp(model, kg, query)
        queries.append(query)

    prompts: list[str] = []
    for query, explanation in zip(queries, explanations):
        text = verbalize(kg, explanation)
        prompts.append(build_prompt(kg, model, query, "", config).text)
        prompts.append(build_prompt(kg, model, query, text, config).text)

    chunks = [prompts[i : i + config.batch_size] for i in range(0, len(prompts), config.batch_size)]
    if max_in_flight > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            answer_chunks = list(
                pool.map(lambda c: _call_with_retry(verifier, c, retry_attempts, retry_backoff), chunks)
            )
    else:
        answer_chunks = [_call_with_retry(verifier, c, retry_attempts, retry_backoff) for c in chunks]
    answers = [a for chunk in answer_chunks for a in chunk]

    records = []
    for i, (prediction, query) in enumerate(zip(predictions, queries)):
        raw_without, raw_with = answers[2 * i], answers[2 * i + 1]
        sims = []
        for raw in (raw_without, raw_with):
            matched = match_answer(kg, raw) if raw is not None else None
            sims.append(SimulationResult(raw or "", matched, indicator(lp_cache[query], matched)))
        records.append(
            EvalRecord(prediction, lp_cache[query], sims[0], sims[1], fsv_of(sims[0].correct, sims[1].correct))
        )
    return records


def evaluate(
    predictions: Sequence[Triple],
    explanations: Sequence[Explanation],
    kg: KnowledgeGraph,
    model: kge.KgeModel,
    verifier: Verifier,
    config: EvalConfig,
    **kwargs,
) -> FsvVector:
    records = evaluate_records(predictions, explanations, kg, model, verifier, config, **kwargs)
    return FsvVector(tuple(r.fsv for r in records))
