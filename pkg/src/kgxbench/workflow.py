"""Experiment workflow: setup CSV parsing, task DAG, cached parallel execution.

Every setup row expands into the fixed seven-task chain (tune, train, rank,
select, explain, evaluate, metrics). Nodes with identical kind and
canonicalized parameters are merged, so rows sharing a KG and model reuse one
training path. Task outputs live as named artifacts in the working directory;
a task whose artifact already exists with matching input hashes is skipped.
"""
from __future__ import annotations

import concurrent.futures as cf
import csv
import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import fsv, kge, lpx, metrics as metrics_mod
from .errors import ConfigurationError, ParseError
from .kg import KnowledgeGraph, Triple, load_ground_truth, load_kg

logger = logging.getLogger(__name__)

VALIDATION = "validation"
COMPARISON = "comparison"

FORMAT_VERSION = "kgxbench-artifacts-1"

TUNE, TRAIN, RANK, SELECT, EXPLAIN, EVALUATE, METRICS = (
    "tune",
    "train",
    "rank",
    "select",
    "explain",
    "evaluate",
    "metrics",
)

GROUND_TRUTH_METHOD = "ground-truth"

KGE_NAME_KINDS = {
    "transe": kge.TRANSLATIONAL,
    "translational": kge.TRANSLATIONAL,
    "complex": kge.COMPLEX,
}

_EVAL_KEYS = {
    "prompting",
    "constrained",
    "n_examples",
    "constraint_size",
    "llm",
    "llm_model",
    "batch_size",
    "seed",
}
_LPX_KEYS = {"method", "mode", "k", "prefilter_size", "summarize", "seed", "comparison_limit"}


def resolve_kge_kind(kge_name: str) -> str:
    try:
        return KGE_NAME_KINDS[kge_name.lower()]
    except KeyError:
        raise KeyError(kge_name) from None


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class SetupRow:
    kg_name: str
    kge_name: str
    lpx_config: lpx.LpxConfig | None
    eval_config: fsv.EvalConfig
    metric_names: tuple[str, ...]


@dataclass
class EngineOptions:
    verifier: str = "mock"
    verifier_url: str | None = None
    seed_override: int | None = None
    tune_budget: int = 2
    tune_seed: int = 0
    select_threshold: float = 1.0
    select_n_max: int = 100


# -- setup parsing ------------------------------------------------------------

def _parse_config_cell(cell: str | None, allowed: set[str], line: int) -> dict:
    if cell is None or not cell.strip():
        return {}
    try:
        parsed = json.loads(cell)
    except json.JSONDecodeError as exc:
        raise ParseError(f"config cell is not valid JSON: {exc}", line=line) from None
    if not isinstance(parsed, dict):
        raise ParseError("config cell must be a JSON object", line=line)
    unknown = set(parsed) - allowed
    if unknown:
        raise ParseError(f"unknown config keys {sorted(unknown)}", line=line)
    return parsed


def _parse_eval_config(cell: str | None, line: int) -> fsv.EvalConfig:
    raw = _parse_config_cell(cell, _EVAL_KEYS, line)
    if "llm" in raw:
        raw["llm_model"] = raw.pop("llm")
    try:
        return fsv.EvalConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"invalid eval_config: {exc}", line=line) from None


def _parse_lpx_config(cell: str | None, line: int) -> lpx.LpxConfig:
    raw = _parse_config_cell(cell, _LPX_KEYS, line)
    method_name = raw.pop("method", lpx.NEIGHBORHOOD)
    try:
        method, overrides = lpx.resolve_method(str(method_name))
    except KeyError:
        raise ParseError(f"unknown explanation method {method_name!r}", line=line) from None
    merged = dict(overrides)
    merged.update(raw)
    try:
        return lpx.LpxConfig(method=method, **merged)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"invalid lpx_config: {exc}", line=line) from None


def _parse_metric_names(cell: str | None, mode: str, line: int) -> tuple[str, ...]:
    if cell is None or not cell.strip():
        if mode == VALIDATION:
            return ("classification_report",)
        return ("average_fsv", "fsv_distribution")
    text = cell.strip()
    if text.startswith("["):
        try:
            names = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"metric_names cell is not valid JSON: {exc}", line=line) from None
        if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
            raise ParseError("metric_names must be a JSON array of strings", line=line)
    else:
        names = [n.strip() for n in text.split(",") if n.strip()]
    for name in names:
        base = name.split("@", 1)[0]
        if base not in METRIC_REGISTRY:
            raise ParseError(f"unknown metric {name!r}", line=line)
        if mode == VALIDATION and base != "classification_report":
            raise ParseError("validation experiments always use classification_report", line=line)
    if not names:
        raise ParseError("metric_names cell is empty", line=line)
    return tuple(names)


def _check_name(value: str, column: str, line: int) -> str:
    value = value.strip()
    if not value or any(not (c.isalnum() or c in "_.-") for c in value):
        raise ParseError(f"{column} {value!r} must be a non-empty [A-Za-z0-9_.-] name", line=line)
    return value


def parse_setup(csv_path: str | Path, mode: str) -> list[SetupRow]:
    """Read the experiment matrix; config cells are JSON objects."""
    if mode not in (VALIDATION, COMPARISON):
        raise ValueError(f"unknown experiment mode {mode!r}")
    path = Path(csv_path)
    if not path.exists():
        raise ParseError("setup file does not exist", source=str(path))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError("setup file has no header row", source=str(path))
        headers = [h.strip() for h in reader.fieldnames]
        missing = {"kg_name", "kge_name", "eval_config"} - set(headers)
        if missing:
            raise ParseError(f"missing required columns {sorted(missing)}", source=str(path))
        if mode == VALIDATION and "lpx_config" in headers:
            raise ParseError("validation setups must not declare an lpx_config column", source=str(path))
        if mode == COMPARISON and "lpx_config" not in headers:
            raise ParseError("comparison setups require an lpx_config column", source=str(path))
        rows = []
        for record in reader:
            line = reader.line_num
            record = {(k or "").strip(): v for k, v in record.items() if k is not None}
            kg_name = _check_name(record.get("kg_name") or "", "kg_name", line)
            kge_name = _check_name(record.get("kge_name") or "", "kge_name", line)
            try:
                resolve_kge_kind(kge_name)
            except KeyError:
                raise ParseError(f"unknown KGE model {kge_name!r}", line=line) from None
            eval_config = _parse_eval_config(record.get("eval_config"), line)
            lpx_config = _parse_lpx_config(record.get("lpx_config"), line) if mode == COMPARISON else None
            metric_names = _parse_metric_names(record.get("metric_names"), mode, line)
            rows.append(SetupRow(kg_name, kge_name, lpx_config, eval_config, metric_names))
    if not rows:
        raise ParseError("setup file has no data rows", source=str(path))
    return rows


# -- task graph ---------------------------------------------------------------

FileRef = tuple[str, str]  # ("file", workdir-relative path) | ("artifact", output name)


class TaskSpec:
    """One unit of work; identity is (kind, canonicalized params)."""

    def __init__(
        self,
        kind: str,
        params: Mapping,
        output_name: str,
        requires: frozenset[str] = frozenset(),
        inputs: Mapping[str, FileRef] | None = None,
    ):
        self.kind = kind
        self.params = dict(params)
        self.params_json = canonical_json(self.params)
        self.output_name = output_name
        self.requires = frozenset(requires)
        self.inputs = dict(inputs or {})

    @property
    def identity(self) -> tuple[str, str]:
        return (self.kind, self.params_json)

    def __repr__(self) -> str:
        return f"TaskSpec({self.kind}, {self.output_name})"


class Dag:
    def __init__(self, nodes: Mapping[str, TaskSpec]):
        self.nodes = dict(nodes)
        for spec in self.nodes.values():
            for dep in spec.requires:
                if dep not in self.nodes:
                    raise ValueError(f"{spec.output_name} requires unknown task {dep}")
        self.topological_order()

    def edges(self) -> list[tuple[str, str]]:
        return [(dep, name) for name, spec in self.nodes.items() for dep in spec.requires]

    def dependents(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = {name: set() for name in self.nodes}
        for dep, name in self.edges():
            out[dep].add(name)
        return out

    def topological_order(self) -> list[str]:
        remaining = {name: set(spec.requires) for name, spec in self.nodes.items()}
        order = []
        while remaining:
            ready = sorted(name for name, deps in remaining.items() if not deps)
            if not ready:
                raise ValueError("task graph contains a cycle")
            for name in ready:
                order.append(name)
                del remaining[name]
            for deps in remaining.values():
                deps.difference_update(ready)
        return order

    def tasks_of_kind(self, kind: str) -> list[TaskSpec]:
        return [spec for spec in self.nodes.values() if spec.kind == kind]


def _config_slug(prefix: str, payload: str) -> str:
    digest = hashlib.sha256(payload.encode("utf-8")).hexdigest()[:8]
    return f"{prefix}-{digest}"


def _metric_slug(names: Sequence[str]) -> str:
    joined = "-".join(names)
    return "".join(c if (c.isalnum() or c in "_.-") else "-" for c in joined)


def _kg_file_inputs(kg_name: str) -> dict[str, FileRef]:
    base = f"data/{kg_name}"
    return {
        "train": ("file", f"{base}/train.tsv"),
        "validation": ("file", f"{base}/valid.tsv"),
        "test": ("file", f"{base}/test.tsv"),
    }


def ground_truth_path(kg_name: str) -> str:
    return f"data/{kg_name}/ground_truth.jsonl"


def instantiate_dag(rows: Sequence[SetupRow], mode: str, options: EngineOptions | None = None) -> Dag:
    """Expand setup rows into the task graph, merging identical tasks."""
    if not rows:
        raise ValueError("cannot instantiate a DAG from zero setup rows")
    options = options or EngineOptions()
    by_identity: dict[tuple[str, str], TaskSpec] = {}
    nodes: dict[str, TaskSpec] = {}

    def add(spec: TaskSpec) -> TaskSpec:
        existing = by_identity.get(spec.identity)
        if existing is not None:
            return existing
        if spec.output_name in nodes:
            raise ValueError(f"conflicting tasks for output {spec.output_name}")
        by_identity[spec.identity] = spec
        nodes[spec.output_name] = spec
        return spec

    for row in rows:
        eval_config = row.eval_config
        lpx_config = row.lpx_config
        if options.seed_override is not None:
            eval_config = replace(eval_config, seed=options.seed_override)
            if lpx_config is not None:
                lpx_config = replace(lpx_config, seed=options.seed_override)
        tune_seed = options.seed_override if options.seed_override is not None else options.tune_seed

        pair = f"{row.kg_name}_{row.kge_name}"
        kg_files = _kg_file_inputs(row.kg_name)

        tune_task = add(
            TaskSpec(
                TUNE,
                {"kg_name": row.kg_name, "kge_name": row.kge_name, "seed": tune_seed, "budget": options.tune_budget},
                f"hp_config.{pair}",
                inputs=kg_files,
            )
        )
        train_task = add(
            TaskSpec(
                TRAIN,
                {"kg_name": row.kg_name, "kge_name": row.kge_name},
                f"kge.{pair}",
                requires=frozenset({tune_task.output_name}),
                inputs={**kg_files, "hp": ("artifact", tune_task.output_name)},
            )
        )
        rank_task = add(
            TaskSpec(
                RANK,
                {"kg_name": row.kg_name, "kge_name": row.kge_name},
                f"ranked.{pair}",
                requires=frozenset({train_task.output_name}),
                inputs={**kg_files, "model": ("artifact", train_task.output_name)},
            )
        )
        select_task = add(
            TaskSpec(
                SELECT,
                {
                    "kg_name": row.kg_name,
                    "kge_name": row.kge_name,
                    "threshold": options.select_threshold,
                    "n_max": options.select_n_max,
                },
                f"predictions.{pair}",
                requires=frozenset({rank_task.output_name}),
                inputs={**kg_files, "ranked": ("artifact", rank_task.output_name)},
            )
        )

        if mode == VALIDATION:
            lpx_params: dict | str = GROUND_TRUTH_METHOD
            lpx_slug = GROUND_TRUTH_METHOD
            explain_inputs = {**kg_files, "ground_truth": ("file", ground_truth_path(row.kg_name))}
        else:
            lpx_params = asdict(lpx_config)
            lpx_slug = _config_slug(lpx_config.method, canonical_json(lpx_params))
            explain_inputs = {
                **kg_files,
                "model": ("artifact", train_task.output_name),
                "predictions": ("artifact", select_task.output_name),
            }
        explain_task = add(
            TaskSpec(
                EXPLAIN,
                {"kg_name": row.kg_name, "kge_name": row.kge_name, "lpx": lpx_params},
                f"explanations.{pair}_{lpx_slug}",
                requires=frozenset({select_task.output_name}),
                inputs=explain_inputs,
            )
        )

        eval_params = asdict(eval_config)
        eval_slug = _config_slug(eval_config.prompting, canonical_json(eval_params))
        evaluate_inputs = {
            **kg_files,
            "model": ("artifact", train_task.output_name),
            "explanations": ("artifact", explain_task.output_name),
        }
        if mode == COMPARISON:
            evaluate_inputs["predictions"] = ("artifact", select_task.output_name)
        evaluate_task = add(
            TaskSpec(
                EVALUATE,
                {
                    "kg_name": row.kg_name,
                    "kge_name": row.kge_name,
                    "lpx": lpx_params,
                    "eval": eval_params,
                    "verifier": options.verifier,
                },
                f"scores.{pair}_{lpx_slug}_{eval_slug}",
                requires=frozenset({explain_task.output_name}),
                inputs=evaluate_inputs,
            )
        )
        add(
            TaskSpec(
                METRICS,
                {
                    "kg_name": row.kg_name,
                    "kge_name": row.kge_name,
                    "lpx": lpx_params,
                    "eval": eval_params,
                    "verifier": options.verifier,
                    "metric_names": list(row.metric_names),
                },
                f"metrics.{pair}_{lpx_slug}_{eval_slug}_{_metric_slug(row.metric_names)}",
                requires=frozenset({evaluate_task.output_name}),
                inputs={"scores": ("artifact", evaluate_task.output_name)},
            )
        )
    return Dag(nodes)


# -- artifact store -----------------------------------------------------------

def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ArtifactStore:
    """Named artifacts in a working directory plus an index of cache keys.

    Commits are atomic (write to a temporary file, then rename) and the index
    is rewritten atomically after the artifact lands, so a crash can never
    leave an artifact that passes the completeness check with stale inputs.
    """

    INDEX_NAME = ".artifact_index.json"

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._index_path = self.root / self.INDEX_NAME
        if self._index_path.exists():
            self._index = json.loads(self._index_path.read_text(encoding="utf-8"))
        else:
            self._index = {}

    def path(self, output_name: str) -> Path:
        return self.root / output_name

    def is_complete(self, output_name: str, cache_key: str) -> bool:
        entry = self._index.get(output_name)
        return (
            entry is not None
            and entry.get("cache_key") == cache_key
            and self.path(output_name).exists()
        )

    def commit(self, output_name: str, data: bytes, cache_key: str) -> None:
        target = self.path(output_name)
        fd, tmp_name = tempfile.mkstemp(prefix=f".tmp-{output_name}-", dir=self.root)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp_name, target)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
        with self._lock:
            self._index[output_name] = {
                "cache_key": cache_key,
                "content_hash": hashlib.sha256(data).hexdigest(),
            }
            self._write_index()

    def _write_index(self) -> None:
        fd, tmp_name = tempfile.mkstemp(prefix=".tmp-index-", dir=self.root)
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(self._index, fh, sort_keys=True, indent=2)
        os.replace(tmp_name, self._index_path)

    def content_hash(self, output_name: str) -> str:
        # hash the bytes a consumer would actually read, not the recorded
        # value, so hand-edited artifacts invalidate their dependents
        return file_sha256(self.path(output_name))

    def read_bytes(self, output_name: str) -> bytes:
        return self.path(output_name).read_bytes()

    def read_json(self, output_name: str):
        return json.loads(self.read_bytes(output_name).decode("utf-8"))

    def read_jsonl(self, output_name: str) -> list:
        text = self.read_bytes(output_name).decode("utf-8")
        return [json.loads(line) for line in text.splitlines() if line.strip()]

    @staticmethod
    def encode_json(payload) -> bytes:
        return (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode("utf-8")

    @staticmethod
    def encode_jsonl(rows: Sequence) -> bytes:
        return "".join(canonical_json(row) + "\n" for row in rows).encode("utf-8")


def cache_key(task: TaskSpec, input_hashes: Mapping[str, str]) -> str:
    """Content hash identifying a task instance and the exact bytes it consumes."""
    payload = {
        "format": FORMAT_VERSION,
        "kind": task.kind,
        "params": task.params,
        "inputs": dict(sorted(input_hashes.items())),
    }
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


# -- execution ----------------------------------------------------------------

@dataclass(frozen=True)
class ReportEntry:
    task: str
    kind: str
    status: str  # executed | cache-hit | failed | skipped-failed
    start: float
    end: float
    error: str | None = None


@dataclass
class RunReport:
    entries: list[ReportEntry] = field(default_factory=list)

    def count(self, status: str, kind: str | None = None) -> int:
        return sum(1 for e in self.entries if e.status == status and (kind is None or e.kind == kind))

    @property
    def ok(self) -> bool:
        return all(e.status in ("executed", "cache-hit") for e in self.entries)

    def entry(self, task: str) -> ReportEntry:
        for e in self.entries:
            if e.task == task:
                return e
        raise KeyError(task)

    def to_jsonl(self) -> bytes:
        rows = [
            {
                "task": e.task,
                "kind": e.kind,
                "status": e.status,
                "start": e.start,
                "end": e.end,
                "error": e.error,
            }
            for e in self.entries
        ]
        return ArtifactStore.encode_jsonl(rows)


class ExecutionContext:
    """Shared read-only state handed to task bodies."""

    def __init__(self, store: ArtifactStore, options: EngineOptions):
        self.store = store
        self.options = options
        self.workdir = store.root
        self._kg_cache: dict[str, KnowledgeGraph] = {}
        self._kg_lock = threading.Lock()

    def kg(self, kg_name: str) -> KnowledgeGraph:
        with self._kg_lock:
            if kg_name not in self._kg_cache:
                base = self.workdir / "data" / kg_name
                self._kg_cache[kg_name] = load_kg(
                    base / "train.tsv", base / "valid.tsv", base / "test.tsv", name=kg_name
                )
            return self._kg_cache[kg_name]

    def model(self, output_name: str) -> kge.KgeModel:
        return kge.model_from_bytes(self.store.read_bytes(output_name))


def _resolve_input_hashes(task: TaskSpec, ctx: ExecutionContext) -> dict[str, str]:
    hashes = {}
    for role, (kind, ref) in sorted(task.inputs.items()):
        if kind == "file":
            path = ctx.workdir / ref
            if not path.exists():
                raise FileNotFoundError(f"required input file {path} is missing")
            hashes[role] = file_sha256(path)
        else:
            hashes[role] = ctx.store.content_hash(ref)
    return hashes


def execute(
    dag: Dag,
    store: ArtifactStore,
    max_parallel: int = 1,
    options: EngineOptions | None = None,
    bodies: Mapping[str, Callable] | None = None,
) -> RunReport:
    """Run the DAG: cached tasks are skipped, failures only block their dependents."""
    if max_parallel < 1:
        raise ValueError("max_parallel must be >= 1")
    options = options or EngineOptions()
    bodies = bodies or BODY_REGISTRY
    ctx = ExecutionContext(store, options)
    dependents = dag.dependents()
    report = RunReport()
    statuses: dict[str, str] = {}
    pending = set(dag.nodes)

    def run_one(name: str):
        task = dag.nodes[name]
        start = time.time()
        try:
            input_hashes = _resolve_input_hashes(task, ctx)
            key = cache_key(task, input_hashes)
            if store.is_complete(name, key):
                return ReportEntry(name, task.kind, "cache-hit", start, time.time())
            bodies[task.kind](task, ctx, key)
            return ReportEntry(name, task.kind, "executed", start, time.time())
        except Exception as exc:  # noqa: BLE001 - failures are part of the report
            logger.exception("task %s failed", name)
            return ReportEntry(name, task.kind, "failed", start, time.time(), error=f"{type(exc).__name__}: {exc}")

    def cascade_skip(name: str) -> None:
        now = time.time()
        stack = sorted(dependents[name])
        while stack:
            child = stack.pop()
            if child in pending:
                pending.discard(child)
                statuses[child] = "skipped-failed"
                report.entries.append(
                    ReportEntry(child, dag.nodes[child].kind, "skipped-failed", now, now, error=f"upstream {name} failed")
                )
                stack.extend(sorted(dependents[child]))

    with cf.ThreadPoolExecutor(max_workers=max_parallel) as pool:
        running: dict[cf.Future, str] = {}
        while pending or running:
            ready = sorted(
                name
                for name in pending
                if all(statuses.get(dep) in ("executed", "cache-hit") for dep in dag.nodes[name].requires)
            )
            for name in ready:
                pending.discard(name)
                running[pool.submit(run_one, name)] = name
            if not running:
                break
            done, _ = cf.wait(running, return_when=cf.FIRST_COMPLETED)
            for future in done:
                name = running.pop(future)
                entry = future.result()
                statuses[name] = entry.status
                report.entries.append(entry)
                if entry.status == "failed":
                    cascade_skip(name)

    (store.root / "run_report.jsonl").write_bytes(report.to_jsonl())
    return report


# -- task bodies ---------------------------------------------------------------

def _labels(kg: KnowledgeGraph, triple: Triple) -> list[str]:
    return list(kg.labels_of(triple))


def _run_tune(task: TaskSpec, ctx: ExecutionContext, key: str) -> None:
    kg = ctx.kg(task.params["kg_name"])
    kind = resolve_kge_kind(task.params["kge_name"])
    hp = kge.tune(kg, kind, budget=task.params["budget"], seed=task.params["seed"])
    payload = {"kind": kind, "hp": asdict(hp)}
    ctx.store.commit(task.output_name, ArtifactStore.encode_json(payload), key)


def _run_train(task: TaskSpec, ctx: ExecutionContext, key: str) -> None:
    kg = ctx.kg(task.params["kg_name"])
    config = ctx.store.read_json(task.inputs["hp"][1])
    model = kge.train(kg, config["kind"], kge.HyperParams(**config["hp"]))
    ctx.store.commit(task.output_name, kge.model_to_bytes(model), key)


def _run_rank(task: TaskSpec, ctx: ExecutionContext, key: str) -> None:
    kg = ctx.kg(task.params["kg_name"])
    model = ctx.model(task.inputs["model"][1])
    rows = []
    for triple in kg.test:
        ranked = kge.rank(model, kg, triple)
        rows.append({"triple": _labels(kg, triple), "rank": ranked.rank})
    ctx.store.commit(task.output_name, ArtifactStore.encode_jsonl(rows), key)


def _run_select(task: TaskSpec, ctx: ExecutionContext, key: str) -> None:
    kg = ctx.kg(task.params["kg_name"])
    ranked = [
        kge.RankedTriple(kg.triple_of(*row["triple"]), float(row["rank"]))
        for row in ctx.store.read_jsonl(task.inputs["ranked"][1])
    ]
    selected = kge.select_predictions(ranked, task.params["threshold"], task.params["n_max"])
    rows = [{"triple": _labels(kg, t)} for t in selected]
    ctx.store.commit(task.output_name, ArtifactStore.encode_jsonl(rows), key)


def _run_explain(task: TaskSpec, ctx: ExecutionContext, key: str) -> None:
    kg = ctx.kg(task.params["kg_name"])
    if task.params["lpx"] == GROUND_TRUTH_METHOD:
        dataset = load_ground_truth(kg, ctx.workdir / task.inputs["ground_truth"][1])
        rows = [
            {
                "prediction": _labels(kg, entry.prediction),
                "explanation": [_labels(kg, t) for t in entry.explanation],
                "gold": entry.quality,
                "method": GROUND_TRUTH_METHOD,
                "mode": None,
                "relevance": None,
            }
            for entry in dataset.entries
        ]
    else:
        config = lpx.LpxConfig(**task.params["lpx"])
        model = ctx.model(task.inputs["model"][1])
        predictions = [
            kg.triple_of(*row["triple"]) for row in ctx.store.read_jsonl(task.inputs["predictions"][1])
        ]
        rows = [
            {
                "prediction": _labels(kg, result.prediction),
                "explanation": [_labels(kg, t) for t in result.explanation],
                "method": config.method,
                "mode": config.mode,
                "relevance": result.relevance,
                "failure": result.failure,
            }
            for result in lpx.explain_records(predictions, kg, model, config)
        ]
    ctx.store.commit(task.output_name, ArtifactStore.encode_jsonl(rows), key)


def _run_evaluate(task: TaskSpec, ctx: ExecutionContext, key: str) -> None:
    kg = ctx.kg(task.params["kg_name"])
    model = ctx.model(task.inputs["model"][1])
    config = fsv.EvalConfig(**task.params["eval"])
    rows = ctx.store.read_jsonl(task.inputs["explanations"][1])
    predictions = [kg.triple_of(*row["prediction"]) for row in rows]
    explanations = [
        lpx.Explanation.of(kg.triple_of(*labels) for labels in row["explanation"]) for row in rows
    ]
    if "predictions" in task.inputs:
        selected = [tuple(row["triple"]) for row in ctx.store.read_jsonl(task.inputs["predictions"][1])]
        if [tuple(row["prediction"]) for row in rows] != selected:
            raise ConfigurationError("explanations artifact does not match the selected predictions")
    golds = [row.get("gold") for row in rows]
    items = [
        VerifierItem(prediction, explanation, gold)
        for prediction, explanation, gold in zip(predictions, explanations, golds)
    ]
    verifier = make_verifier(task.params["verifier"], VerifierContext(kg, model, config, ctx.options, items))
    records = fsv.evaluate_records(predictions, explanations, kg, model, verifier, config)
    out = []
    for row, record in zip(rows, records):
        entry = {
            "prediction": row["prediction"],
            "fsv": record.fsv,
            "raw_without": record.without.raw_answer,
            "raw_with": record.with_explanation.raw_answer,
        }
        if row.get("gold") is not None:
            entry["gold"] = row["gold"]
        out.append(entry)
    ctx.store.commit(task.output_name, ArtifactStore.encode_jsonl(out), key)


def _run_metrics(task: TaskSpec, ctx: ExecutionContext, key: str) -> None:
    rows = ctx.store.read_jsonl(task.inputs["scores"][1])
    values = [row["fsv"] for row in rows]
    golds = [row.get("gold") for row in rows]
    payload = {}
    for name in task.params["metric_names"]:
        payload[name] = compute_metric(name, values, golds)
    ctx.store.commit(task.output_name, ArtifactStore.encode_json(payload), key)


BODY_REGISTRY: dict[str, Callable[[TaskSpec, ExecutionContext, str], None]] = {
    TUNE: _run_tune,
    TRAIN: _run_train,
    RANK: _run_rank,
    SELECT: _run_select,
    EXPLAIN: _run_explain,
    EVALUATE: _run_evaluate,
    METRICS: _run_metrics,
}


# -- metric and verifier registries --------------------------------------------

def _metric_classification(values, golds, beta: float):
    if any(g is None for g in golds):
        raise ConfigurationError("classification_report needs gold labels (validation experiments)")
    return metrics_mod.classification_report(values, golds, beta=beta).to_dict()


METRIC_REGISTRY = {
    "average_fsv": lambda values, golds, beta: metrics_mod.average_fsv(values),
    "fsv_distribution": lambda values, golds, beta: {
        str(k): v for k, v in metrics_mod.fsv_distribution(values).items()
    },
    "classification_report": _metric_classification,
}


def compute_metric(name: str, values, golds):
    base, _, suffix = name.partition("@")
    beta = 1.0
    if suffix:
        if not suffix.startswith("beta="):
            raise ConfigurationError(f"unsupported metric option {suffix!r}")
        beta = float(suffix.removeprefix("beta="))
    try:
        fn = METRIC_REGISTRY[base]
    except KeyError:
        raise ConfigurationError(f"unknown metric {name!r}") from None
    return fn(values, golds, beta)


@dataclass(frozen=True)
class VerifierItem:
    prediction: Triple
    explanation: lpx.Explanation
    gold: int | None


@dataclass(frozen=True)
class VerifierContext:
    kg: KnowledgeGraph
    model: kge.KgeModel
    eval_config: fsv.EvalConfig
    options: EngineOptions
    items: tuple[VerifierItem, ...] | list[VerifierItem]


def _make_remote(context: VerifierContext) -> fsv.Verifier:
    url = context.options.verifier_url or os.environ.get("VERIFIER_URL")
    if not url:
        raise ConfigurationError("remote verifier needs --verifier-url or VERIFIER_URL")
    return fsv.RemoteVerifier(url, context.eval_config.llm_model)


VERIFIER_REGISTRY: dict[str, Callable[[VerifierContext], fsv.Verifier]] = {
    "mock": lambda context: fsv.HashMockVerifier(context.kg.entity_labels),
    "remote": _make_remote,
}


def register_verifier(name: str, factory: Callable[[VerifierContext], fsv.Verifier]) -> None:
    VERIFIER_REGISTRY[name.lower()] = factory


def make_verifier(name: str, context: VerifierContext) -> fsv.Verifier:
    try:
        factory = VERIFIER_REGISTRY[name.lower()]
    except KeyError:
        raise ConfigurationError(f"unknown verifier {name!r}") from None
    return factory(context)


# -- aggregation ----------------------------------------------------------------

def aggregate_metrics(dag: Dag, store: ArtifactStore) -> dict:
    """Collect every produced metrics artifact, keyed by its output name."""
    aggregate = {}
    for spec in dag.tasks_of_kind(METRICS):
        if store.path(spec.output_name).exists():
            aggregate[spec.output_name] = store.read_json(spec.output_name)
    return aggregate


def write_aggregate(aggregate: dict, workdir: str | Path) -> Path:
    target = Path(workdir) / "metrics.json"
    target.write_bytes(ArtifactStore.encode_json(aggregate))
    return target
