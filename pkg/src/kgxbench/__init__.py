"""Benchmarking engine for explanation methods of link prediction on KGs."""

from .kg import (
    GroundTruthDataset,
    GroundTruthEntry,
    KnowledgeGraph,
    Query,
    Triple,
    discretize_ratings,
    load_ground_truth,
    load_kg,
    save_kg,
)
from .kge import (
    COMPLEX,
    TRANSLATIONAL,
    HyperParams,
    KgeModel,
    RankedTriple,
    load_model,
    lp,
    post_train,
    rank,
    save_model,
    score,
    select_predictions,
    train,
    tune,
)
from .lpx import (
    CandidateSet,
    Explanation,
    LpxConfig,
    baseline_candidates,
    best_explanation,
    comparison_set,
    explain,
    kelpie_candidates,
    register_explainer,
    relevance,
    summarize,
)
from .fsv import (
    EvalConfig,
    FsvVector,
    Prompt,
    RemoteVerifier,
    ScriptedVerifier,
    Verifier,
    build_prompt,
    evaluate,
    fsv_of,
    indicator,
    match_answer,
    verbalize,
)
from .metrics import ClassificationReport, average_fsv, classification_report, fsv_distribution
from .workflow import (
    ArtifactStore,
    Dag,
    EngineOptions,
    RunReport,
    SetupRow,
    TaskSpec,
    cache_key,
    execute,
    instantiate_dag,
    parse_setup,
    register_verifier,
)

__version__ = "0.1.0"
