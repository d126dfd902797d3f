"""Session-specific causal graphs from recommender attention, with
counterfactual explanation search."""

from .citest import (
    AttentionMatrix,
    CiDecision,
    CorrelationMatrix,
    DegenerateMatrixError,
    PartialCorrelationCiTester,
    SampleSizeError,
    aggregate_heads,
    ci_test,
    correlation_from_attention,
    partial_correlation,
)
from .discovery import (
    DiscoveryConfig,
    apply_orientation_rules,
    learn_pag,
    learn_skeleton,
    orient_colliders,
    possible_dsep_set,
)
from .evaluate import (
    EvalRecord,
    EvalSummary,
    attention_baseline,
    eval_run,
    summarize,
    synthetic_benchmark,
    write_summary_outputs,
)
from .explain import (
    TOP_K_POOL,
    ExplanationResult,
    ModelQueryError,
    PiSet,
    PiTree,
    ProbeRecord,
    build_pi_tree,
    enumerate_pi_sets,
    explain_session,
    find_explanation,
    is_pi_path,
)
from .models import (
    IpcModelClient,
    IpcRemoteError,
    IpcTransportError,
    ModelInterface,
    OutOfVocabularyError,
    SemRecommender,
    SemSpec,
    Session,
    TinyAttentionModel,
    TraceError,
    TraceModel,
    TraceSession,
    VariantUnavailableError,
    attention_from_covariance,
    generate_tiny_weights,
    random_sem_spec,
    read_trace,
    sem_covariance,
    serve_model,
    write_trace,
)
from .pag import EdgeMark, GraphError, MarkConflictError, NodeId, Pag, SepsetTable

__version__ = "0.1.0"
