"""Explanation-assisted poetry machine translation experiments.

English-to-Chinese poetry translation with large language models: a
two-step explain-then-translate pipeline, direct and few-shot baselines,
data-contamination continuation probes, native BLEU with CJK tokenization,
blinded human evaluation workflows, and an LLM judge.  All model calls go
through a caching client so experiments replay offline, byte for byte.
"""

from .corpus import (
    Corpus,
    CorpusFormatError,
    CorpusStats,
    Poem,
    PoemPair,
    corpus_stats,
    load_corpus,
    sample_test_set,
    save_corpus,
)
from .evaluation import (
    Ballot,
    BlindingKey,
    Criterion,
    EvaluationError,
    JudgeParseError,
    ScoreSheet,
    aggregate_scores,
    aggregate_votes,
    count_six,
    ingest_scores,
    ingest_votes,
    llm_judge,
    make_blinding_key,
    make_questionnaire,
    parse_judge_response,
    poetic_consistency,
)
from .llm_client import (
    ClientError,
    CompletionRecord,
    LLMClient,
    ModelSpec,
    ReplayMissError,
    StubTransport,
    TransportError,
    cache_key,
    make_stub,
)
from .metrics import (
    BleuConfig,
    BleuScore,
    MetricAdapter,
    MetricError,
    corpus_bleu,
    score_with_adapter,
    sentence_bleu,
    tokenize,
)
from .prompts import (
    PromptTemplate,
    RenderedPrompt,
    TemplateError,
    TemplateId,
    build_fewshot,
    export_templates,
    get_template,
    render,
)
from .translate import (
    Condition,
    ExplanationRecord,
    PipelineError,
    TranslationRecord,
    eapmt_translate,
    run_experiment_grid,
    translate_direct,
)
from .validation import (
    ProbeError,
    ProbeReport,
    ProbeResult,
    ProbeSpec,
    probe_report,
    run_probe,
    truncate_prefix,
)

__version__ = "0.1.0"

__all__ = [
    "Ballot",
    "BleuConfig",
    "BleuScore",
    "BlindingKey",
    "ClientError",
    "CompletionRecord",
    "Condition",
    "Corpus",
    "CorpusFormatError",
    "CorpusStats",
    "Criterion",
    "EvaluationError",
    "ExplanationRecord",
    "JudgeParseError",
    "LLMClient",
    "MetricAdapter",
    "MetricError",
    "ModelSpec",
    "PipelineError",
    "Poem",
    "PoemPair",
    "ProbeError",
    "ProbeReport",
    "ProbeResult",
    "ProbeSpec",
    "PromptTemplate",
    "RenderedPrompt",
    "ReplayMissError",
    "ScoreSheet",
    "StubTransport",
    "TemplateError",
    "TemplateId",
    "TranslationRecord",
    "TransportError",
    "aggregate_scores",
    "aggregate_votes",
    "build_fewshot",
    "cache_key",
    "corpus_bleu",
    "corpus_stats",
    "count_six",
    "eapmt_translate",
    "export_templates",
    "get_template",
    "ingest_scores",
    "ingest_votes",
    "llm_judge",
    "load_corpus",
    "make_blinding_key",
    "make_questionnaire",
    "make_stub",
    "parse_judge_response",
    "poetic_consistency",
    "probe_report",
    "render",
    "run_experiment_grid",
    "run_probe",
    "sample_test_set",
    "save_corpus",
    "score_with_adapter",
    "sentence_bleu",
    "tokenize",
    "translate_direct",
    "truncate_prefix",
]
