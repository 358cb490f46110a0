"""Translation pipelines: direct prompting, few-shot, and explain-then-translate.

The two-step pipeline first asks the model for a monolingual explanation of
the source poem, then embeds that explanation verbatim in the translation
prompt.  Both steps are recorded so a cached run can be replayed and audited
offline.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Sequence

from .corpus import Poem, PoemPair
from .llm_client import ClientError, LLMClient, ModelSpec
from .prompts import (
    INSTRUCTION_ONLY_IDS,
    RenderedPrompt,
    TemplateError,
    TemplateId,
    build_fewshot,
    get_template,
    render,
)

logger = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """Raised when a pipeline step cannot produce a usable record."""


# Few-shot layouts exist only for the two base prompts the layout was
# designed around; requesting shots with any other template is an error.
_FEWSHOT_VARIANT_BY_BASE = {
    TemplateId.H3: "gpt35",
    TemplateId.FEWSHOT_GPT35: "gpt35",
    TemplateId.H2: "gpt4",
    TemplateId.FEWSHOT_GPT4: "gpt4",
}

_EAPMT_TEMPLATES = {
    "gpt35": (TemplateId.EAPMT_STEP1_GPT35, TemplateId.EAPMT_STEP2_GPT35),
    "gpt4": (TemplateId.EAPMT_STEP1_GPT4, TemplateId.EAPMT_STEP2_GPT4),
}


@dataclass(frozen=True)
class ExplanationRecord:
    """Step-1 output: a monolingual explanation of one source poem."""

    explanation_id: str
    pair_id: str
    model: str
    template_id: TemplateId
    text: str

    def to_json(self) -> dict:
        return {
            "explanation_id": self.explanation_id,
            "pair_id": self.pair_id,
            "model": self.model,
            "template_id": self.template_id.value,
            "text": self.text,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ExplanationRecord":
        return cls(
            explanation_id=obj["explanation_id"],
            pair_id=obj["pair_id"],
            model=obj["model"],
            template_id=TemplateId(obj["template_id"]),
            text=obj["text"],
        )


@dataclass(frozen=True)
class TranslationRecord:
    """One candidate translation with full provenance for later scoring."""

    pair_id: str
    system: str
    model: str
    template_id: TemplateId
    shots: int
    output_lines: tuple[str, ...]
    raw_response: str
    explanation_id: str | None = None

    @property
    def text(self) -> str:
        return "\n".join(self.output_lines)

    def to_json(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "system": self.system,
            "model": self.model,
            "template_id": self.template_id.value,
            "shots": self.shots,
            "output_lines": list(self.output_lines),
            "raw_response": self.raw_response,
            "explanation_id": self.explanation_id,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TranslationRecord":
        return cls(
            pair_id=obj["pair_id"],
            system=obj["system"],
            model=obj["model"],
            template_id=TemplateId(obj["template_id"]),
            shots=obj["shots"],
            output_lines=tuple(obj["output_lines"]),
            raw_response=obj["raw_response"],
            explanation_id=obj.get("explanation_id"),
        )


@dataclass(frozen=True)
class ErrorRecord:
    pair_id: str
    system: str
    message: str

    def to_json(self) -> dict:
        return {"pair_id": self.pair_id, "system": self.system, "message": self.message}


@dataclass(frozen=True)
class Condition:
    """One grid cell: a prompt template, a shot count, and a model."""

    template_id: TemplateId | str
    shots: int
    model: ModelSpec
    system: str | None = None

    @property
    def label(self) -> str:
        if self.system:
            return self.system
        base = str(TemplateId(self.template_id))
        return base if self.shots == 0 else f"{base}+{self.shots}shot"


@dataclass
class GridResult:
    records: list[TranslationRecord] = field(default_factory=list)
    errors: list[ErrorRecord] = field(default_factory=list)


# ── helpers ──────────────────────────────────────────────────────────


def _split_source(source: Poem | PoemPair) -> tuple[Poem, str]:
    if isinstance(source, PoemPair):
        return source.source, source.pair_id
    pair_id = source.id
    for suffix in (".src", ".ref"):
        if pair_id.endswith(suffix):
            pair_id = pair_id[: -len(suffix)]
    return source, pair_id


def response_lines(raw: str) -> tuple[str, ...]:
    """Split a model response into lines, trimming outer blank lines only.

    Interior blanks (stanza breaks, a gap after a title line) survive.
    """
    lines = raw.split("\n")
    start = 0
    end = len(lines)
    while start < end and not lines[start].strip():
        start += 1
    while end > start and not lines[end - 1].strip():
        end -= 1
    return tuple(lines[start:end])


def _explanation_id(pair_id: str, model: str, template_id: TemplateId, text: str) -> str:
    digest = hashlib.sha256(
        f"{pair_id}\x00{model}\x00{template_id.value}\x00{text}".encode("utf-8")
    ).hexdigest()
    return digest[:16]


# ── pipelines ────────────────────────────────────────────────────────


def translate_direct(
    source: Poem | PoemPair,
    template_id: TemplateId | str,
    model: ModelSpec,
    client: LLMClient,
    examples: Sequence[PoemPair] = (),
    system: str | None = None,
) -> TranslationRecord:
    """Translate one poem with a single prompt.

    Instruction templates get the poem appended on the next line; a few-shot
    layout is used when examples are given (or a FEWSHOT template id is named
    explicitly), including its zero-shot degenerate form.
    """
    poem, pair_id = _split_source(source)
    tid = TemplateId(template_id)

    if examples or tid in (TemplateId.FEWSHOT_GPT35, TemplateId.FEWSHOT_GPT4):
        variant = _FEWSHOT_VARIANT_BY_BASE.get(tid)
        if variant is None:
            raise TemplateError(
                f"{tid} has no few-shot layout; use H3/H2 or a FEWSHOT id"
            )
        for pair in examples:
            if pair.pair_id == pair_id:
                raise PipelineError(
                    f"shot example {pair.pair_id!r} is the poem under test"
                )
        prompt = build_fewshot(poem, examples, variant=variant)
    elif tid in INSTRUCTION_ONLY_IDS:
        prompt = RenderedPrompt(
            template_id=tid,
            text=f"{get_template(tid).text}\n{poem.prompt_text()}",
            bindings={"poem": poem.prompt_text()},
        )
    else:
        raise TemplateError(f"{tid} is not a translation template")

    raw = client.complete(model, prompt)
    label = system or (str(tid) if not examples else f"{tid}+{len(examples)}shot")
    return TranslationRecord(
        pair_id=pair_id,
        system=label,
        model=model.name,
        template_id=prompt.template_id,
        shots=len(examples),
        output_lines=response_lines(raw),
        raw_response=raw,
    )


def eapmt_translate(
    source: Poem | PoemPair,
    model: ModelSpec,
    client: LLMClient,
    variant: str = "gpt4",
    system: str | None = None,
) -> tuple[ExplanationRecord, TranslationRecord]:
    """Explain-then-translate one poem.

    Step 1 elicits an explanation of the source poem; step 2 embeds that
    explanation verbatim in the translation prompt.  An empty or failed
    step 1 aborts before any translation call.
    """
    if variant not in _EAPMT_TEMPLATES:
        raise PipelineError(
            f"unknown variant {variant!r}; expected one of {sorted(_EAPMT_TEMPLATES)}"
        )
    poem, pair_id = _split_source(source)
    step1_id, step2_id = _EAPMT_TEMPLATES[variant]

    step1 = render(step1_id, {"poem": poem.prompt_text()})
    explanation_text = client.complete(model, step1).strip()
    if not explanation_text:
        raise PipelineError(
            f"empty explanation for {pair_id!r}; aborting before translation"
        )
    explanation = ExplanationRecord(
        explanation_id=_explanation_id(pair_id, model.name, step1_id, explanation_text),
        pair_id=pair_id,
        model=model.name,
        template_id=step1_id,
        text=explanation_text,
    )

    step2 = render(
        step2_id,
        {"explanation": explanation_text, "poem": poem.prompt_text()},
    )
    raw = client.complete(model, step2)
    record = TranslationRecord(
        pair_id=pair_id,
        system=system or f"eapmt:{variant}",
        model=model.name,
        template_id=step2_id,
        shots=0,
        output_lines=response_lines(raw),
        raw_response=raw,
        explanation_id=explanation.explanation_id,
    )
    return explanation, record


def run_experiment_grid(
    test_set: Sequence[PoemPair],
    conditions: Sequence[Condition],
    client: LLMClient,
    shot_pool: Sequence[PoemPair] = (),
) -> GridResult:
    """Translate every test poem under every condition, collecting errors.

    Iteration order is poems outer, conditions inner, so runs are
    reproducible and partial failures are attributable.  Shot examples come
    from shot_pool, which must not overlap the test set.
    """
    test_ids = {pair.pair_id for pair in test_set}
    overlap = test_ids & {pair.pair_id for pair in shot_pool}
    if overlap:
        raise PipelineError(f"shot pool overlaps test set: {sorted(overlap)}")
    max_shots = max((c.shots for c in conditions), default=0)
    if max_shots > len(shot_pool):
        raise PipelineError(
            f"conditions need {max_shots} shot examples but pool has {len(shot_pool)}"
        )

    result = GridResult()
    for pair in test_set:
        for condition in conditions:
            try:
                record = translate_direct(
                    pair,
                    condition.template_id,
                    condition.model,
                    client,
                    examples=tuple(shot_pool[: condition.shots]),
                    system=condition.label,
                )
            except (ClientError, PipelineError, TemplateError) as exc:
                logger.warning(
                    "condition %s failed on %s: %s", condition.label, pair.pair_id, exc
                )
                result.errors.append(
                    ErrorRecord(
                        pair_id=pair.pair_id,
                        system=condition.label,
                        message=str(exc),
                    )
                )
                continue
            result.records.append(record)
    return result
