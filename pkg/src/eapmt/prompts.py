"""Prompt template registry and rendering.

Every prompt text used by the pipeline lives here as a named constant, so
templates can be audited, exported, and byte-compared against golden files.
Placeholders use ``{{name}}`` syntax and are substituted literally in a
single pass (a value containing ``{{`` is never re-expanded).

The few-shot entries are patterns rather than renderable templates: the
example count varies, so ``build_fewshot`` assembles those prompts
programmatically in the same layout.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Mapping, Sequence

if TYPE_CHECKING:
    from .corpus import Poem, PoemPair

_PLACEHOLDER = re.compile(r"\{\{([a-z][a-z0-9_]*)\}\}")


class TemplateError(ValueError):
    """Raised on unknown ids, unbound placeholders, or unknown bindings."""


class TemplateId(str, Enum):
    H1 = "H1"
    H2 = "H2"
    H3 = "H3"
    P1 = "P1"
    P2 = "P2"
    P3 = "P3"
    P4 = "P4"
    P5 = "P5"
    FEWSHOT_GPT35 = "FEWSHOT_GPT35"
    FEWSHOT_GPT4 = "FEWSHOT_GPT4"
    EAPMT_STEP1_GPT35 = "EAPMT_STEP1_GPT35"
    EAPMT_STEP2_GPT35 = "EAPMT_STEP2_GPT35"
    EAPMT_STEP1_GPT4 = "EAPMT_STEP1_GPT4"
    EAPMT_STEP2_GPT4 = "EAPMT_STEP2_GPT4"
    CONTINUATION = "CONTINUATION"
    CONTINUATION_ZH = "CONTINUATION_ZH"
    JUDGE = "JUDGE"
    POETIC_PICK_EN = "POETIC_PICK_EN"
    POETIC_PICK_ZH = "POETIC_PICK_ZH"

    def __str__(self) -> str:  # "H3", not "TemplateId.H3"
        return self.value


@dataclass(frozen=True)
class PromptTemplate:
    """A named prompt text with its placeholder set.

    ``pattern_only`` marks entries whose text documents a variable-length
    layout; they cannot be rendered directly.
    """

    id: TemplateId
    text: str
    placeholders: tuple[str, ...] = field(init=False)
    pattern_only: bool = False

    def __post_init__(self) -> None:
        found = tuple(dict.fromkeys(_PLACEHOLDER.findall(self.text)))
        object.__setattr__(self, "placeholders", found)


@dataclass(frozen=True)
class RenderedPrompt:
    """A prompt ready to send: the final text plus how it was built."""

    template_id: TemplateId
    text: str
    bindings: Mapping[str, str]


# ── template texts ───────────────────────────────────────────────────

_H1 = "Please provide the Chinese translation for these sentences:"
_H2 = "Please provide the Chinese translation for this poem:"
_H3 = "Please translate this English poem into modern Chinese poetry:"

_P1 = (
    "Please translate the following modern English poem into modern Chinese "
    "poetry, considering its cultural and historical context in which it was "
    "written. Maintain the tone, style, and emotional impact of the original "
    "poem."
)
_P2 = (
    "Translate this modern English poem into modern Chinese poetry, focusing "
    "on preserving the vivid imagery and metaphoric language. Ensure the "
    "translation conveys the same visual and sensory experiences as the "
    "original."
)
_P3 = (
    "Translate the following modern English poem into modern Chinese poetry, "
    "making sure to maintain its rhyme scheme and rhythm to the best extent "
    "possible. The translation should attempt to replicate the musicality "
    "and flow of the original text."
)
_P4 = (
    "Translate this modern English poem into modern Chinese poetry, ensuring "
    "the literal meaning of each line is accurately conveyed. The focus here "
    "is on the direct translation of the words and phrases, rather than on "
    "preserving the poetic devices used in the original."
)
_P5 = (
    "Translate the following modern English poem into modern Chinese poetry, "
    "taking into account the unique style of the poet. Try to capture the "
    "author's voice, style, and idiosyncrasies in the translated version."
)

_FEWSHOT_GPT35 = """\
Please translate this English poem into modern Chinese poetry:
Example(s):
English Poem:{{example_poem_1}}
Modern Chinese Poem:{{example_translation_1}}
...
English Poem:{{example_poem_k}}
Modern Chinese Poem:{{example_translation_k}}
English Poem:{{poem}}
Modern Chinese Poem:"""

_FEWSHOT_GPT4 = """\
Please provide the Chinese translation for this poem:
Example(s):
Poem:{{example_poem_1}}
Chinese Translation:{{example_translation_1}}
...
Poem:{{example_poem_k}}
Chinese Translation:{{example_translation_k}}
Poem:{{poem}}
Chinese Translation:"""

_EAPMT_STEP1_GPT35 = """\
Please provide an explanation for this English poem:
English poem:{{poem}}
Explanation:"""

_EAPMT_STEP2_GPT35 = """\
Please translate this English poem into a modern Chinese poem based on its explanation:
Explanation:{{explanation}}
English poem:{{poem}}
Modern Chinese poem:"""

_EAPMT_STEP1_GPT4 = """\
Please provide an explanation for this poem:
Poem:{{poem}}
Explanation:"""

_EAPMT_STEP2_GPT4 = """\
Please provide the Chinese translation for this poem based on its explanation:
Explanation:{{explanation}}
Poem:{{poem}}
Chinese translation:"""

_CONTINUATION = (
    "Please continue writing the next {{n_remaining}} lines of the modern "
    'poem entitled "{{title}}", which requires a total of {{total}} lines:\n'
    "{{prefix}}"
)

_CONTINUATION_ZH = (
    "请继续写出现代诗《{{title}}》接下来的{{n_remaining}}行，"
    "这首诗共需{{total}}行：\n{{prefix}}"
)

_JUDGE = (
    "Please evaluate the following {{count}} candidate translations based on "
    "eight criteria: Overall Impression, Similarity, Fidelity, "
    "Line-breaking, Meaningfulness, Poeticity, Accuracy, and Errors. In this "
    "context, English poetry serves as the source language, and the "
    "reference translation is considered the gold standard. The score for "
    "each criterion should range from 1 to 6, with higher scores indicating "
    "superior translation quality. A score of 5 signifies that the "
    "translation is of comparable quality to the reference translation, "
    "while a score of 6 indicates that the translation surpasses the quality "
    "of the reference translation.\n"
    "Each criterion is defined as follows: {{criteria}}\n"
    "Source Language Poem: {{source}}\n"
    "Reference translation: {{reference}}\n"
    "{{candidates}}\n"
    "The scores of different candidate translations under various criteria: "
)

_POETIC_PICK_EN = (
    "Please identify the single most poetic line in this poem. Answer with "
    "the line verbatim.\n{{poem}}"
)

_POETIC_PICK_ZH = "请找出这首诗中最具诗意的一行。请逐字引用该行作答。\n{{poem}}"


_REGISTRY: dict[TemplateId, PromptTemplate] = {
    template.id: template
    for template in (
        PromptTemplate(TemplateId.H1, _H1),
        PromptTemplate(TemplateId.H2, _H2),
        PromptTemplate(TemplateId.H3, _H3),
        PromptTemplate(TemplateId.P1, _P1),
        PromptTemplate(TemplateId.P2, _P2),
        PromptTemplate(TemplateId.P3, _P3),
        PromptTemplate(TemplateId.P4, _P4),
        PromptTemplate(TemplateId.P5, _P5),
        PromptTemplate(TemplateId.FEWSHOT_GPT35, _FEWSHOT_GPT35, pattern_only=True),
        PromptTemplate(TemplateId.FEWSHOT_GPT4, _FEWSHOT_GPT4, pattern_only=True),
        PromptTemplate(TemplateId.EAPMT_STEP1_GPT35, _EAPMT_STEP1_GPT35),
        PromptTemplate(TemplateId.EAPMT_STEP2_GPT35, _EAPMT_STEP2_GPT35),
        PromptTemplate(TemplateId.EAPMT_STEP1_GPT4, _EAPMT_STEP1_GPT4),
        PromptTemplate(TemplateId.EAPMT_STEP2_GPT4, _EAPMT_STEP2_GPT4),
        PromptTemplate(TemplateId.CONTINUATION, _CONTINUATION),
        PromptTemplate(TemplateId.CONTINUATION_ZH, _CONTINUATION_ZH),
        PromptTemplate(TemplateId.JUDGE, _JUDGE),
        PromptTemplate(TemplateId.POETIC_PICK_EN, _POETIC_PICK_EN),
        PromptTemplate(TemplateId.POETIC_PICK_ZH, _POETIC_PICK_ZH),
    )
}

# Translation templates that take no slot: the poem block is appended on a
# new line by the callers in translate.
INSTRUCTION_ONLY_IDS = frozenset(
    {
        TemplateId.H1,
        TemplateId.H2,
        TemplateId.H3,
        TemplateId.P1,
        TemplateId.P2,
        TemplateId.P3,
        TemplateId.P4,
        TemplateId.P5,
    }
)

_FEWSHOT_LAYOUT = {
    # variant -> (base instruction id, source label, translation label)
    "gpt35": (TemplateId.H3, "English Poem:", "Modern Chinese Poem:"),
    "gpt4": (TemplateId.H2, "Poem:", "Chinese Translation:"),
}


def _coerce_id(template_id: TemplateId | str) -> TemplateId:
    try:
        return TemplateId(template_id)
    except ValueError:
        known = ", ".join(t.value for t in TemplateId)
        raise TemplateError(
            f"unknown template id {template_id!r}; known ids: {known}"
        ) from None


def get_template(template_id: TemplateId | str) -> PromptTemplate:
    """Look up a registered template by id."""
    return _REGISTRY[_coerce_id(template_id)]


def render(
    template: PromptTemplate | TemplateId | str,
    bindings: Mapping[str, str] | None = None,
) -> RenderedPrompt:
    """Substitute every placeholder literally; bindings must match exactly.

    Raises TemplateError naming any unbound placeholder or unknown binding,
    and for pattern-only templates (use build_fewshot for those).
    """
    if not isinstance(template, PromptTemplate):
        template = get_template(template)
    if template.pattern_only:
        raise TemplateError(
            f"{template.id} is a layout pattern; build it with build_fewshot"
        )
    bindings = dict(bindings or {})
    missing = [name for name in template.placeholders if name not in bindings]
    if missing:
        raise TemplateError(f"{template.id}: unbound placeholders {missing}")
    unknown = [name for name in bindings if name not in template.placeholders]
    if unknown:
        raise TemplateError(f"{template.id}: unknown bindings {unknown}")
    for name, value in bindings.items():
        if not isinstance(value, str):
            raise TemplateError(
                f"{template.id}: binding {name!r} must be str, got "
                f"{type(value).__name__}"
            )

    text = _PLACEHOLDER.sub(lambda m: bindings[m.group(1)], template.text)
    return RenderedPrompt(template_id=template.id, text=text, bindings=bindings)


def build_fewshot(
    source: "Poem",
    examples: Sequence["PoemPair"],
    variant: str = "gpt35",
) -> RenderedPrompt:
    """Assemble a k-shot translation prompt.

    Layout: instruction line, then (for k >= 1) an "Example(s):" line and one
    labeled poem/translation block per example, then the source poem under
    the same label and a bare translation label as the completion cue.  With
    k = 0 the prompt is the bare instruction plus the source block.
    """
    if variant not in _FEWSHOT_LAYOUT:
        raise TemplateError(
            f"unknown few-shot variant {variant!r}; expected one of "
            f"{sorted(_FEWSHOT_LAYOUT)}"
        )
    base_id, source_label, translation_label = _FEWSHOT_LAYOUT[variant]
    pattern_id = (
        TemplateId.FEWSHOT_GPT35 if variant == "gpt35" else TemplateId.FEWSHOT_GPT4
    )

    parts = [get_template(base_id).text]
    if examples:
        parts.append("Example(s):")
        for pair in examples:
            parts.append(f"{source_label}{pair.source.prompt_text()}")
            parts.append(f"{translation_label}{pair.reference.prompt_text()}")
    parts.append(f"{source_label}{source.prompt_text()}")
    parts.append(translation_label)

    return RenderedPrompt(
        template_id=pattern_id,
        text="\n".join(parts),
        bindings={
            "poem": source.prompt_text(),
            "shots": str(len(examples)),
        },
    )


def export_templates(directory: str | Path) -> list[Path]:
    """Write every registered template to <directory>/<ID>.txt, verbatim."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for template_id in TemplateId:
        path = directory / f"{template_id.value}.txt"
        path.write_text(_REGISTRY[template_id].text, encoding="utf-8")
        written.append(path)
    return written


def all_templates() -> tuple[PromptTemplate, ...]:
    return tuple(_REGISTRY[tid] for tid in TemplateId)
