"""Data-contamination continuation probes.

A probe hands the model the opening fraction of a poem (or of its reference
translation) and asks it to continue for the exact number of missing lines.
High overlap between the continuation and the true suffix would suggest the
text was memorized; scores near zero say the model is inventing.  Results
aggregate into a side-by-fraction report table.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from fractions import Fraction
from math import floor
from pathlib import Path
from typing import Sequence

from .corpus import Poem, PoemPair
from .llm_client import LLMClient, ModelSpec
from .metrics import BleuConfig, BleuScore, corpus_bleu, sentence_bleu
from .prompts import TemplateId, render
from .translate import response_lines

logger = logging.getLogger(__name__)

SIDES = ("source", "translation")
DEFAULT_FRACTIONS = (0.5, 0.7, 0.9)


class ProbeError(ValueError):
    """Raised on unusable probe inputs (bad fraction, short poem, ragged grid)."""


@dataclass(frozen=True)
class ProbeSpec:
    """Which side of the pair to probe, at which prefix fractions."""

    side: str = "source"
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS

    def __post_init__(self) -> None:
        if self.side not in SIDES:
            raise ProbeError(f"side must be one of {SIDES}, got {self.side!r}")
        if not self.fractions:
            raise ProbeError("fractions must be non-empty")
        for fraction in self.fractions:
            if not 0 < fraction < 1:
                raise ProbeError(f"fraction must be in (0, 1), got {fraction}")


@dataclass(frozen=True)
class ProbeResult:
    """One continuation probe: what was generated vs what the poem says.

    ``generated_suffix`` is the untruncated model output; scoring truncates
    it to the requested line count first.
    """

    pair_id: str
    side: str
    fraction: float
    prefix_line_count: int
    generated_suffix: str
    true_suffix: str
    bleu: BleuScore

    @property
    def n_remaining(self) -> int:
        return len(self.true_suffix.split("\n"))


def _half_up(value: Fraction) -> int:
    return floor(value + Fraction(1, 2))


def truncate_prefix(poem: Poem, fraction: float) -> tuple[tuple[str, ...], int]:
    """Split a poem at a fraction of its content lines, rounding half up.

    Blank stanza-break lines are excluded from the count but kept inside the
    returned prefix.  Returns (prefix lines, number of content lines left to
    generate); every usable fraction must leave at least one.
    """
    content_total = len(poem.content_lines)
    exact = Fraction(str(fraction)) * content_total
    keep = _half_up(exact)
    if keep < 1 or keep >= content_total:
        raise ProbeError(
            f"poem {poem.id!r}: fraction {fraction} keeps {keep} of "
            f"{content_total} content lines, leaving nothing to probe"
        )

    prefix: list[str] = []
    seen = 0
    for line in poem.lines:
        prefix.append(line)
        if line.strip():
            seen += 1
            if seen == keep:
                break
    return tuple(prefix), content_total - keep


def _poem_for_side(pair: PoemPair, side: str) -> Poem:
    return pair.source if side == "source" else pair.reference


def _config_for(poem: Poem) -> BleuConfig:
    return BleuConfig(tokenizer="zh" if poem.language == "zh" else "t13a")


def _continuation_template(poem: Poem) -> TemplateId:
    return TemplateId.CONTINUATION_ZH if poem.language == "zh" else TemplateId.CONTINUATION


def scored_continuation(generated_suffix: str, n_remaining: int) -> str:
    """The text actually scored: first n_remaining non-blank generated lines."""
    lines = [line for line in response_lines(generated_suffix) if line.strip()]
    return "\n".join(lines[:n_remaining])


def run_probe(
    pair: PoemPair,
    spec: ProbeSpec,
    model: ModelSpec,
    client: LLMClient,
) -> list[ProbeResult]:
    """Probe one pair on one side at every requested fraction."""
    poem = _poem_for_side(pair, spec.side)
    template = _continuation_template(poem)
    config = _config_for(poem)
    content = poem.content_lines

    results = []
    for fraction in spec.fractions:
        prefix, n_remaining = truncate_prefix(poem, fraction)
        prompt = render(
            template,
            {
                "title": poem.title,
                "n_remaining": str(n_remaining),
                "total": str(len(content)),
                "prefix": "\n".join(prefix),
            },
        )
        raw = client.complete(model, prompt)
        generated = "\n".join(response_lines(raw))
        true_suffix = "\n".join(content[len(content) - n_remaining :])
        score = sentence_bleu(
            scored_continuation(generated, n_remaining), true_suffix, config
        )
        results.append(
            ProbeResult(
                pair_id=pair.pair_id,
                side=spec.side,
                fraction=fraction,
                prefix_line_count=len(content) - n_remaining,
                generated_suffix=generated,
                true_suffix=true_suffix,
                bleu=score,
            )
        )
    return results


# ── aggregation ──────────────────────────────────────────────────────


@dataclass(frozen=True)
class ProbeReport:
    """Side-by-fraction corpus BLEU table over a probed test set."""

    fractions: tuple[float, ...]
    cells: dict[str, dict[float, BleuScore]]  # side -> fraction -> score
    poem_count: int

    def to_markdown(self) -> str:
        header = "| Side | " + " | ".join(f"{f:.0%}" for f in self.fractions) + " |"
        rule = "|---" * (len(self.fractions) + 1) + "|"
        lines = [header, rule]
        for side in SIDES:
            if side not in self.cells:
                continue
            row = [side]
            row += [f"{self.cells[side][f].score:.1f}" for f in self.fractions]
            lines.append("| " + " | ".join(row) + " |")
        signatures = {
            score.signature for by_fraction in self.cells.values()
            for score in by_fraction.values()
        }
        lines.append("")
        lines.append(f"{self.poem_count} poem(s); " + "; ".join(sorted(signatures)))
        return "\n".join(lines)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["side", "fraction", "bleu", "signature"])
            for side in SIDES:
                if side not in self.cells:
                    continue
                for fraction in self.fractions:
                    score = self.cells[side][fraction]
                    writer.writerow(
                        [side, fraction, f"{score.score:.1f}", score.signature]
                    )


def probe_report(results: Sequence[ProbeResult]) -> ProbeReport:
    """Pool per-poem probes into corpus scores, one cell per (side, fraction).

    The grid must be rectangular: every probed side must cover the same
    poems at the same fractions.
    """
    if not results:
        raise ProbeError("no probe results to report")

    sides = sorted({r.side for r in results}, key=SIDES.index)
    fractions = tuple(sorted({r.fraction for r in results}))
    pair_ids = sorted({r.pair_id for r in results})

    indexed: dict[tuple[str, float, str], ProbeResult] = {}
    for result in results:
        cell_key = (result.side, result.fraction, result.pair_id)
        if cell_key in indexed:
            raise ProbeError(f"duplicate probe for {cell_key}")
        indexed[cell_key] = result

    cells: dict[str, dict[float, BleuScore]] = {}
    for side in sides:
        tokenizers = {
            _signature_tokenizer(r.bleu.signature) for r in results if r.side == side
        }
        if len(tokenizers) != 1:
            raise ProbeError(f"side {side!r} mixes tokenizers {sorted(tokenizers)}")
        config = BleuConfig(tokenizer=tokenizers.pop())
        cells[side] = {}
        for fraction in fractions:
            hyps, refs = [], []
            for pair_id in pair_ids:
                result = indexed.get((side, fraction, pair_id))
                if result is None:
                    raise ProbeError(
                        f"probe grid is ragged: missing ({side}, {fraction}, "
                        f"{pair_id})"
                    )
                hyps.append(
                    scored_continuation(result.generated_suffix, result.n_remaining)
                )
                refs.append(result.true_suffix)
            cells[side][fraction] = corpus_bleu(hyps, refs, config)

    return ProbeReport(fractions=fractions, cells=cells, poem_count=len(pair_ids))


def _signature_tokenizer(signature: str) -> str:
    for part in signature.split("+"):
        if part.startswith("tok."):
            return part[len("tok.") :]
    raise ProbeError(f"signature {signature!r} does not name a tokenizer")
