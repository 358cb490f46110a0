"""Native BLEU scoring with CJK-aware tokenization, plus external adapters.

The scorer is self-contained: corpus and sentence BLEU over 1..4-grams with
exponential smoothing for zero-match orders, a brevity penalty, and two
tokenizers.  ``t13a`` is the conservative international tokenizer (punctuation
split, digit-aware period/comma handling); ``zh`` additionally splits every
CJK codepoint into its own token so Chinese output can be scored without a
word segmenter.  Every score carries a signature string that pins the exact
configuration that produced it.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

logger = logging.getLogger(__name__)

MAX_NGRAM_ORDER = 4

# Codepoint ranges padded with spaces by the zh tokenizer.  Covers the
# unified ideographs, extensions, compatibility blocks, CJK punctuation and
# fullwidth forms, radicals, strokes, bopomofo, and the misc symbol blocks
# that commonly appear in Chinese text.
_CJK_RANGES = (
    (0x3400, 0x4DB5),
    (0x4E00, 0x9FA5),
    (0x9FA6, 0x9FBB),
    (0xF900, 0xFA2D),
    (0xFA30, 0xFA6A),
    (0xFA70, 0xFAD9),
    (0x20000, 0x2A6D6),
    (0x2F800, 0x2FA1D),
    (0xFF00, 0xFFEF),
    (0x2E80, 0x2EFF),
    (0x3000, 0x303F),
    (0x31C0, 0x31EF),
    (0x2F00, 0x2FDF),
    (0x2FF0, 0x2FFF),
    (0x3100, 0x312F),
    (0x31A0, 0x31BF),
    (0xFE10, 0xFE1F),
    (0xFE30, 0xFE4F),
    (0x2600, 0x26FF),
    (0x2700, 0x27BF),
    (0x3200, 0x32FF),
    (0x3300, 0x33FF),
)

_PUNCT = re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])")
_PERIOD_COMMA_BEFORE = re.compile(r"([^0-9])([\.,])")
_PERIOD_COMMA_AFTER = re.compile(r"([\.,])([^0-9])")
_DIGIT_DASH = re.compile(r"([0-9])(-)")
_WHITESPACE = re.compile(r"\s+")


class MetricError(ValueError):
    """Raised on invalid scoring inputs or a misbehaving adapter."""


def is_cjk_char(char: str) -> bool:
    cp = ord(char)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def _split_punct(text: str) -> str:
    # Shared tail of both tokenizers: split punctuation, handle period and
    # comma next to digits, split a dash after a digit, collapse whitespace.
    text = _PUNCT.sub(r" \1 ", text)
    text = _PERIOD_COMMA_BEFORE.sub(r"\1 \2 ", text)
    text = _PERIOD_COMMA_AFTER.sub(r" \1 \2", text)
    text = _DIGIT_DASH.sub(r"\1 \2 ", text)
    return _WHITESPACE.sub(" ", text).strip()


def _tokenize_t13a(text: str) -> str:
    text = text.replace("<skipped>", "")
    text = text.replace("-\n", "")
    text = text.replace("\n", " ")
    # only these four entities are unescaped, by design
    text = text.replace("&quot;", '"')
    text = text.replace("&amp;", "&")
    text = text.replace("&lt;", "<")
    text = text.replace("&gt;", ">")
    return _split_punct(f" {text} ")


def _tokenize_zh(text: str) -> str:
    text = text.strip()
    padded: list[str] = []
    for char in text:
        if is_cjk_char(char):
            padded.append(f" {char} ")
        else:
            padded.append(char)
    return _split_punct("".join(padded))


_TOKENIZERS: dict[str, Callable[[str], str]] = {
    "t13a": _tokenize_t13a,
    "zh": _tokenize_zh,
}


def tokenize(text: str, tokenizer: str = "t13a") -> list[str]:
    """Split text into scoring tokens under the named tokenizer."""
    try:
        fn = _TOKENIZERS[tokenizer]
    except KeyError:
        raise MetricError(
            f"unknown tokenizer {tokenizer!r}; expected one of {sorted(_TOKENIZERS)}"
        ) from None
    return fn(text).split()


# ── configuration and score types ────────────────────────────────────


@dataclass(frozen=True)
class BleuConfig:
    """Scoring configuration; the signature string pins all of it."""

    tokenizer: str = "t13a"
    smoothing: str = "exp"
    lowercase: bool = False
    max_ngram_order: int = MAX_NGRAM_ORDER

    def __post_init__(self) -> None:
        if self.tokenizer not in _TOKENIZERS:
            raise MetricError(f"unknown tokenizer {self.tokenizer!r}")
        if self.smoothing not in ("exp", "none"):
            raise MetricError(f"unknown smoothing {self.smoothing!r}")
        if self.max_ngram_order != MAX_NGRAM_ORDER:
            raise MetricError("max_ngram_order is fixed at 4")

    @property
    def signature(self) -> str:
        case = "lc" if self.lowercase else "mixed"
        return (
            f"BLEU+case.{case}+nrefs.1+smooth.{self.smoothing}"
            f"+tok.{self.tokenizer}+order.{self.max_ngram_order}+eff.yes"
        )


@dataclass(frozen=True)
class BleuScore:
    """A BLEU result: score in [0, 100] plus its full decomposition.

    ``precisions`` are clipped n-gram precisions as percentages, so
    score == brevity_penalty * geometric_mean(precisions) over the
    effective orders.
    """

    score: float
    precisions: tuple[float, float, float, float]
    brevity_penalty: float
    sys_len: int
    ref_len: int
    signature: str

    def format(self) -> str:
        precs = "/".join(f"{p:.1f}" for p in self.precisions)
        return (
            f"BLEU = {self.score:.2f} {precs} "
            f"(BP = {self.brevity_penalty:.3f} sys_len = {self.sys_len} "
            f"ref_len = {self.ref_len}) [{self.signature}]"
        )


# ── core computation ─────────────────────────────────────────────────


def extract_ngrams(tokens: Sequence[str], max_order: int = MAX_NGRAM_ORDER) -> Counter:
    """Multiset of space-joined n-grams, orders 1..max_order."""
    ngrams: Counter = Counter()
    for n in range(1, max_order + 1):
        for i in range(len(tokens) - n + 1):
            ngrams[" ".join(tokens[i : i + n])] += 1
    return ngrams


def _my_log(value: float) -> float:
    if value == 0.0:
        return -9999999999.0
    return math.log(value)


def _score_from_counts(
    correct: list[int],
    total: list[int],
    sys_len: int,
    ref_len: int,
    config: BleuConfig,
) -> BleuScore:
    precisions = [0.0] * MAX_NGRAM_ORDER
    smooth = 1.0
    effective_order = 0
    for n in range(MAX_NGRAM_ORDER):
        if total[n] == 0:
            break
        effective_order = n + 1
        if correct[n] == 0:
            if config.smoothing == "exp":
                smooth *= 2
                precisions[n] = 100.0 / (smooth * total[n])
        else:
            precisions[n] = 100.0 * correct[n] / total[n]

    brevity_penalty = 1.0
    if sys_len < ref_len:
        brevity_penalty = math.exp(1 - ref_len / sys_len) if sys_len > 0 else 0.0

    if effective_order == 0:
        score = 0.0
    else:
        score = brevity_penalty * math.exp(
            sum(_my_log(p) for p in precisions[:effective_order]) / effective_order
        )

    return BleuScore(
        score=score,
        precisions=tuple(precisions),  # type: ignore[arg-type]
        brevity_penalty=brevity_penalty,
        sys_len=sys_len,
        ref_len=ref_len,
        signature=config.signature,
    )


def corpus_bleu(
    hypotheses: Sequence[str],
    references: Sequence[str],
    config: BleuConfig | None = None,
) -> BleuScore:
    """Corpus-level BLEU of hypotheses against aligned references.

    Counts are pooled over all segments before the precision/BP computation,
    so this is not a mean of sentence scores.  The geometric mean runs over
    the orders that actually occur (an all-short corpus is scored at its
    highest populated order rather than zeroed).
    """
    config = config or BleuConfig()
    if len(hypotheses) != len(references):
        raise MetricError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if not hypotheses:
        raise MetricError("empty corpus")

    if config.tokenizer != "zh" and any(
        any(is_cjk_char(c) for c in ref) for ref in references
    ):
        logger.warning(
            "references contain CJK codepoints but tokenizer is %r; "
            "use 'zh' to score Chinese text",
            config.tokenizer,
        )

    correct = [0] * MAX_NGRAM_ORDER
    total = [0] * MAX_NGRAM_ORDER
    sys_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        if config.lowercase:
            hyp, ref = hyp.lower(), ref.lower()
        hyp_tokens = tokenize(hyp, config.tokenizer)
        ref_tokens = tokenize(ref, config.tokenizer)
        sys_len += len(hyp_tokens)
        ref_len += len(ref_tokens)
        ref_ngrams = extract_ngrams(ref_tokens)
        for ngram, count in extract_ngrams(hyp_tokens).items():
            order = ngram.count(" ")
            total[order] += count
            correct[order] += min(count, ref_ngrams.get(ngram, 0))

    if sys_len == 0:
        logger.warning("all hypotheses are empty; BLEU is 0")

    return _score_from_counts(correct, total, sys_len, ref_len, config)


def sentence_bleu(
    hypothesis: str,
    reference: str,
    config: BleuConfig | None = None,
) -> BleuScore:
    """BLEU of a single segment; smoothing is forced to exp.

    Sentence scores without smoothing collapse to 0 whenever any order has
    no match, which makes them useless for ranking short outputs, so the
    single-segment entry point always smooths.
    """
    config = config or BleuConfig()
    if config.smoothing != "exp":
        config = BleuConfig(
            tokenizer=config.tokenizer,
            smoothing="exp",
            lowercase=config.lowercase,
        )
    return corpus_bleu([hypothesis], [reference], config)


# ── external metric adapters ─────────────────────────────────────────


@dataclass(frozen=True)
class MetricAdapter:
    """A named external scorer reachable over HTTP."""

    name: str
    endpoint: str
    timeout: float = 30.0


def _post_json(url: str, payload: dict, timeout: float) -> dict:
    import requests

    response = requests.post(url, json=payload, timeout=timeout)
    response.raise_for_status()
    return response.json()


def score_with_adapter(
    adapter: MetricAdapter,
    hypotheses: Sequence[str],
    references: Sequence[str],
    sources: Sequence[str] | None = None,
    *,
    post: Callable[[str, dict, float], dict] | None = None,
) -> list[float]:
    """Score aligned segment pairs with an external metric service.

    One POST carries all pairs: ``{"metric": name, "pairs": [{"hyp": …,
    "ref": …, "src": …}, …]}``; the reply must be ``{"scores": [...]}``
    aligned with the request.  ``src`` is included only when sources are
    given.  Raises MetricError on transport failure, a count mismatch, or
    non-numeric scores.
    """
    if len(hypotheses) != len(references):
        raise MetricError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if sources is not None and len(sources) != len(hypotheses):
        raise MetricError(f"{len(sources)} sources vs {len(hypotheses)} hypotheses")

    pairs = []
    for i, (hyp, ref) in enumerate(zip(hypotheses, references)):
        pair = {"hyp": hyp, "ref": ref}
        if sources is not None:
            pair["src"] = sources[i]
        pairs.append(pair)

    post = post or _post_json
    try:
        reply = post(adapter.endpoint, {"metric": adapter.name, "pairs": pairs}, adapter.timeout)
    except MetricError:
        raise
    except Exception as exc:
        raise MetricError(f"adapter {adapter.name!r} failed: {exc}") from exc

    scores = reply.get("scores") if isinstance(reply, dict) else None
    if not isinstance(scores, list) or len(scores) != len(pairs):
        raise MetricError(
            f"adapter {adapter.name!r} returned "
            f"{0 if not isinstance(scores, list) else len(scores)} scores "
            f"for {len(pairs)} pairs"
        )
    out: list[float] = []
    for value in scores:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise MetricError(f"adapter {adapter.name!r} returned non-numeric score {value!r}")
        out.append(float(value))
    return out


# ── score table IO ───────────────────────────────────────────────────

SCORES_CSV_COLUMNS = ("system", "metric", "signature", "score")


@dataclass(frozen=True)
class ScoreRow:
    """One (system, metric) cell of the automatic-evaluation table."""

    system: str
    metric: str
    signature: str
    score: float


def write_scores_csv(rows: Iterable[ScoreRow], path: str | Path) -> None:
    """Write score rows at full float precision (tables round on render)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(SCORES_CSV_COLUMNS)
        for row in rows:
            writer.writerow([row.system, row.metric, row.signature, repr(row.score)])


def read_scores_csv(path: str | Path) -> list[ScoreRow]:
    path = Path(path)
    rows: list[ScoreRow] = []
    with path.open(encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != SCORES_CSV_COLUMNS:
            raise MetricError(f"{path.name}: unexpected columns {reader.fieldnames}")
        for record in reader:
            rows.append(
                ScoreRow(
                    system=record["system"],
                    metric=record["metric"],
                    signature=record["signature"],
                    score=float(record["score"]),
                )
            )
    return rows


def scores_table_markdown(rows: Sequence[ScoreRow]) -> str:
    """Systems × metrics Markdown table, scores at 1 decimal."""
    systems: dict[str, None] = {}
    metrics: dict[str, None] = {}
    cells: dict[tuple[str, str], float] = {}
    for row in rows:
        systems.setdefault(row.system)
        metrics.setdefault(row.metric)
        cells[(row.system, row.metric)] = row.score
    header = "| System | " + " | ".join(metrics) + " |"
    rule = "|---" * (len(metrics) + 1) + "|"
    lines = [header, rule]
    for system in systems:
        formatted = [
            f"{cells[(system, metric)]:.1f}" if (system, metric) in cells else ""
            for metric in metrics
        ]
        lines.append("| " + " | ".join([system] + formatted) + " |")
    return "\n".join(lines) + "\n"
