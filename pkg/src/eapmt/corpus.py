"""Poem corpus loading, validation, and deterministic sampling.

A corpus is a line-delimited JSON file: one record per poem pair with keys
``pair_id``, ``source``, and ``reference``.  Each poem object carries
``title``, ``language``, ``author``, and ``lines``.  All strings are
NFC-normalized on load and on save so that round-trips are byte-stable.
"""

from __future__ import annotations

import json
import logging
import random
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

# Unicode ranges treated as CJK when sanity-checking a poem's declared
# language against its script.  Deliberately coarse: it only feeds warnings.
_CJK_RANGES = (
    (0x4E00, 0x9FFF),
    (0x3400, 0x4DBF),
    (0xF900, 0xFAFF),
    (0x3000, 0x303F),
    (0xFF00, 0xFFEF),
)


class CorpusFormatError(ValueError):
    """Raised when a corpus file or record violates the schema."""


def _is_cjk(char: str) -> bool:
    cp = ord(char)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def _nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


# ── poem and pair types ──────────────────────────────────────────────


@dataclass(frozen=True)
class Poem:
    """One poem: an id, metadata, and its lines.

    ``lines`` preserves interior blank lines (stanza breaks); blank lines do
    not count as content.  ``language`` is a BCP-47-ish short code, in
    practice ``en`` or ``zh``.
    """

    id: str
    title: str
    language: str
    author: str
    lines: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.lines:
            raise CorpusFormatError(f"poem {self.id!r}: lines must be non-empty")
        if not any(line.strip() for line in self.lines):
            raise CorpusFormatError(
                f"poem {self.id!r}: at least one line must be non-blank"
            )
        self._check_script()

    def _check_script(self) -> None:
        text = "".join(self.lines)
        cjk = sum(1 for c in text if _is_cjk(c))
        letters = sum(1 for c in text if c.isalpha() or _is_cjk(c))
        if letters == 0:
            return
        ratio = cjk / letters
        if self.language == "zh" and ratio < 0.5:
            logger.warning("poem %s declared zh but text is mostly non-CJK", self.id)
        if self.language == "en" and ratio > 0.5:
            logger.warning("poem %s declared en but text is mostly CJK", self.id)

    @property
    def content_lines(self) -> tuple[str, ...]:
        """Lines with stanza-break blanks removed."""
        return tuple(line for line in self.lines if line.strip())

    @property
    def text(self) -> str:
        """The poem body with original line breaks."""
        return "\n".join(self.lines)

    def prompt_text(self) -> str:
        """Title plus body, the form poems take inside prompts."""
        if self.title:
            return f"{self.title}\n{self.text}"
        return self.text


@dataclass(frozen=True)
class PoemPair:
    """A source poem and its reference translation."""

    pair_id: str
    source: Poem
    reference: Poem

    def __post_init__(self) -> None:
        if self.source.language == self.reference.language:
            logger.warning(
                "pair %s: source and reference share language %r",
                self.pair_id,
                self.source.language,
            )


Corpus = list[PoemPair]


# ── serialization ────────────────────────────────────────────────────


def _poem_from_obj(obj: dict, poem_id: str, where: str) -> Poem:
    for key in ("title", "language", "author", "lines"):
        if key not in obj:
            raise CorpusFormatError(f"{where}: poem object missing key {key!r}")
    lines = obj["lines"]
    if not isinstance(lines, list) or not all(isinstance(s, str) for s in lines):
        raise CorpusFormatError(f"{where}: 'lines' must be a list of strings")
    return Poem(
        id=poem_id,
        title=_nfc(obj["title"]),
        language=_nfc(obj["language"]),
        author=_nfc(obj["author"]),
        lines=tuple(_nfc(s) for s in lines),
    )


def _poem_to_obj(poem: Poem) -> dict:
    return {
        "title": _nfc(poem.title),
        "language": _nfc(poem.language),
        "author": _nfc(poem.author),
        "lines": [_nfc(s) for s in poem.lines],
    }


def load_corpus(path: str | Path) -> Corpus:
    """Read a line-delimited JSON corpus file.

    Raises CorpusFormatError naming the offending line for malformed JSON,
    schema violations, duplicate pair ids, or an empty file.
    """
    path = Path(path)
    pairs: Corpus = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            where = f"{path.name}:{lineno}"
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{where}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise CorpusFormatError(f"{where}: record must be a JSON object")
            for key in ("pair_id", "source", "reference"):
                if key not in obj:
                    raise CorpusFormatError(f"{where}: record missing key {key!r}")
            pair_id = _nfc(obj["pair_id"])
            if pair_id in seen:
                raise CorpusFormatError(f"{where}: duplicate pair_id {pair_id!r}")
            seen.add(pair_id)
            pairs.append(
                PoemPair(
                    pair_id=pair_id,
                    source=_poem_from_obj(obj["source"], f"{pair_id}.src", where),
                    reference=_poem_from_obj(
                        obj["reference"], f"{pair_id}.ref", where
                    ),
                )
            )
    if not pairs:
        raise CorpusFormatError(f"{path.name}: corpus is empty")
    return pairs


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus back to line-delimited JSON (canonical form).

    Canonical means NFC strings, keys in schema order, UTF-8 without escapes,
    one record per line.  load(save(c)) == c for any valid corpus.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for pair in corpus:
            record = {
                "pair_id": _nfc(pair.pair_id),
                "source": _poem_to_obj(pair.source),
                "reference": _poem_to_obj(pair.reference),
            }
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


# ── stats and sampling ───────────────────────────────────────────────


@dataclass(frozen=True)
class CorpusStats:
    """Source-side size summary: pair count, content lines, tokens.

    Tokens are whitespace-split over source content lines; this is the
    language-neutral count reported by the CLI.
    """

    poems: int = 0
    lines: int = 0
    tokens: int = 0

    def __add__(self, other: "CorpusStats") -> "CorpusStats":
        return CorpusStats(
            poems=self.poems + other.poems,
            lines=self.lines + other.lines,
            tokens=self.tokens + other.tokens,
        )


def corpus_stats(corpus: Iterable[PoemPair]) -> CorpusStats:
    """Count pairs, source content lines, and source whitespace tokens."""
    total = CorpusStats()
    for pair in corpus:
        content = pair.source.content_lines
        total = total + CorpusStats(
            poems=1,
            lines=len(content),
            tokens=sum(len(line.split()) for line in content),
        )
    return total


def sample_test_set(
    corpus: Sequence[PoemPair],
    n: int,
    seed: int,
    exclude: Iterable[str] = (),
) -> Corpus:
    """Draw n pairs deterministically, never touching excluded pair ids."""
    excluded = set(exclude)
    candidates = [p for p in corpus if p.pair_id not in excluded]
    if n > len(candidates):
        raise ValueError(
            f"cannot sample {n} pairs from {len(candidates)} candidates"
        )
    rng = random.Random(seed)
    return rng.sample(candidates, n)
