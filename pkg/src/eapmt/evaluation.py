"""Blinded human evaluation workflows and an LLM judge.

Candidates are shuffled per poem under a seed and shown to judges behind
neutral labels; the label-to-system mapping lives in a separate key file so
questionnaires can circulate without revealing which system produced what.
Filled sheets come back as CSV, are validated strictly, and de-blind only at
aggregation time.  The LLM judge renders the rubric prompt over 2..5
candidates and parses a machine-readable score block, with a line-oriented
fallback for models that ignore formatting instructions.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import random
import re
import string
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import PoemPair
from .llm_client import LLMClient, ModelSpec
from .prompts import TemplateId, render
from .translate import TranslationRecord

logger = logging.getLogger(__name__)


class EvaluationError(ValueError):
    """Raised on malformed sheets, incomplete ballots, or key mismatches."""


class JudgeParseError(EvaluationError):
    """The judge model's response could not be parsed into scores.

    Carries the raw response on ``.raw`` for inspection.
    """

    def __init__(self, message: str, raw: str) -> None:
        super().__init__(message)
        self.raw = raw


# ── criteria ─────────────────────────────────────────────────────────


class Criterion(Enum):
    """The eight rubric criteria, scored 1..6.

    5 means comparable to the reference translation; 6 means better.
    """

    OI = ("Overall Impression", (
        "This criterion evaluates the general impact of the candidate "
        "translation as compared to the source poem or reference "
        "translation. It assesses whether the translation successfully "
        "captures the essence and tone of the original."
    ))
    SIM = ("Similarity", (
        "Measures the degree of similarity between the candidate translation "
        "and the reference translation, focusing on stylistic and thematic "
        "alignment."
    ))
    FIDE = ("Fidelity", (
        "Assesses how faithfully the translation conveys the original poem's "
        "intent, emotions, and deeper meanings, thus evaluating whether the "
        "translation transcends mere linguistic equivalence to preserve the "
        "poem's core essence."
    ))
    LINE = ("Line-breaking", (
        "Evaluates the appropriateness of line breaks in the translation in "
        "comparison to the source poem or reference translation, considering "
        "how these contribute to the poem's rhythm and tension."
    ))
    MEAN = ("Meaningfulness", (
        "Examines the extent to which the translation conveys the original "
        "poem's meanings, exploring both surface-level content and deeper "
        "interpretative layers."
    ))
    POET = ("Poeticity", (
        "Assesses how well the poetic qualities of the original text, such "
        "as imagery, metaphor, and overall poetic effect, are preserved in "
        "the translation."
    ))
    ACC = ("Accuracy", (
        "Focuses on the precision of translated elements, including words "
        "and word combinations, crucial to maintaining the integrity of the "
        "poem."
    ))
    ERRO = ("Errors", (
        "Identifies and categorizes errors in the translation, with a "
        "detailed scoring system that ranges from minor, ignorable mistakes "
        "to significant errors that alter the poem's meaning."
    ))

    def __init__(self, full_name: str, definition: str) -> None:
        self.full_name = full_name
        self.definition = definition

    @property
    def label(self) -> str:
        """The short column label (OI, Sim, Fide, …)."""
        return _CRITERION_LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "Criterion":
        for criterion, known in _CRITERION_LABELS.items():
            if known == label:
                return criterion
        raise EvaluationError(f"unknown criterion label {label!r}")


_CRITERION_LABELS = {
    Criterion.OI: "OI",
    Criterion.SIM: "Sim",
    Criterion.FIDE: "Fide",
    Criterion.LINE: "Line",
    Criterion.MEAN: "Mean",
    Criterion.POET: "Poet",
    Criterion.ACC: "Acc",
    Criterion.ERRO: "Erro",
}

CRITERIA = tuple(Criterion)
SCORE_MIN, SCORE_MAX = 1, 6


def criteria_definitions_block() -> str:
    """The rubric definitions as one line per criterion."""
    return "\n".join(
        f"{c.full_name} ({c.label}): {c.definition}" for c in CRITERIA
    )


def round_half_up(value, ndigits: int = 2) -> float:
    """Decimal rounding where .5 always goes up (treaty for printed means)."""
    quantum = Decimal(1).scaleb(-ndigits)
    return float(Decimal(str(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def _mean_half_up(values: Sequence[int], ndigits: int = 2) -> float:
    total = Decimal(sum(values))
    mean = total / Decimal(len(values))
    quantum = Decimal(1).scaleb(-ndigits)
    return float(mean.quantize(quantum, rounding=ROUND_HALF_UP))


# ── sheets, ballots, blinding ────────────────────────────────────────


@dataclass(frozen=True)
class Ballot:
    """One vote: a judge's preferred blinded candidate for one poem."""

    judge_id: str
    pair_id: str
    choice: str


@dataclass(frozen=True)
class ScoreSheet:
    """One judge's scores for one blinded candidate on one poem."""

    judge_id: str
    pair_id: str
    candidate_id: str
    scores: Mapping[Criterion, int]

    def __post_init__(self) -> None:
        missing = [c.label for c in CRITERIA if c not in self.scores]
        if missing:
            raise EvaluationError(
                f"sheet ({self.judge_id}, {self.pair_id}, {self.candidate_id}): "
                f"missing criteria {missing}"
            )
        for criterion, score in self.scores.items():
            if not isinstance(score, int) or isinstance(score, bool):
                raise EvaluationError(
                    f"sheet ({self.judge_id}, {self.pair_id}, "
                    f"{self.candidate_id}): {criterion.label} score "
                    f"{score!r} is not an integer"
                )
            if not SCORE_MIN <= score <= SCORE_MAX:
                raise EvaluationError(
                    f"sheet ({self.judge_id}, {self.pair_id}, "
                    f"{self.candidate_id}): {criterion.label} score {score} "
                    f"outside {SCORE_MIN}..{SCORE_MAX}"
                )


@dataclass(frozen=True)
class BlindingKey:
    """Per-poem mapping from neutral candidate labels to system names.

    This is the only place the mapping exists; keep it away from judges.
    """

    seed: int
    assignments: Mapping[str, Mapping[str, str]]  # pair_id -> label -> system

    def labels_for(self, pair_id: str) -> tuple[str, ...]:
        try:
            return tuple(self.assignments[pair_id])
        except KeyError:
            raise EvaluationError(f"key has no poem {pair_id!r}") from None

    def system_for(self, pair_id: str, label: str) -> str:
        labels = self.assignments.get(pair_id)
        if labels is None:
            raise EvaluationError(f"key has no poem {pair_id!r}")
        try:
            return labels[label]
        except KeyError:
            raise EvaluationError(
                f"poem {pair_id!r} has no candidate label {label!r}; "
                f"known labels: {sorted(labels)}"
            ) from None

    @property
    def systems(self) -> tuple[str, ...]:
        found: dict[str, None] = {}
        for labels in self.assignments.values():
            for system in labels.values():
                found.setdefault(system)
        return tuple(found)

    @property
    def pair_ids(self) -> tuple[str, ...]:
        return tuple(self.assignments)

    def to_json(self) -> dict:
        return {
            "_warning": (
                "BLINDING KEY — maps candidate labels to system names. "
                "Do not share with judges before evaluation is complete."
            ),
            "seed": self.seed,
            "assignments": {
                pair_id: dict(labels)
                for pair_id, labels in self.assignments.items()
            },
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json(), ensure_ascii=False, indent=2) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def from_json(cls, obj: dict) -> "BlindingKey":
        return cls(seed=obj["seed"], assignments=obj["assignments"])

    @classmethod
    def load(cls, path: str | Path) -> "BlindingKey":
        with Path(path).open(encoding="utf-8") as handle:
            return cls.from_json(json.load(handle))


def _pair_rng(seed: int, pair_id: str) -> random.Random:
    # hash() is process-salted; derive a stable per-poem stream instead
    digest = hashlib.sha256(f"{seed}:{pair_id}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def make_blinding_key(
    pair_ids: Sequence[str],
    systems: Sequence[str],
    seed: int,
    label_style: str = "letters",
) -> BlindingKey:
    """Assign neutral labels to systems, shuffled independently per poem."""
    if len(set(systems)) != len(systems):
        raise EvaluationError(f"duplicate system names in {list(systems)}")
    if label_style == "letters":
        if len(systems) > len(string.ascii_uppercase):
            raise EvaluationError("too many systems for letter labels")
        labels = tuple(string.ascii_uppercase[: len(systems)])
    elif label_style == "numbers":
        labels = tuple(str(i) for i in range(1, len(systems) + 1))
    else:
        raise EvaluationError(f"unknown label_style {label_style!r}")

    assignments = {}
    for pair_id in pair_ids:
        shuffled = list(systems)
        _pair_rng(seed, pair_id).shuffle(shuffled)
        assignments[pair_id] = dict(zip(labels, shuffled))
    return BlindingKey(seed=seed, assignments=assignments)


# ── questionnaires ───────────────────────────────────────────────────

VOTE_COLUMNS = ("judge_id", "pair_id", "choice")
SCORE_COLUMNS = ("judge_id", "pair_id", "candidate_id") + tuple(
    c.label for c in CRITERIA
)


@dataclass(frozen=True)
class QuestionnairePack:
    """Everything a blinded evaluation round needs, keyed by file name.

    ``files`` holds the questionnaire Markdown per judge plus one blank CSV
    answer sheet; ``key`` is the de-blinding key and must be stored apart
    from the files given to judges.
    """

    files: Mapping[str, str]
    key: BlindingKey
    mode: str

    def save(self, directory: str | Path, key_name: str = "key.json") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for name, content in self.files.items():
            path = directory / name
            path.write_text(content, encoding="utf-8")
            written.append(path)
        key_path = directory / key_name
        self.key.save(key_path)
        written.append(key_path)
        return written


def _index_candidates(
    candidates: Mapping[str, Sequence[TranslationRecord]],
    pairs: Sequence[PoemPair],
) -> dict[str, dict[str, TranslationRecord]]:
    indexed: dict[str, dict[str, TranslationRecord]] = {}
    for system, records in candidates.items():
        by_pair: dict[str, TranslationRecord] = {}
        for record in records:
            if record.pair_id in by_pair:
                raise EvaluationError(
                    f"system {system!r} has two candidates for poem "
                    f"{record.pair_id!r}"
                )
            by_pair[record.pair_id] = record
        for pair in pairs:
            if pair.pair_id not in by_pair:
                raise EvaluationError(
                    f"system {system!r} is missing a candidate for poem "
                    f"{pair.pair_id!r}"
                )
        indexed[system] = by_pair
    return indexed


def _questionnaire_text(
    pairs: Sequence[PoemPair],
    indexed: Mapping[str, Mapping[str, TranslationRecord]],
    key: BlindingKey,
    mode: str,
    judge_id: str,
) -> str:
    out = io.StringIO()
    out.write("# Poetry translation evaluation\n\n")
    out.write(f"Judge: {judge_id}\n\n")
    if mode == "vote":
        out.write(
            "For each poem below, read every candidate translation and "
            "choose the single candidate you consider the best. Record the "
            "candidate letter in the answer sheet, one vote per poem.\n\n"
        )
    else:
        out.write(
            "For each poem below, score every candidate translation on each "
            "of the eight criteria using a 1-6 scale. A score of 5 means the "
            "candidate is comparable to the reference translation; 6 means "
            "it surpasses the reference. Record the scores in the answer "
            "sheet.\n\n"
        )
        out.write("## Criteria\n\n")
        for criterion in CRITERIA:
            out.write(
                f"- **{criterion.full_name} ({criterion.label})**: "
                f"{criterion.definition}\n"
            )
        out.write("\n")

    for number, pair in enumerate(pairs, start=1):
        out.write(f"## Poem {number} ({pair.pair_id})\n\n")
        out.write("### Source poem\n\n")
        out.write("```\n" + pair.source.prompt_text() + "\n```\n\n")
        if mode == "score":
            out.write("### Reference translation\n\n")
            out.write("```\n" + pair.reference.prompt_text() + "\n```\n\n")
        for label in key.labels_for(pair.pair_id):
            system = key.system_for(pair.pair_id, label)
            record = indexed[system][pair.pair_id]
            out.write(f"### Candidate {label}\n\n")
            out.write("```\n" + record.text + "\n```\n\n")
    return out.getvalue()


def make_questionnaire(
    pairs: Sequence[PoemPair],
    candidates: Mapping[str, Sequence[TranslationRecord]],
    seed: int,
    mode: str = "vote",
    judges: Sequence[str] = ("judge1",),
) -> QuestionnairePack:
    """Build blinded questionnaires and the matching answer sheet.

    ``vote`` mode shows only the source poem and candidates (one preference
    vote per poem); ``score`` mode adds the reference translation and the
    full rubric.  Candidate order is reshuffled per poem from the seed.
    The questionnaires never name systems, models, or runs.
    """
    if mode not in ("vote", "score"):
        raise EvaluationError(f"mode must be 'vote' or 'score', got {mode!r}")
    if not pairs:
        raise EvaluationError("no poems to evaluate")
    if not candidates:
        raise EvaluationError("no candidate systems to evaluate")
    if not judges:
        raise EvaluationError("at least one judge id is required")

    indexed = _index_candidates(candidates, pairs)
    key = make_blinding_key(
        [pair.pair_id for pair in pairs], sorted(candidates), seed
    )

    files: dict[str, str] = {}
    for judge_id in judges:
        files[f"questionnaire_{judge_id}.md"] = _questionnaire_text(
            pairs, indexed, key, mode, judge_id
        )

    sheet = io.StringIO()
    writer = csv.writer(sheet)
    if mode == "vote":
        writer.writerow(VOTE_COLUMNS)
        for judge_id in judges:
            for pair in pairs:
                writer.writerow([judge_id, pair.pair_id, ""])
    else:
        writer.writerow(SCORE_COLUMNS)
        for judge_id in judges:
            for pair in pairs:
                for label in key.labels_for(pair.pair_id):
                    writer.writerow(
                        [judge_id, pair.pair_id, label] + [""] * len(CRITERIA)
                    )
    files["answer_sheet.csv"] = sheet.getvalue()

    return QuestionnairePack(files=files, key=key, mode=mode)


# ── ingestion ────────────────────────────────────────────────────────


def _read_csv(source: str | Path) -> tuple[tuple[str, ...], list[dict]]:
    if isinstance(source, Path) or (
        isinstance(source, str) and "\n" not in source and source.endswith(".csv")
    ):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source
    reader = csv.DictReader(io.StringIO(text))
    return tuple(reader.fieldnames or ()), list(reader)


def ingest_votes(source: str | Path) -> list[Ballot]:
    """Parse a filled vote sheet (CSV text or path)."""
    fieldnames, rows = _read_csv(source)
    if fieldnames != VOTE_COLUMNS:
        raise EvaluationError(
            f"vote sheet columns {list(fieldnames)} != {list(VOTE_COLUMNS)}"
        )
    ballots = []
    for i, row in enumerate(rows, start=2):
        choice = (row["choice"] or "").strip()
        if not choice:
            raise EvaluationError(f"vote sheet line {i}: empty choice")
        ballots.append(
            Ballot(
                judge_id=row["judge_id"].strip(),
                pair_id=row["pair_id"].strip(),
                choice=choice,
            )
        )
    return ballots


def ingest_scores(source: str | Path) -> list[ScoreSheet]:
    """Parse a filled score sheet (CSV text or path)."""
    fieldnames, rows = _read_csv(source)
    if fieldnames != SCORE_COLUMNS:
        raise EvaluationError(
            f"score sheet columns {list(fieldnames)} != {list(SCORE_COLUMNS)}"
        )
    sheets = []
    for i, row in enumerate(rows, start=2):
        scores: dict[Criterion, int] = {}
        for criterion in CRITERIA:
            cell = (row[criterion.label] or "").strip()
            if not re.fullmatch(r"[0-9]+", cell):
                raise EvaluationError(
                    f"score sheet line {i}: {criterion.label} value {cell!r} "
                    f"is not an integer"
                )
            scores[criterion] = int(cell)
        sheets.append(
            ScoreSheet(
                judge_id=row["judge_id"].strip(),
                pair_id=row["pair_id"].strip(),
                candidate_id=row["candidate_id"].strip(),
                scores=scores,
            )
        )
    return sheets


# ── aggregation ──────────────────────────────────────────────────────


def aggregate_votes(ballots: Sequence[Ballot], key: BlindingKey) -> dict[str, int]:
    """De-blind ballots and count votes per system.

    Every (judge, poem) may vote at most once; totals are conserved, so the
    counts sum to the ballot count.
    """
    seen: set[tuple[str, str]] = set()
    counts = {system: 0 for system in key.systems}
    for ballot in ballots:
        voter = (ballot.judge_id, ballot.pair_id)
        if voter in seen:
            raise EvaluationError(
                f"judge {ballot.judge_id!r} voted twice on poem "
                f"{ballot.pair_id!r}"
            )
        seen.add(voter)
        system = key.system_for(ballot.pair_id, ballot.choice)
        counts[system] += 1
    return counts


def _check_sheets_complete(sheets: Sequence[ScoreSheet], key: BlindingKey) -> None:
    seen: set[tuple[str, str, str]] = set()
    for sheet in sheets:
        item = (sheet.judge_id, sheet.pair_id, sheet.candidate_id)
        if item in seen:
            raise EvaluationError(
                f"duplicate sheet for judge {sheet.judge_id!r}, poem "
                f"{sheet.pair_id!r}, candidate {sheet.candidate_id!r}"
            )
        seen.add(item)
    judges = sorted({sheet.judge_id for sheet in sheets})
    for judge_id in judges:
        for pair_id in key.pair_ids:
            for label in key.labels_for(pair_id):
                if (judge_id, pair_id, label) not in seen:
                    raise EvaluationError(
                        f"judge {judge_id!r} is missing a sheet for poem "
                        f"{pair_id!r}, candidate {label!r}"
                    )


def aggregate_scores(
    sheets: Sequence[ScoreSheet], key: BlindingKey
) -> dict[str, dict[Criterion, float]]:
    """De-blind score sheets into per-system criterion means.

    Requires a complete grid (every judge scored every candidate of every
    poem).  Means are rounded half-up to 2 decimals, the convention used in
    the reported tables.
    """
    if not sheets:
        raise EvaluationError("no score sheets")
    _check_sheets_complete(sheets, key)
    by_system: dict[str, dict[Criterion, list[int]]] = {
        system: {criterion: [] for criterion in CRITERIA}
        for system in key.systems
    }
    for sheet in sheets:
        system = key.system_for(sheet.pair_id, sheet.candidate_id)
        for criterion in CRITERIA:
            by_system[system][criterion].append(sheet.scores[criterion])
    return {
        system: {
            criterion: _mean_half_up(values)
            for criterion, values in by_criterion.items()
        }
        for system, by_criterion in by_system.items()
    }


def count_six(
    sheets: Sequence[ScoreSheet], key: BlindingKey
) -> dict[str, dict[Criterion, int]]:
    """Count surpasses-the-reference scores (6) per system and criterion."""
    counts: dict[str, dict[Criterion, int]] = {
        system: {criterion: 0 for criterion in CRITERIA}
        for system in key.systems
    }
    for sheet in sheets:
        system = key.system_for(sheet.pair_id, sheet.candidate_id)
        for criterion, score in sheet.scores.items():
            if score == SCORE_MAX:
                counts[system][criterion] += 1
    return counts


# ── LLM judge ────────────────────────────────────────────────────────

_COUNT_WORDS = {2: "two", 3: "three", 4: "four", 5: "five"}

_JUDGE_FORMAT_INSTRUCTION = (
    "\n\nReturn the scores as a fenced JSON object mapping each candidate "
    "number to an object with its eight criterion scores, like:\n"
    "```json\n"
    '{"1": {"OI": 4, "Sim": 4, "Fide": 4, "Line": 4, '
    '"Mean": 4, "Poet": 4, "Acc": 4, "Erro": 4}}\n'
    "```"
)

_FENCED_JSON = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.DOTALL)
_CANDIDATE_LINE = re.compile(r"Candidate(?:\s+translation)?\s+(\d+)\s*[:—–-]+\s*(.+)")
_LABEL_SCORE = re.compile(
    r"(OI|Sim|Fide|Line|Mean|Poet|Acc|Erro)\s*[::]\s*([0-9]+)"
)


def judge_prompt(
    pair: PoemPair,
    candidates: Sequence[TranslationRecord],
    include_format_instruction: bool = True,
) -> str:
    """Render the rubric prompt over 2..5 candidates."""
    if not 2 <= len(candidates) <= 5:
        raise EvaluationError(
            f"judge takes 2..5 candidates, got {len(candidates)}"
        )
    for record in candidates:
        if record.pair_id != pair.pair_id:
            raise EvaluationError(
                f"candidate for poem {record.pair_id!r} does not belong to "
                f"{pair.pair_id!r}"
            )
    block = "\n".join(
        f"Candidate translation {i}: {record.text}"
        for i, record in enumerate(candidates, start=1)
    )
    rendered = render(
        TemplateId.JUDGE,
        {
            "count": _COUNT_WORDS[len(candidates)],
            "criteria": criteria_definitions_block(),
            "source": pair.source.prompt_text(),
            "reference": pair.reference.prompt_text(),
            "candidates": block,
        },
    )
    text = rendered.text
    if include_format_instruction:
        text += _JUDGE_FORMAT_INSTRUCTION
    return text


def _coerce_score_obj(obj, raw: str) -> dict[str, dict[Criterion, int]]:
    if not isinstance(obj, dict):
        raise JudgeParseError("score block is not a JSON object", raw)
    parsed: dict[str, dict[Criterion, int]] = {}
    for candidate_id, scores in obj.items():
        if not isinstance(scores, dict):
            raise JudgeParseError(
                f"candidate {candidate_id!r} scores are not an object", raw
            )
        converted: dict[Criterion, int] = {}
        for label, value in scores.items():
            criterion = Criterion.from_label(label)
            if isinstance(value, bool) or not isinstance(value, int):
                raise JudgeParseError(
                    f"candidate {candidate_id!r} {label} score {value!r} is "
                    f"not an integer",
                    raw,
                )
            converted[criterion] = value
        parsed[str(candidate_id)] = converted
    return parsed


def parse_judge_response(raw: str, n_candidates: int) -> dict[str, dict[Criterion, int]]:
    """Extract candidate scores from a judge response.

    Tries the fenced JSON block first, then the whole text as JSON, then a
    line-oriented format ("Candidate 1 — OI: 4, Sim: 3, …").  The result
    must cover exactly candidates 1..n with all eight criteria, each in
    1..6.
    """
    attempts: list[dict] = []
    fenced = _FENCED_JSON.search(raw)
    if fenced:
        try:
            attempts.append(json.loads(fenced.group(1)))
        except json.JSONDecodeError:
            pass
    if not attempts:
        try:
            attempts.append(json.loads(raw))
        except json.JSONDecodeError:
            pass

    parsed: dict[str, dict[Criterion, int]] | None = None
    if attempts:
        parsed = _coerce_score_obj(attempts[0], raw)
    else:
        collected: dict[str, dict[Criterion, int]] = {}
        for match in _CANDIDATE_LINE.finditer(raw):
            candidate_id, rest = match.group(1), match.group(2)
            scores = {
                Criterion.from_label(label): int(value)
                for label, value in _LABEL_SCORE.findall(rest)
            }
            if scores:
                collected[candidate_id] = scores
        if not collected:
            raise JudgeParseError("no parseable score block found", raw)
        parsed = collected

    expected = {str(i) for i in range(1, n_candidates + 1)}
    if set(parsed) != expected:
        raise JudgeParseError(
            f"scores cover candidates {sorted(parsed)} but the prompt had "
            f"{sorted(expected)}",
            raw,
        )
    for candidate_id, scores in parsed.items():
        missing = [c.label for c in CRITERIA if c not in scores]
        if missing:
            raise JudgeParseError(
                f"candidate {candidate_id} is missing criteria {missing}", raw
            )
        for criterion, value in scores.items():
            if not SCORE_MIN <= value <= SCORE_MAX:
                raise JudgeParseError(
                    f"candidate {candidate_id} {criterion.label} score "
                    f"{value} outside {SCORE_MIN}..{SCORE_MAX}",
                    raw,
                )
    return parsed


def serialize_scores(parsed: Mapping[str, Mapping[Criterion, int]]) -> str:
    """Canonical fenced-JSON form of a parsed score block."""
    obj = {
        candidate_id: {criterion.label: score for criterion, score in scores.items()}
        for candidate_id, scores in sorted(parsed.items(), key=lambda kv: kv[0])
    }
    return "```json\n" + json.dumps(obj, ensure_ascii=False) + "\n```"


def llm_judge(
    pair: PoemPair,
    candidates: Sequence[TranslationRecord],
    model: ModelSpec,
    client: LLMClient,
) -> list[ScoreSheet]:
    """Score 2..5 candidates with a judge model; one sheet per candidate.

    Sheets use positional candidate ids ("1".."n", prompt order) and the
    model name as the judge id.
    """
    prompt = judge_prompt(pair, candidates)
    raw = client.complete(model, prompt)
    parsed = parse_judge_response(raw, len(candidates))
    return [
        ScoreSheet(
            judge_id=model.name,
            pair_id=pair.pair_id,
            candidate_id=candidate_id,
            scores=scores,
        )
        for candidate_id, scores in sorted(parsed.items(), key=lambda kv: int(kv[0]))
    ]


# ── poeticity consistency ────────────────────────────────────────────


@dataclass(frozen=True)
class ConsistencyResult:
    """Model-vs-consensus agreement on most-poetic-line picks."""

    matches: int
    unresolved: int
    total: int
    per_poem: Mapping[str, Mapping[str, object]] = field(default_factory=dict)


def _normalize_line(text: str) -> str:
    text = text.strip().strip('"“”「」‘’\'')
    return re.sub(r"\s+", " ", text).strip()


def poetic_consistency(
    pairs: Sequence[PoemPair],
    side: str,
    model_picks: Mapping[str, str],
    human_votes: Sequence[Ballot],
) -> ConsistencyResult:
    """Count poems where the model's most-poetic-line pick matches the
    human plurality consensus.

    Votes and picks are compared after whitespace normalization (and quote
    stripping for model output).  Plurality ties leave a poem unresolved;
    unresolved poems never count as matches.  Every judge must vote on
    every poem.
    """
    if side not in ("source", "translation"):
        raise EvaluationError(f"side must be 'source' or 'translation', got {side!r}")

    votes_by_pair: dict[str, list[Ballot]] = {pair.pair_id: [] for pair in pairs}
    judges = sorted({vote.judge_id for vote in human_votes})
    for vote in human_votes:
        if vote.pair_id not in votes_by_pair:
            raise EvaluationError(f"vote on unknown poem {vote.pair_id!r}")
        votes_by_pair[vote.pair_id].append(vote)
    for pair_id, votes in votes_by_pair.items():
        voters = {vote.judge_id for vote in votes}
        if voters != set(judges):
            raise EvaluationError(
                f"poem {pair_id!r} is missing votes from "
                f"{sorted(set(judges) - voters)}"
            )

    matches = 0
    unresolved = 0
    per_poem: dict[str, dict[str, object]] = {}
    for pair in pairs:
        poem = pair.source if side == "source" else pair.reference
        poem_lines = {_normalize_line(line) for line in poem.content_lines}

        tally: dict[str, int] = {}
        for vote in votes_by_pair[pair.pair_id]:
            tally[_normalize_line(vote.choice)] = (
                tally.get(_normalize_line(vote.choice), 0) + 1
            )
        top = max(tally.values())
        leaders = [line for line, count in tally.items() if count == top]
        consensus = leaders[0] if len(leaders) == 1 else None

        pick_raw = model_picks.get(pair.pair_id)
        pick = _normalize_line(pick_raw) if pick_raw is not None else None
        if pick is not None and pick not in poem_lines:
            logger.warning(
                "model pick for %s is not a line of the poem: %r",
                pair.pair_id,
                pick_raw,
            )

        if consensus is None:
            unresolved += 1
            matched = False
        else:
            matched = pick is not None and pick == consensus
            if matched:
                matches += 1
        per_poem[pair.pair_id] = {
            "consensus": consensus,
            "model_pick": pick,
            "match": matched,
        }

    return ConsistencyResult(
        matches=matches,
        unresolved=unresolved,
        total=len(pairs),
        per_poem=per_poem,
    )
