"""Acceptance gate: ten numbered pass/fail checks over shipped behavior.

Run with ``pytest -v tests/test_acceptance.py`` to get exactly one
PASSED/FAILED line per criterion.  Expected values come from committed
oracles (tests/data/) and the bundled replay cache (fixtures/cache/);
every tolerance and time limit is pinned below.
"""

import json
import os
import random
import re
import time
from fractions import Fraction
from math import floor
from pathlib import Path

import pytest

from eapmt.cli import dispatch
from eapmt.corpus import Poem, load_corpus
from eapmt.evaluation import (
    CRITERIA,
    Ballot,
    Criterion,
    JudgeParseError,
    ScoreSheet,
    aggregate_scores,
    aggregate_votes,
    count_six,
    llm_judge,
    make_blinding_key,
    make_questionnaire,
    parse_judge_response,
    serialize_scores,
)
from eapmt.llm_client import LLMClient, ModelSpec, make_stub
from eapmt.metrics import BleuConfig, corpus_bleu
from eapmt.prompts import TemplateId, all_templates, render
from eapmt.translate import TranslationRecord, eapmt_translate
from eapmt.validation import (
    ProbeError,
    ProbeSpec,
    probe_report,
    run_probe,
    truncate_prefix,
)

REPO = Path(__file__).resolve().parents[1]
DATA = Path(__file__).resolve().parent / "data"
FIXTURES = REPO / "fixtures"
CORPUS_PATH = str(FIXTURES / "mini.jsonl")
CACHE_PATH = str(FIXTURES / "cache")

# pinned tolerances
ORACLE_ABS_TOL = 0.01  # native score vs pinned canonical output
EXACT_ABS_TOL = 1e-9  # recomputation of a frozen value on the same path
MEAN_ABS_TOL = 1e-12  # half-up means are computed in decimal, not binary
GARBAGE_CEILING = 5.0  # no garbage continuation may score at or above this

# pinned runtime limits (seconds)
LIMIT_TEMPLATES = 1.0
LIMIT_BLEU = 5.0
LIMIT_TRUNCATION = 1.0
LIMIT_PROBE = 2.0
LIMIT_REPLAY = 1.0
LIMIT_VOTES = 1.0
LIMIT_SCORES = 1.0
LIMIT_JUDGE = 1.0
LIMIT_BLINDING = 1.0
LIMIT_END_TO_END = 60.0

PROPERTY_CASES = 150  # randomized truncation cases (must be >= 100)


class _Stopwatch:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        return False


class _ExplodingTransport:
    """Fails the test if anything tries to leave the process."""

    def send(self, spec, prompt):
        raise AssertionError("network transport invoked during replay")


def _oracle() -> dict:
    return json.loads((DATA / "bleu_oracle.json").read_text(encoding="utf-8"))


def _mini_corpus():
    return load_corpus(FIXTURES / "mini.jsonl")


def _half_up_mean(values, ndigits: int = 2) -> float:
    """Independent oracle for half-up decimal rounding of a mean."""
    mean = Fraction(sum(values), len(values))
    scale = 10**ndigits
    return floor(mean * scale + Fraction(1, 2)) / scale


# ── 1: template goldens ──────────────────────────────────────────────


def test_criterion_01_templates_match_goldens():
    with _Stopwatch() as watch:
        golden = {
            path.stem: path.read_text(encoding="utf-8")
            for path in (DATA / "templates").glob("*.txt")
        }
        registry = {template.id.value: template.text for template in all_templates()}
        assert golden, "golden template files are missing"
        assert set(registry) == set(golden)
        mismatched = [
            name for name in sorted(golden) if registry[name] != golden[name]
        ]
        assert mismatched == []
    assert watch.elapsed < LIMIT_TEMPLATES


# ── 2: BLEU vs the pinned canonical oracle ───────────────────────────


def test_criterion_02_bleu_matches_canonical_oracle():
    oracle = _oracle()
    with _Stopwatch() as watch:
        cases = oracle["corpus_cases"]
        randomized = [c for c in cases if c["name"].startswith("rand-")]
        assert len(randomized) >= 20

        for case in randomized:
            config = BleuConfig(
                tokenizer=case["tokenizer"],
                smoothing=case["smoothing"],
                lowercase=case["lowercase"],
            )
            score = corpus_bleu(case["hypotheses"], case["references"], config)
            assert score.score == pytest.approx(
                case["score"], abs=ORACLE_ABS_TOL
            ), case["name"]

        # identity corpora score 100.00 at the reported 2-decimal precision
        for case in cases:
            if not case["name"].startswith("identity-"):
                continue
            assert case["hypotheses"] == case["references"]
            config = BleuConfig(
                tokenizer=case["tokenizer"],
                smoothing=case["smoothing"],
                lowercase=case["lowercase"],
            )
            score = corpus_bleu(case["hypotheses"], case["references"], config)
            assert f"{score.score:.2f}" == "100.00", case["name"]
            assert score.score == pytest.approx(100.0, abs=EXACT_ABS_TOL)

        # fully disjoint corpora score exactly zero without smoothing
        disjoint = next(c for c in cases if c["name"] == "disjoint-none")
        config = BleuConfig(
            tokenizer=disjoint["tokenizer"],
            smoothing=disjoint["smoothing"],
            lowercase=disjoint["lowercase"],
        )
        score = corpus_bleu(disjoint["hypotheses"], disjoint["references"], config)
        assert score.score == 0.0
        assert disjoint["score"] == 0.0
        fresh = corpus_bleu(
            ["zirconium flotilla mumbles"],
            ["完全不相交的参考文本"],
            BleuConfig(tokenizer="zh", smoothing="none"),
        )
        assert fresh.score == 0.0
    assert watch.elapsed < LIMIT_BLEU


# ── 3: truncation arithmetic ─────────────────────────────────────────


def _synthetic_poem(rng: random.Random, content_total: int) -> Poem:
    lines: list[str] = []
    produced = 0
    while produced < content_total:
        if lines and produced < content_total and rng.random() < 0.15:
            lines.append("")  # stanza break; never counts as content
        lines.append(f"content line {produced} alpha beta gamma")
        produced += 1
    return Poem(
        id=f"synthetic-{content_total}-{rng.randrange(10**6)}",
        title="Synthetic",
        language="en",
        author="nobody",
        lines=tuple(lines),
    )


def test_criterion_03_truncation_arithmetic():
    with _Stopwatch() as watch:
        balance = _mini_corpus()[0].source
        assert len(balance.content_lines) == 13
        prefix, remaining = truncate_prefix(balance, 0.5)
        kept = [line for line in prefix if line.strip()]
        assert len(kept) == 7
        assert remaining == 6

        # boundary fractions keep nothing or everything and must refuse
        rng = random.Random(20260817)
        tiny = _synthetic_poem(rng, 2)
        with pytest.raises(ProbeError):
            truncate_prefix(tiny, 0.05)  # keeps 0 lines
        with pytest.raises(ProbeError):
            truncate_prefix(tiny, 0.9)  # keeps all lines
        fractions = [round(i / 100, 2) for i in range(5, 100, 5)]
        checked = 0
        while checked < PROPERTY_CASES:
            total = rng.randint(2, 60)
            fraction = rng.choice(fractions)
            poem = _synthetic_poem(rng, total)
            expected_keep = floor(Fraction(str(fraction)) * total + Fraction(1, 2))

            if expected_keep < 1 or expected_keep >= total:
                with pytest.raises(ProbeError):
                    truncate_prefix(poem, fraction)
                checked += 1
                continue

            prefix, remaining = truncate_prefix(poem, fraction)
            keep = len([line for line in prefix if line.strip()])
            assert keep == expected_keep
            assert keep + remaining == total  # reconstruction
            assert tuple(prefix) == poem.lines[: len(prefix)]  # literal prefix

            # larger fractions never keep fewer lines
            keeps = []
            for other in fractions:
                k = floor(Fraction(str(other)) * total + Fraction(1, 2))
                if 1 <= k < total:
                    keeps.append(truncate_prefix(poem, other)[0])
            counts = [len([l for l in p if l.strip()]) for p in keeps]
            assert counts == sorted(counts)

            checked += 1
        assert checked >= 100
    assert watch.elapsed < LIMIT_TRUNCATION


# ── 4: contamination-probe sandwich ──────────────────────────────────


def _probe_prompt(poem: Poem, fraction: float) -> str:
    template = (
        TemplateId.CONTINUATION_ZH
        if poem.language == "zh"
        else TemplateId.CONTINUATION
    )
    prefix, n_remaining = truncate_prefix(poem, fraction)
    return render(
        template,
        {
            "title": poem.title,
            "n_remaining": str(n_remaining),
            "total": str(len(poem.content_lines)),
            "prefix": "\n".join(prefix),
        },
    ).text


def _run_probe_grid(client, fractions):
    model = ModelSpec(name="probe-stub")
    results = []
    for side in ("source", "translation"):
        spec = ProbeSpec(side=side, fractions=fractions)
        for pair in _mini_corpus():
            results.extend(run_probe(pair, spec, model, client))
    return probe_report(results)


def test_criterion_04_probe_sandwich():
    oracle = _oracle()
    fractions = (0.5, 0.7, 0.9)
    with _Stopwatch() as watch:
        # echo stub: answer every continuation with the true remaining lines
        behavior = {}
        for pair in _mini_corpus():
            for poem in (pair.source, pair.reference):
                for fraction in fractions:
                    content = poem.content_lines
                    _, n_remaining = truncate_prefix(poem, fraction)
                    suffix = "\n".join(content[len(content) - n_remaining :])
                    behavior[re.escape(_probe_prompt(poem, fraction))] = suffix
        assert len(behavior) == 12
        report = _run_probe_grid(make_stub(behavior), fractions)
        for side in ("source", "translation"):
            for fraction in fractions:
                cell = report.cells[side][fraction].score
                assert cell == pytest.approx(100.0, abs=EXACT_ABS_TOL)

        # layout: one header, two side rows, three fraction columns
        lines = report.to_markdown().splitlines()
        assert lines[0] == "| Side | 50% | 70% | 90% |"
        rows = [line for line in lines if line.startswith(("| source", "| translation"))]
        assert len(rows) == 2
        assert all(row.count("|") == 5 for row in rows)

        # garbage stub: pinned nonsense continuations stay far below 5
        garbage = oracle["probe_garbage"]
        report = _run_probe_grid(
            make_stub(
                {
                    "Please continue writing the next": "\n".join(garbage["en"]),
                    "请继续写出现代诗": "\n".join(garbage["zh"]),
                }
            ),
            fractions,
        )
        frozen = oracle["probe_garbage_cells"]
        for side in ("source", "translation"):
            for fraction in fractions:
                cell = report.cells[side][fraction].score
                assert cell < GARBAGE_CEILING
                assert cell == pytest.approx(
                    frozen[side][str(fraction)], abs=EXACT_ABS_TOL
                )
    assert watch.elapsed < LIMIT_PROBE


# ── 5: explain-then-translate replay ─────────────────────────────────


class _PromptTap:
    """Pass-through client that keeps every prompt it forwards."""

    def __init__(self, inner: LLMClient) -> None:
        self.inner = inner
        self.prompts: list[str] = []

    def complete(self, spec, prompt):
        text = prompt if isinstance(prompt, str) else prompt.text
        self.prompts.append(text)
        return self.inner.complete(spec, prompt)


def test_criterion_05_eapmt_replay_reproduces_fixtures():
    with _Stopwatch() as watch:
        balance = _mini_corpus()[0]
        client = LLMClient(
            cache_dir=CACHE_PATH, mode="replay", transport=_ExplodingTransport()
        )
        tap = _PromptTap(client)
        explanation, record = eapmt_translate(
            balance, ModelSpec(name="gpt-4-1106"), tap
        )

        expected_explanation = (DATA / "balance" / "explanation.txt").read_text(
            encoding="utf-8"
        )
        expected_translation = (
            DATA / "balance" / "eapmt4_translation.txt"
        ).read_text(encoding="utf-8")

        assert explanation.text == expected_explanation
        assert len(tap.prompts) == 2
        assert expected_explanation in tap.prompts[1]  # embedded verbatim
        assert record.text == expected_translation
    assert watch.elapsed < LIMIT_REPLAY


# ── 6: vote aggregation ──────────────────────────────────────────────


def _ballots_realizing(counts: dict[str, int], n_judges: int, n_poems: int):
    systems = sorted(counts)
    pair_ids = [f"poem-{i:02d}" for i in range(1, n_poems + 1)]
    key = make_blinding_key(pair_ids, systems, seed=11)
    votes = [system for system in systems for _ in range(counts[system])]
    cells = [
        (f"judge-{j}", pair_id)
        for j in range(1, n_judges + 1)
        for pair_id in pair_ids
    ]
    assert len(votes) == len(cells)
    ballots = []
    for (judge_id, pair_id), system in zip(cells, votes):
        label = next(
            label
            for label in key.labels_for(pair_id)
            if key.system_for(pair_id, label) == system
        )
        ballots.append(Ballot(judge_id=judge_id, pair_id=pair_id, choice=label))
    return ballots, key


def test_criterion_06_vote_aggregation():
    with _Stopwatch() as watch:
        tables = [
            ({"H1": 11, "H2": 16, "H3": 21}, 6, 8, 48),
            ({"H1": 14, "H2": 19, "H3": 15}, 6, 8, 48),
            ({"0-shot": 25, "1-shot": 13, "3-shot": 12, "5-shot": 10}, 6, 10, 60),
            ({"0-shot": 19, "1-shot": 16, "3-shot": 13, "5-shot": 12}, 6, 10, 60),
        ]
        for counts, n_judges, n_poems, total in tables:
            ballots, key = _ballots_realizing(counts, n_judges, n_poems)
            assert len(ballots) == total
            result = aggregate_votes(ballots, key)
            assert result == counts
            assert sum(result.values()) == total

        # conservation on randomized ballots
        rng = random.Random(6)
        for trial in range(10):
            systems = [f"sys-{i}" for i in range(rng.randint(2, 5))]
            pair_ids = [f"p-{i}" for i in range(rng.randint(1, 12))]
            key = make_blinding_key(pair_ids, systems, seed=trial)
            ballots = [
                Ballot(
                    judge_id=f"j-{j}",
                    pair_id=pair_id,
                    choice=rng.choice(list(key.labels_for(pair_id))),
                )
                for j in range(rng.randint(1, 7))
                for pair_id in pair_ids
            ]
            result = aggregate_votes(ballots, key)
            assert sum(result.values()) == len(ballots)
            assert all(count >= 0 for count in result.values())
    assert watch.elapsed < LIMIT_VOTES


# ── 7: score aggregation ─────────────────────────────────────────────


def _grid_cells(n_judges: int, n_poems: int):
    return [
        (f"judge-{j}", f"poem-{i:02d}")
        for j in range(1, n_judges + 1)
        for i in range(1, n_poems + 1)
    ]


def _sheets_from_plan(key, system: str, plan) -> list[ScoreSheet]:
    """plan(cell_index) -> {Criterion: score} for each (judge, poem) cell."""
    sheets = []
    for index, (judge_id, pair_id) in enumerate(_grid_cells(6, 10)):
        label = next(
            label
            for label in key.labels_for(pair_id)
            if key.system_for(pair_id, label) == system
        )
        sheets.append(
            ScoreSheet(
                judge_id=judge_id,
                pair_id=pair_id,
                candidate_id=label,
                scores=plan(index),
            )
        )
    return sheets


def test_criterion_07_score_aggregation():
    with _Stopwatch() as watch:
        pair_ids = [f"poem-{i:02d}" for i in range(1, 11)]

        # means: 60 cells engineered so OI = 4.00 and Line = 275/60 = 4.58
        key = make_blinding_key(pair_ids, ["EAPMT-4.0"], seed=3)

        def means_plan(index: int):
            scores = {criterion: 4 for criterion in CRITERIA}
            scores[Criterion.LINE] = 5 if index < 35 else 4
            return scores

        means = aggregate_scores(
            _sheets_from_plan(key, "EAPMT-4.0", means_plan), key
        )["EAPMT-4.0"]
        assert f"{means[Criterion.OI]:.2f}" == "4.00"
        assert f"{means[Criterion.LINE]:.2f}" == "4.58"
        assert means[Criterion.LINE] == pytest.approx(
            _half_up_mean([5] * 35 + [4] * 25), abs=MEAN_ABS_TOL
        )

        # count of 6s per criterion on an engineered two-system grid
        key6 = make_blinding_key(pair_ids, ["EAPMT-3.5", "EAPMT-4.0"], seed=4)
        sixes_by_system = {"EAPMT-3.5": (3, 7), "EAPMT-4.0": (3, 5)}
        sheets = []
        for system, (line_sixes, acc_sixes) in sixes_by_system.items():

            def plan(index: int, line_sixes=line_sixes, acc_sixes=acc_sixes):
                scores = {criterion: 5 for criterion in CRITERIA}
                if index < line_sixes:
                    scores[Criterion.LINE] = 6
                if index < acc_sixes:
                    scores[Criterion.ACC] = 6
                return scores

            sheets.extend(_sheets_from_plan(key6, system, plan))
        counts = count_six(sheets, key6)
        for system, (line_sixes, acc_sixes) in sixes_by_system.items():
            assert counts[system][Criterion.LINE] == line_sixes
            assert counts[system][Criterion.ACC] == acc_sixes
            for criterion in CRITERIA:
                if criterion not in (Criterion.LINE, Criterion.ACC):
                    assert counts[system][criterion] == 0

        # uniform 5s mean exactly 5.00 everywhere
        all_fives = aggregate_scores(
            _sheets_from_plan(
                key, "EAPMT-4.0", lambda _: {c: 5 for c in CRITERIA}
            ),
            key,
        )["EAPMT-4.0"]
        assert all(value == 5.0 for value in all_fives.values())
    assert watch.elapsed < LIMIT_SCORES


# ── 8: judge response parsing ────────────────────────────────────────


def _candidate(pair_id: str, index: int) -> TranslationRecord:
    return TranslationRecord(
        pair_id=pair_id,
        system=f"system-{index}",
        model="some-model",
        template_id=TemplateId.H3,
        shots=0,
        output_lines=(f"candidate text {index}",),
        raw_response=f"candidate text {index}",
    )


def _well_formed(n_candidates: int) -> str:
    scores = {
        str(i): {
            criterion.label: ((i + j) % 6) + 1
            for j, criterion in enumerate(CRITERIA)
        }
        for i in range(1, n_candidates + 1)
    }
    return (
        "Here are my scores.\n```json\n"
        + json.dumps(scores, ensure_ascii=False)
        + "\n```\nThank you."
    )


def test_criterion_08_judge_parsing():
    with _Stopwatch() as watch:
        balance = _mini_corpus()[0]
        candidates = [_candidate(balance.pair_id, i) for i in range(1, 6)]
        stub = make_stub({"Source Language Poem": _well_formed(5)})
        sheets = llm_judge(
            balance, candidates, ModelSpec(name="judge-stub"), stub
        )
        assert len(sheets) == 5
        assert [sheet.candidate_id for sheet in sheets] == ["1", "2", "3", "4", "5"]
        all_scores = [
            score for sheet in sheets for score in sheet.scores.values()
        ]
        assert len(all_scores) == 40
        assert all(1 <= score <= 6 for score in all_scores)

        # malformed output is a structured error that keeps the raw text
        refusal = "I would rather describe the poems than score them."
        with pytest.raises(JudgeParseError) as excinfo:
            parse_judge_response(refusal, 2)
        assert excinfo.value.raw == refusal

        # round-trip idempotence on well-formed blocks
        parsed = parse_judge_response(_well_formed(3), 3)
        assert parse_judge_response(serialize_scores(parsed), 3) == parsed
    assert watch.elapsed < LIMIT_JUDGE


# ── 9: blinding ──────────────────────────────────────────────────────


def test_criterion_09_blinding():
    with _Stopwatch() as watch:
        corpus = _mini_corpus()
        candidates = {}
        for system, model in (("H3", "gpt-3.5-turbo"), ("eapmt:gpt4", "gpt-4-1106")):
            candidates[system] = [
                TranslationRecord(
                    pair_id=pair.pair_id,
                    system=system,
                    model=model,
                    template_id=TemplateId.H3,
                    shots=0,
                    output_lines=(f"译文 {pair.pair_id}",),
                    raw_response=f"译文 {pair.pair_id}",
                    explanation_id=(
                        f"expl-{pair.pair_id}-0001" if "eapmt" in system else None
                    ),
                )
                for pair in corpus
            ]

        forbidden = [
            "h3",
            "eapmt",
            "gpt",
            "expl-balance-0001",
            "expl-night-ferry-0001",
        ]
        for mode in ("vote", "score"):
            pack = make_questionnaire(
                corpus, candidates, seed=5, mode=mode, judges=("judge1", "judge2")
            )
            for name, text in pack.files.items():
                lowered = text.lower()
                for needle in forbidden:
                    assert needle not in lowered, (mode, name, needle)

        # de-blinded aggregation equals a direct computation in system space
        pack = make_questionnaire(
            corpus, candidates, seed=5, mode="score", judges=("judge1", "judge2")
        )
        key = pack.key
        intended = {"H3": 3, "eapmt:gpt4": 5}
        sheets = []
        for judge_id in ("judge1", "judge2"):
            for pair in corpus:
                for label in key.labels_for(pair.pair_id):
                    system = key.system_for(pair.pair_id, label)
                    sheets.append(
                        ScoreSheet(
                            judge_id=judge_id,
                            pair_id=pair.pair_id,
                            candidate_id=label,
                            scores={c: intended[system] for c in CRITERIA},
                        )
                    )
        aggregated = aggregate_scores(sheets, key)
        for system, value in intended.items():
            for criterion in CRITERIA:
                assert aggregated[system][criterion] == float(value)

        ballots = []
        for judge_id in ("judge1", "judge2"):
            for pair in corpus:
                label = next(
                    label
                    for label in key.labels_for(pair.pair_id)
                    if key.system_for(pair.pair_id, label) == "H3"
                )
                ballots.append(
                    Ballot(judge_id=judge_id, pair_id=pair.pair_id, choice=label)
                )
        assert aggregate_votes(ballots, key) == {"H3": 4, "eapmt:gpt4": 0}
    assert watch.elapsed < LIMIT_BLINDING


# ── 10: end-to-end replay determinism ────────────────────────────────


def _run_replay_flow(root: Path) -> None:
    common = ["--corpus", CORPUS_PATH, "--mode", "replay", "--cache", CACHE_PATH]
    h3 = root / "h3"
    ep = root / "eapmt"
    probe = root / "probe"
    judged = root / "judge"
    assert (
        dispatch(
            ["translate", *common, "--model", "gpt-3.5-turbo", "--out", str(h3)]
        )
        == 0
    )
    assert dispatch(["eapmt", *common, "--out", str(ep)]) == 0
    assert dispatch(["probe", *common, "--out", str(probe)]) == 0
    assert (
        dispatch(
            [
                "judge",
                *common,
                "--translations",
                str(h3),
                "--translations",
                str(ep),
                "--out",
                str(judged),
            ]
        )
        == 0
    )
    assert dispatch(["report", str(judged)]) == 0
    assert dispatch(["report", str(probe)]) == 0


def test_criterion_10_end_to_end_replay_determinism(tmp_path, monkeypatch):
    for name in [n for n in os.environ if n.startswith("EAPMT_")]:
        monkeypatch.delenv(name)
    monkeypatch.chdir(tmp_path)

    def no_network(*args, **kwargs):
        raise AssertionError("network call attempted during replay")

    monkeypatch.setattr("requests.post", no_network)

    with _Stopwatch() as watch:
        first = tmp_path / "first"
        second = tmp_path / "second"
        _run_replay_flow(first)
        _run_replay_flow(second)

        first_files = sorted(
            path.relative_to(first) for path in first.rglob("*") if path.is_file()
        )
        second_files = sorted(
            path.relative_to(second)
            for path in second.rglob("*")
            if path.is_file()
        )
        assert first_files == second_files
        assert first_files, "replay flow produced no files"
        for relative in first_files:
            assert (first / relative).read_bytes() == (
                second / relative
            ).read_bytes(), f"{relative} differs between runs"
    assert watch.elapsed < LIMIT_END_TO_END
