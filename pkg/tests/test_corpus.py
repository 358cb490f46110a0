"""Corpus schema, normalization, round-trips, stats, and sampling."""

import json
import unicodedata

import pytest

from eapmt.corpus import (
    CorpusFormatError,
    CorpusStats,
    Poem,
    PoemPair,
    corpus_stats,
    load_corpus,
    sample_test_set,
    save_corpus,
)


def poem(**overrides) -> Poem:
    base = dict(
        id="p.src",
        title="T",
        language="en",
        author="A",
        lines=("one line", "", "two line"),
    )
    base.update(overrides)
    return Poem(**base)


class TestPoem:
    def test_content_lines_drop_blanks(self):
        assert poem().content_lines == ("one line", "two line")

    def test_text_keeps_blanks(self):
        assert poem().text == "one line\n\ntwo line"

    def test_prompt_text_prepends_title(self):
        assert poem().prompt_text() == "T\none line\n\ntwo line"

    def test_prompt_text_without_title(self):
        assert poem(title="").prompt_text() == "one line\n\ntwo line"

    def test_empty_lines_rejected(self):
        with pytest.raises(CorpusFormatError, match="non-empty"):
            poem(lines=())

    def test_all_blank_lines_rejected(self):
        with pytest.raises(CorpusFormatError, match="non-blank"):
            poem(lines=("", "  "))

    def test_language_script_mismatch_warns(self, caplog):
        with caplog.at_level("WARNING"):
            poem(language="zh")
        assert "declared zh" in caplog.text


class TestLoadCorpus:
    def test_bundled_fixture_shape(self, corpus):
        assert [pair.pair_id for pair in corpus] == ["balance", "night-ferry"]
        balance, ferry = corpus
        assert balance.source.language == "en"
        assert balance.reference.language == "zh"
        assert len(balance.source.content_lines) == 13
        assert len(ferry.source.content_lines) == 10
        # the ferry poem keeps its stanza break
        assert "" in ferry.source.lines

    def test_round_trip_is_byte_stable(self, corpus, tmp_path):
        first = tmp_path / "first.jsonl"
        second = tmp_path / "second.jsonl"
        save_corpus(corpus, first)
        save_corpus(load_corpus(first), second)
        assert first.read_bytes() == second.read_bytes()
        assert load_corpus(second) == corpus

    def test_nfc_normalization_on_load(self, tmp_path):
        decomposed = unicodedata.normalize("NFD", "café")
        record = {
            "pair_id": "x",
            "source": {
                "title": decomposed,
                "language": "en",
                "author": "",
                "lines": [decomposed],
            },
            "reference": {
                "title": "t",
                "language": "zh",
                "author": "",
                "lines": ["白鹤"],
            },
        }
        path = tmp_path / "c.jsonl"
        path.write_text(json.dumps(record, ensure_ascii=False) + "\n", "utf-8")
        loaded = load_corpus(path)
        assert loaded[0].source.title == "café"
        assert loaded[0].source.lines == ("café",)

    def test_invalid_json_names_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"pair_id": "a"\n', "utf-8")
        with pytest.raises(CorpusFormatError, match="c.jsonl:1"):
            load_corpus(path)

    def test_missing_record_key(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"pair_id": "a", "source": {}}\n', "utf-8")
        with pytest.raises(CorpusFormatError, match="'reference'"):
            load_corpus(path)

    def test_missing_poem_key(self, tmp_path):
        record = {
            "pair_id": "a",
            "source": {"title": "t", "language": "en", "lines": ["x"]},
            "reference": {
                "title": "t",
                "language": "zh",
                "author": "",
                "lines": ["白"],
            },
        }
        path = tmp_path / "c.jsonl"
        path.write_text(json.dumps(record) + "\n", "utf-8")
        with pytest.raises(CorpusFormatError, match="'author'"):
            load_corpus(path)

    def test_duplicate_pair_id(self, tmp_path, corpus):
        path = tmp_path / "c.jsonl"
        save_corpus([corpus[0], corpus[0]], path)
        with pytest.raises(CorpusFormatError, match="duplicate pair_id"):
            load_corpus(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text("\n\n", "utf-8")
        with pytest.raises(CorpusFormatError, match="empty"):
            load_corpus(path)

    def test_blank_lines_between_records_ignored(self, tmp_path, corpus):
        path = tmp_path / "c.jsonl"
        lines = (tmp_path / "tmp.jsonl", path)
        save_corpus(corpus, lines[0])
        body = lines[0].read_text("utf-8").replace("\n", "\n\n")
        path.write_text(body, "utf-8")
        assert load_corpus(path) == corpus


class TestStatsAndSampling:
    def test_bundled_corpus_stats(self, corpus):
        stats = corpus_stats(corpus)
        assert stats.poems == 2
        assert stats.lines == 23
        assert stats.tokens == sum(
            len(line.split())
            for pair in corpus
            for line in pair.source.content_lines
        )

    def test_stats_add(self):
        total = CorpusStats(1, 2, 3) + CorpusStats(10, 20, 30)
        assert total == CorpusStats(11, 22, 33)

    def test_sample_deterministic(self, corpus):
        a = sample_test_set(corpus, 1, seed=7)
        b = sample_test_set(corpus, 1, seed=7)
        assert a == b

    def test_sample_respects_exclusions(self, corpus):
        picked = sample_test_set(corpus, 1, seed=0, exclude=["balance"])
        assert picked[0].pair_id == "night-ferry"

    def test_sample_too_large(self, corpus):
        with pytest.raises(ValueError, match="cannot sample 3"):
            sample_test_set(corpus, 3, seed=0)


def test_pair_same_language_warns(caplog):
    english = poem()
    with caplog.at_level("WARNING"):
        PoemPair(pair_id="x", source=english, reference=poem(id="p.ref"))
    assert "share language" in caplog.text
