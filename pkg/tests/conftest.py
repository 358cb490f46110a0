"""Shared fixtures: the bundled two-poem corpus and the frozen scoring oracle."""

import json
from pathlib import Path

import pytest

from eapmt.corpus import load_corpus

REPO = Path(__file__).resolve().parents[1]
DATA = Path(__file__).resolve().parent / "data"
FIXTURES = REPO / "fixtures"
CACHE = FIXTURES / "cache"


def balance_text(name: str) -> str:
    return (DATA / "balance" / name).read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def corpus():
    return load_corpus(FIXTURES / "mini.jsonl")


@pytest.fixture(scope="session")
def balance(corpus):
    return corpus[0]


@pytest.fixture(scope="session")
def ferry(corpus):
    return corpus[1]


@pytest.fixture(scope="session")
def oracle():
    return json.loads((DATA / "bleu_oracle.json").read_text(encoding="utf-8"))
