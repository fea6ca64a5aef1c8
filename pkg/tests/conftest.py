from __future__ import annotations

import json
import os

import pytest

from slt.engine import Engine, EngineConfig, EngineResources, TargetBigrams, load_nbest
from slt.grammar import load_grammar, load_treebank
from slt.lexicon import load_lexicon
from slt.transfer import load_transfer_rules

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "src", "slt", "fixtures",
                        "airtravel")


@pytest.fixture(scope="session")
def fixture_dir() -> str:
    return os.path.abspath(FIXTURES)


@pytest.fixture(scope="session")
def config(fixture_dir) -> EngineConfig:
    with open(os.path.join(fixture_dir, "config.json"), encoding="utf-8") as handle:
        return EngineConfig.from_dict(json.load(handle))


@pytest.fixture(scope="session")
def resources(fixture_dir, config) -> EngineResources:
    source_grammar = load_grammar(os.path.join(fixture_dir, "source.gram"))
    target_grammar = load_grammar(os.path.join(fixture_dir, "target.gram"))
    source_lexicon = load_lexicon(os.path.join(fixture_dir, "source.lex"), "eng",
                                  known_behaviors=source_grammar.macros)
    target_lexicon = load_lexicon(os.path.join(fixture_dir, "target.lex"), "fre",
                                  known_behaviors=target_grammar.macros)
    rules = load_transfer_rules(os.path.join(fixture_dir, "transfer.rules"))
    bigrams = TargetBigrams.from_file(os.path.join(fixture_dir, "target.corpus"))
    return EngineResources(source_lexicon, source_grammar, target_lexicon,
                           target_grammar, rules.pair(("eng", "fre")), bigrams)


@pytest.fixture(scope="session")
def engine(resources, config) -> Engine:
    return Engine(resources, config)


@pytest.fixture(scope="session")
def demo_nbest(fixture_dir):
    return load_nbest(os.path.join(fixture_dir, "nbest.txt"))[0]


@pytest.fixture(scope="session")
def treebank(fixture_dir):
    return load_treebank(os.path.join(fixture_dir, "treebank.txt"))
