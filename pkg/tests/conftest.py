import numpy as np
import pytest

from emocause.corpus import Document, GeneratorConfig, build_vocab, generate_synthetic
from emocause.model import init_params
from emocause.training import TrainConfig

TINY_DIMS = dict(word_dim=4, position_dim=3, hidden=3, attention_dim=4)


def tiny_config(**overrides) -> TrainConfig:
    return TrainConfig(**{**TINY_DIMS, **overrides})


def make_model(docs, cfg=None, seed=0, scale=0.5):
    cfg = cfg or tiny_config()
    vocab = build_vocab(docs)
    return init_params(cfg.model_spec(len(vocab)), vocab, seed, scale)


@pytest.fixture
def running_example():
    """Six clauses, emotion in clause 3, cause in clause 2."""
    clauses = (
        ("yesterday", "morning"),
        ("a", "policeman", "visited", "the", "old", "man"),
        ("the", "thief", "was", "caught"),
        ("the", "old", "man", "was", "very", "happy"),
        ("he", "thanked", "the", "policeman"),
        ("and", "left"),
    )
    return Document("ex1", clauses, 3, (False, False, True, False, False, False))


@pytest.fixture
def toy_doc():
    docs = generate_synthetic(GeneratorConfig(docs=1, seed=1, clauses_before=(1, 1), clauses_after=(1, 1)))
    return docs[0]


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic(GeneratorConfig(docs=40, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
