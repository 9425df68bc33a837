import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emocause.corpus import (
    BENCHMARK_POSITION_SHARES,
    UNK,
    CorpusError,
    Document,
    GeneratorConfig,
    build_vocab,
    dumps_corpus,
    generate_synthetic,
    load_corpus,
    position_histogram,
    relative_positions,
    save_corpus,
)


def doc_of(n, e, causes=(0,), tokens=None):
    clauses = tokens or tuple((f"t{i}",) for i in range(n))
    return Document("d", clauses, e, tuple(i in causes for i in range(n)))


class TestRelativePositions:
    def test_running_example(self, running_example):
        assert relative_positions(running_example, 6) == [-3, -2, -1, 0, 1, 2]

    def test_single_clause(self):
        assert relative_positions(doc_of(1, 0)) == [0]

    def test_clipping(self):
        assert relative_positions(doc_of(15, 0), 6) == [0, 1, 2, 3, 4, 5, 6] + [6] * 8

    @given(st.integers(1, 40).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n - 1))))
    def test_translation_where_unclipped(self, ne):
        n, e = ne
        pos = relative_positions(doc_of(n, e), clip=40)
        for i in range(n):
            for j in range(n):
                assert pos[i] - pos[j] == i - j


class TestDocument:
    def test_label_length_checked(self):
        with pytest.raises(CorpusError, match="labels"):
            Document("d", (("a",), ("b",)), 0, (True,))

    def test_needs_a_cause(self):
        with pytest.raises(CorpusError, match="no gold cause"):
            Document("d", (("a",),), 0, (False,))

    def test_emotion_index_range(self):
        with pytest.raises(CorpusError, match="emotion_index"):
            Document("d", (("a",),), 1, (True,))

    def test_empty_clause(self):
        with pytest.raises(CorpusError):
            Document("d", ((),), 0, (True,))


class TestLoadCorpus:
    def test_running_example_round_trip(self, tmp_path, running_example):
        path = tmp_path / "c.jsonl"
        save_corpus([running_example], path)
        (doc,) = load_corpus(path)
        assert doc == running_example
        assert doc.gold_causes == (False, False, True, False, False, False)
        assert doc.clauses[2] == ("the", "thief", "was", "caught")

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert load_corpus(path) == []

    def test_bad_label_length_reports_line(self, tmp_path, running_example):
        good = json.dumps(running_example.to_record())
        bad = running_example.to_record()
        bad["gold_causes"] = [0, 1]
        path = tmp_path / "bad.jsonl"
        path.write_text(good + "\n\n" + json.dumps(bad) + "\n")
        with pytest.raises(CorpusError) as info:
            load_corpus(path)
        assert info.value.line == 3 and info.value.field == "gold_causes"
        assert "line 3" in str(info.value)

    @pytest.mark.parametrize(
        "mutate, field",
        [
            (lambda r: r.pop("clauses"), "clauses"),
            (lambda r: r.update(emotion_index="3"), "emotion_index"),
            (lambda r: r.update(gold_causes=[0, 0, 2, 0, 0, 0]), "gold_causes"),
            (lambda r: r.update(doc_id=5), "doc_id"),
        ],
    )
    def test_field_errors(self, tmp_path, running_example, mutate, field):
        rec = running_example.to_record()
        mutate(rec)
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(rec) + "\n")
        with pytest.raises(CorpusError) as info:
            load_corpus(path)
        assert info.value.field == field and info.value.line == 1

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("{not json\n")
        with pytest.raises(CorpusError, match="line 1"):
            load_corpus(path)

    def test_overlong_document_rejected(self, tmp_path):
        path = tmp_path / "long.jsonl"
        save_corpus([doc_of(5, 0)], path)
        with pytest.raises(CorpusError, match="q_max"):
            load_corpus(path, q_max=4)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_corpus(tmp_path / "nope.jsonl")


class TestVocabulary:
    def test_min_count(self):
        d = Document("d", (("a", "a"), ("a", "b")), 0, (True, False))
        v = build_vocab([d], min_count=2)
        assert v.tokens == (UNK, "a")
        assert v.id("a") == 1 and v.id("b") == 0

    def test_all_unique(self):
        d = Document("d", (("a", "b", "c"),), 0, (True,))
        assert build_vocab([d], min_count=2).tokens == (UNK,)

    def test_order_independent(self, small_corpus):
        assert build_vocab(small_corpus) == build_vocab(list(reversed(small_corpus)))

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            build_vocab([])


class TestGenerator:
    def test_same_seed_identical_bytes(self):
        cfg = GeneratorConfig(docs=200, seed=11)
        assert dumps_corpus(generate_synthetic(cfg)) == dumps_corpus(generate_synthetic(cfg))

    def test_different_seed_differs(self):
        a = dumps_corpus(generate_synthetic(GeneratorConfig(docs=50, seed=1)))
        b = dumps_corpus(generate_synthetic(GeneratorConfig(docs=50, seed=2)))
        assert a != b

    def test_forced_single_cause(self):
        docs = generate_synthetic(GeneratorConfig(docs=500, seed=0, cause_count_probs=(1.0, 0.0, 0.0)))
        assert all(sum(d.gold_causes) == 1 for d in docs)

    def test_position_minus_one_share(self):
        hist = position_histogram(generate_synthetic(GeneratorConfig(docs=10_000, seed=5)))
        assert abs(hist[-1] - BENCHMARK_POSITION_SHARES[-1]) <= 0.02

    def test_content_signal_one_marks_every_cause(self):
        docs = generate_synthetic(GeneratorConfig(docs=200, seed=0, content_signal=1.0, distractor_rate=0.0))
        for d in docs:
            for clause, g in zip(d.clauses, d.gold_causes):
                assert g == any(t.startswith("cause") for t in clause)

    def test_emotion_clause_carries_emotion_word(self):
        for d in generate_synthetic(GeneratorConfig(docs=100, seed=0)):
            assert any(t.startswith("emo") for t in d.clauses[d.emotion_index])

    @pytest.mark.parametrize(
        "bad",
        [
            dict(docs=-1),
            dict(clause_length=(0, 0)),
            dict(clauses_before=(3, 1)),
            dict(clauses_before=(20, 30), clauses_after=(2, 20)),
            dict(content_signal=1.5),
            dict(cause_count_probs=(0.5, 0.2)),
        ],
    )
    def test_invalid_config(self, bad):
        with pytest.raises(ValueError):
            generate_synthetic(GeneratorConfig(**bad))

    def test_config_dict_round_trip(self):
        cfg = GeneratorConfig(docs=3, seed=9, clauses_after=(1, 2))
        assert GeneratorConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    @settings(max_examples=25, deadline=None)
    @given(
        before=st.tuples(st.integers(0, 5), st.integers(0, 5)).map(sorted),
        after=st.tuples(st.integers(0, 5), st.integers(0, 5)).map(sorted),
        length=st.tuples(st.integers(1, 4), st.integers(1, 4)).map(sorted),
        counts=st.sampled_from([(1.0,), (0.5, 0.5), (0.2, 0.3, 0.5)]),
        signal=st.floats(0, 1),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_documents_always_valid(self, before, after, length, counts, signal, seed):
        cfg = GeneratorConfig(docs=20, clauses_before=tuple(before), clauses_after=tuple(after),
                              clause_length=tuple(length), cause_count_probs=counts,
                              content_signal=signal, seed=seed)
        for d in generate_synthetic(cfg):
            assert before[0] <= d.emotion_index <= before[1]
            assert 1 <= sum(d.gold_causes) <= len(counts)
            assert all(len(c) >= 1 for c in d.clauses)
