import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from idiomcloze import corpus
from idiomcloze.corpus import (CLS, MASK, OTHER_BLANK, SEP, ClozeExample,
                               DatasetFormatError, MalformedExampleError,
                               SynthSpec, SyntheticWorld, tokenize_window)


def chars(n, start=0x4E00):
    return [chr(start + i % 500) for i in range(n)]


class TestTokenizeWindow:
    def test_long_passage_centered_blank(self):
        tokens = chars(150) + [MASK] + chars(149, start=0x5E00)
        win, b = tokenize_window(tokens, 128)
        assert len(win) == 128
        assert win[0] == CLS and win[-1] == SEP
        assert win.index(MASK) == b == 1 + 62          # 62 left, 63 right

    def test_short_passage_untouched(self):
        tokens = chars(10) + [MASK] + chars(9, start=0x5E00)
        win, b = tokenize_window(tokens, 128)
        assert len(win) == 22
        assert win[1:11] == tokens[:10] and b == 11

    def test_surplus_moves_to_long_side(self):
        tokens = chars(10) + [MASK] + chars(289, start=0x5E00)
        win, b = tokenize_window(tokens, 128)
        assert len(win) == 128
        assert b == 11                                  # all 10 left chars kept
        assert len(win) - b - 2 == 115                  # right side got the surplus

    def test_idempotent(self):
        tokens = chars(150) + [MASK] + chars(149, start=0x5E00)
        win, b = tokenize_window(tokens, 128)
        win2, b2 = tokenize_window(win, 128)
        assert win2 == win and b2 == b

    def test_missing_blank_rejected(self):
        with pytest.raises(MalformedExampleError):
            tokenize_window(chars(10), 128)

    def test_other_blanks_preserved(self):
        tokens = chars(5) + [OTHER_BLANK] + chars(5) + [MASK] + chars(5)
        win, b = tokenize_window(tokens, 128)
        assert win.count(OTHER_BLANK) == 1 and win.count(MASK) == 1

    @given(st.integers(0, 400), st.integers(0, 400), st.integers(16, 200))
    @settings(max_examples=50, deadline=None)
    def test_window_never_exceeds_max_len_and_keeps_blank(self, left, right, max_len):
        tokens = chars(left) + [MASK] + chars(right, start=0x5E00)
        win, b = tokenize_window(tokens, max_len)
        assert len(win) <= max_len
        assert win[b] == MASK
        assert win.count(MASK) == 1


class TestLoadSave:
    def write(self, tmp_path, lines):
        path = tmp_path / "data.jsonl"
        path.write_text("\n".join(json.dumps(rec, ensure_ascii=False)
                                  for rec in lines), encoding="utf-8")
        return path

    def test_one_example_per_line(self, tmp_path):
        lines = [
            {"id": "a-0", "text": "早上#idiom#晚上#idiom#了",
             "target": 0, "candidates": ["四字成语", "一心一意"], "answer": 1},
            {"id": "a-1", "text": "早上#idiom#晚上#idiom#了",
             "target": 1, "candidates": ["一心一意", "狐假虎威"], "answer": 0},
            {"id": "b-0", "text": "只有#idiom#一处",
             "target": 0, "candidates": ["四字成语", "狐假虎威"], "answer": 0},
        ]
        examples, vocab = corpus.load_dataset(self.write(tmp_path, lines))
        assert len(examples) == 3
        assert len(vocab) == 3                        # union of candidates
        assert vocab.surface(0) == "四字成语"          # first-appearance order
        assert examples[0].tokens.count(MASK) == 1
        assert examples[0].tokens.count(OTHER_BLANK) == 1
        assert examples[1].tokens.index(MASK) > examples[1].tokens.index(OTHER_BLANK)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        examples, vocab = corpus.load_dataset(path)
        assert examples == [] and len(vocab) == 0

    def test_schema_violation_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "x", "text": "a#idiom#b", "target": 0, '
                        '"candidates": ["甲乙丙丁"], "answer": 0}\nnot json\n')
        with pytest.raises(DatasetFormatError) as exc:
            corpus.load_dataset(path)
        assert exc.value.line_no == 2

    def test_bad_gold_index_rejected(self, tmp_path):
        lines = [{"id": "x", "text": "a#idiom#b", "target": 0,
                  "candidates": ["甲乙丙丁"], "answer": 3}]
        with pytest.raises(DatasetFormatError):
            corpus.load_dataset(self.write(tmp_path, lines))

    def test_round_trip(self, tmp_path):
        spec = SynthSpec(vocab_size=20, n_classes=2, n_topics=3,
                         n_examples=30, n_candidates=5, seed=5)
        world = SyntheticWorld(spec)
        examples = world.generate()
        path = tmp_path / "rt.jsonl"
        corpus.save_dataset(examples, world.vocab, path)
        loaded, vocab2 = corpus.load_dataset(path)
        assert len(loaded) == len(examples)
        for a, b in zip(examples, loaded):
            assert a.tokens == b.tokens
            assert [world.vocab.surface(c) for c in a.candidates] == \
                   [vocab2.surface(c) for c in b.candidates]
            assert a.gold_index == b.gold_index

    def test_group_round_trip(self, tmp_path):
        spec = SynthSpec(vocab_size=20, n_classes=2, n_topics=3,
                         n_examples=10, n_candidates=5, seed=5)
        world = SyntheticWorld(spec)
        _, groups = world.generate_groups(4)
        path = tmp_path / "groups.jsonl"
        corpus.save_groups(groups, world.vocab, path)
        loaded = corpus.load_groups(path, world.vocab)
        assert [g.group_id for g in loaded] == [g.group_id for g in groups]
        assert [g.candidates for g in loaded] == [g.candidates for g in groups]
        assert [g.member_ids for g in loaded] == [g.member_ids for g in groups]


class TestSynthetic:
    SPEC = SynthSpec(vocab_size=24, n_classes=3, n_topics=4,
                     n_examples=200, n_candidates=5, seed=13)

    def test_deterministic(self, tmp_path):
        a = SyntheticWorld(self.SPEC).generate()
        b = SyntheticWorld(self.SPEC).generate()
        pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        corpus.save_dataset(a, SyntheticWorld(self.SPEC).vocab, pa)
        corpus.save_dataset(b, SyntheticWorld(self.SPEC).vocab, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_gold_matches_class_and_topic(self):
        world = SyntheticWorld(self.SPEC)
        for ex in world.generate(100):
            gold = ex.candidates[ex.gold_index]
            c = world.idiom_class[gold]
            t = world.idiom_topic[gold]
            i = ex.tokens.index(MASK)
            assert ex.tokens[i - 1] == chr(corpus._CLASS_LEFT + c)
            assert ex.tokens[i + 1] == chr(corpus._CLASS_RIGHT + c)
            ctx = [tok for tok in ex.tokens
                   if tok not in (MASK, ex.tokens[i - 1], ex.tokens[i + 1])]
            base = corpus._TOPIC_BASE + t * corpus._TOPIC_CHARS
            assert all(base <= ord(ch) < base + corpus._TOPIC_CHARS for ch in ctx)

    def test_distractor_audit(self):
        world = SyntheticWorld(SynthSpec(seed=13))
        for ex in world.generate(1000):
            gold = ex.candidates[ex.gold_index]
            c, t = world.idiom_class[gold], world.idiom_topic[gold]
            others = [i for i in ex.candidates if i != gold]
            assert any(world.idiom_class[i] == c for i in others)
            assert any(world.idiom_topic[i] == t for i in others)
            assert len(set(ex.candidates)) == len(ex.candidates)

    def test_rejects_vocab_smaller_than_candidates(self):
        with pytest.raises(ValueError):
            SynthSpec(vocab_size=3, n_candidates=7).validate()

    def test_groups_each_candidate_gold_once(self):
        world = SyntheticWorld(self.SPEC)
        examples, groups = world.generate_groups(10)
        by_id = {ex.example_id: ex for ex in examples}
        for g in groups:
            golds = [by_id[m].candidates[by_id[m].gold_index] for m in g.member_ids]
            assert sorted(golds) == sorted(g.candidates)
            for m in g.member_ids:
                assert by_id[m].candidates == g.candidates


def test_token_vocabulary_specials_and_unknowns():
    tv = corpus.TokenVocabulary()
    assert [tv.id_of(s) for s in corpus.SPECIALS] == [0, 1, 2, 3, 4]
    assert tv.id_of("never-seen") == 5
    tid = tv.add("甲")
    assert tv.id_of("甲") == tid >= 6


def test_idiom_vocabulary_stable_first_appearance_order():
    v = corpus.IdiomVocabulary()
    assert v.add("一心一意") == 0
    assert v.add("狐假虎威") == 1
    assert v.add("一心一意") == 0
    assert len(v) == 2 and v.surface(1) == "狐假虎威"
