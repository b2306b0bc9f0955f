"""Dataset model: cloze examples, idiom/token vocabularies, blank-centered
windowing, JSON-lines ingestion, and a seeded synthetic idiom language.

Canonical dataset file: UTF-8 JSON lines, one example per line:
``{"id", "text", "target", "candidates", "answer"}`` where each blank in
``text`` is the literal placeholder ``#idiom#`` and ``target`` selects the
placeholder this example asks about (0-based).  Group files for
competition-style decoding: ``{"group_id", "candidates", "members"}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# Special tokens.  Reserved ids 0-4 plus UNK at 5; the corpus guarantees
# real characters never land on these ids.
CLS = "[CLS]"
SEP = "[SEP]"
MASK = "[MASK]"          # the target blank
OTHER_BLANK = "[BLK]"    # sibling blanks inside the same window
PAD = "[PAD]"
UNK = "[UNK]"
SPECIALS = (CLS, SEP, MASK, OTHER_BLANK, PAD)

PLACEHOLDER = "#idiom#"


class MalformedExampleError(ValueError):
    """An example violates the schema (missing blank, bad gold index...)."""


class DatasetFormatError(ValueError):
    """A dataset file failed to parse; carries the offending line number."""

    def __init__(self, line_no, message):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


@dataclass
class ClozeExample:
    """One passage window with a target blank, candidates and gold index.

    ``tokens`` is the full character sequence of the passage with exactly
    one MASK marker (the target blank) and OTHER_BLANK markers for sibling
    blanks.  ``candidates`` holds idiom ids into the vocabulary.
    """

    example_id: str
    tokens: list
    candidates: list
    gold_index: int

    def validate(self, vocab_size=None):
        n_mask = self.tokens.count(MASK)
        if n_mask != 1:
            raise MalformedExampleError(
                f"{self.example_id}: expected exactly one {MASK}, found {n_mask}")
        if not 0 <= self.gold_index < len(self.candidates):
            raise MalformedExampleError(
                f"{self.example_id}: gold index {self.gold_index} outside "
                f"[0, {len(self.candidates)})")
        if vocab_size is not None:
            for c in self.candidates:
                if not 0 <= c < vocab_size:
                    raise MalformedExampleError(
                        f"{self.example_id}: candidate id {c} outside vocabulary")
        return self


class IdiomVocabulary:
    """The ordered idiom set; ids are dense 0..size-1 by first appearance."""

    def __init__(self):
        self._surfaces = []
        self._ids = {}

    def add(self, surface):
        if surface not in self._ids:
            self._ids[surface] = len(self._surfaces)
            self._surfaces.append(surface)
        return self._ids[surface]

    def id_of(self, surface):
        return self._ids[surface]

    def __contains__(self, surface):
        return surface in self._ids

    def surface(self, idiom_id):
        return self._surfaces[idiom_id]

    def __len__(self):
        return len(self._surfaces)

    def surfaces(self):
        return list(self._surfaces)


class TokenVocabulary:
    """Character tokens plus the reserved specials; unknowns map to UNK."""

    def __init__(self):
        self._tokens = list(SPECIALS) + [UNK]
        self._ids = {t: i for i, t in enumerate(self._tokens)}

    def add(self, token):
        if token not in self._ids:
            self._ids[token] = len(self._tokens)
            self._tokens.append(token)
        return self._ids[token]

    def id_of(self, token):
        return self._ids.get(token, self._ids[UNK])

    def encode(self, tokens):
        return np.array([self.id_of(t) for t in tokens], dtype=np.int64)

    def __len__(self):
        return len(self._tokens)

    @property
    def pad_id(self):
        return self._ids[PAD]

    @property
    def mask_id(self):
        return self._ids[MASK]

    @property
    def cls_id(self):
        return self._ids[CLS]

    @property
    def sep_id(self):
        return self._ids[SEP]


@dataclass
class CandidateGroup:
    """A competition-style group: blanks sharing one candidate list."""

    group_id: str
    candidates: list          # idiom ids, shared by every member
    member_ids: list          # example ids


def tokenize_window(tokens, max_len=128):
    """Blank-centered truncation: CLS + left + MASK + right + SEP.

    The context budget is ``max_len - 3``; the left side gets the floor
    half and the right the ceiling half, and when one side is shorter
    than its share the surplus moves to the other side.  Applying the
    function to its own output is a no-op.  Returns (window, blank_index).
    """
    if max_len < 8:
        raise ValueError(f"max_len {max_len} < 8")
    if tokens.count(MASK) != 1:
        raise MalformedExampleError(
            f"expected exactly one {MASK}, found {tokens.count(MASK)}")

    # Idempotence: an already-windowed sequence passes through unchanged.
    if tokens and tokens[0] == CLS and tokens[-1] == SEP and len(tokens) <= max_len:
        return list(tokens), tokens.index(MASK)

    body = [t for t in tokens if t not in (CLS, SEP)]
    blank = body.index(MASK)
    left_avail, right_avail = blank, len(body) - blank - 1
    budget = max_len - 3
    left_share, right_share = budget // 2, budget - budget // 2
    if left_avail < left_share:
        left = left_avail
        right = min(right_avail, budget - left)
    elif right_avail < right_share:
        right = right_avail
        left = min(left_avail, budget - right)
    else:
        left, right = left_share, right_share
    window = [CLS] + body[blank - left:blank + right + 1] + [SEP]
    return window, 1 + left


def _tokens_from_text(text, target):
    """Split placeholder text into character tokens with blank markers."""
    pieces = text.split(PLACEHOLDER)
    n_blanks = len(pieces) - 1
    if not 0 <= target < n_blanks:
        raise MalformedExampleError(
            f"target {target} outside [0, {n_blanks}) placeholders")
    tokens = []
    for i, piece in enumerate(pieces):
        tokens.extend(piece)
        if i < n_blanks:
            tokens.append(MASK if i == target else OTHER_BLANK)
    return tokens


def text_from_tokens(tokens):
    """Inverse of :func:`_tokens_from_text`; returns (text, target)."""
    out, target, seen = [], None, 0
    for t in tokens:
        if t in (MASK, OTHER_BLANK):
            if t == MASK:
                target = seen
            out.append(PLACEHOLDER)
            seen += 1
        else:
            out.append(t)
    return "".join(out), target


def load_dataset(path, vocab=None):
    """Read a JSON-lines dataset; returns (examples, idiom vocabulary).

    The vocabulary is the union of all candidate lists, ids assigned by
    first appearance order; pass an existing vocabulary to extend/reuse it.
    """
    vocab = vocab if vocab is not None else IdiomVocabulary()
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(line_no, f"invalid JSON: {exc}") from None
            try:
                cand_ids = [vocab.add(s) for s in rec["candidates"]]
                tokens = _tokens_from_text(rec["text"], rec["target"])
                ex = ClozeExample(
                    example_id=str(rec["id"]),
                    tokens=tokens,
                    candidates=cand_ids,
                    gold_index=int(rec["answer"]),
                )
            except KeyError as exc:
                raise DatasetFormatError(line_no, f"missing field {exc}") from None
            except MalformedExampleError as exc:
                raise DatasetFormatError(line_no, str(exc)) from None
            try:
                ex.validate(vocab_size=len(vocab))
            except MalformedExampleError as exc:
                raise DatasetFormatError(line_no, str(exc)) from None
            examples.append(ex)
    return examples, vocab


def save_dataset(examples, vocab, path):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            text, target = text_from_tokens(ex.tokens)
            rec = {
                "id": ex.example_id,
                "text": text,
                "target": target,
                "candidates": [vocab.surface(c) for c in ex.candidates],
                "answer": ex.gold_index,
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_groups(path, vocab):
    groups = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                groups.append(CandidateGroup(
                    group_id=str(rec["group_id"]),
                    candidates=[vocab.add(s) for s in rec["candidates"]],
                    member_ids=[str(m) for m in rec["members"]],
                ))
            except (json.JSONDecodeError, KeyError) as exc:
                raise DatasetFormatError(line_no, str(exc)) from None
    return groups


def save_groups(groups, vocab, path):
    with open(path, "w", encoding="utf-8") as fh:
        for g in groups:
            rec = {
                "group_id": g.group_id,
                "candidates": [vocab.surface(c) for c in g.candidates],
                "members": list(g.member_ids),
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def build_token_vocabulary(examples, idiom_vocab):
    """Character vocabulary over passages and idiom surface forms."""
    tv = TokenVocabulary()
    for ex in examples:
        for t in ex.tokens:
            if t not in (MASK, OTHER_BLANK):
                tv.add(t)
    for surface in idiom_vocab.surfaces():
        for ch in surface:
            tv.add(ch)
    return tv


# ---------------------------------------------------------------------------
# Synthetic idiom language
# ---------------------------------------------------------------------------

@dataclass
class SynthSpec:
    """Controls for the synthetic generator; generation is a pure function
    of these fields (the seed included)."""

    vocab_size: int = 120
    n_classes: int = 4
    n_topics: int = 10
    n_examples: int = 20000
    n_candidates: int = 7
    seed: int = 42
    min_context: int = 8
    max_context: int = 14

    def validate(self):
        if self.vocab_size < self.n_candidates:
            raise ValueError(
                f"vocab_size {self.vocab_size} < n_candidates {self.n_candidates}")
        if self.n_classes < 2 or self.n_topics < 2:
            raise ValueError("need at least 2 classes and 2 topics")
        return self


_TOPIC_CHARS = 24       # alphabet size per topic
_TOPIC_BASE = 0x4E00    # CJK block: topic-t context characters
_CLASS_LEFT = 0x8000    # class marker immediately left of the blank
_CLASS_RIGHT = 0x8100   # class marker immediately right of the blank
_IDIOM_BASE = 0x3400    # CJK ext A: idiom surface characters


class SyntheticWorld:
    """A seeded idiom language whose gold answer is jointly determined by a
    local syntactic class (markers around the blank) and a global topic
    (the context character distribution).

    Idiom i carries class ``i % C`` and topic ``(i // C) % T``.  Each
    passage draws context characters from its topic's alphabet and wraps
    the blank in its class's marker pair, so distractors of the right
    class but wrong topic fail globally and vice versa.
    """

    def __init__(self, spec: SynthSpec):
        self.spec = spec.validate()
        self.vocab = IdiomVocabulary()
        self.idiom_class = np.array(
            [i % spec.n_classes for i in range(spec.vocab_size)])
        self.idiom_topic = np.array(
            [(i // spec.n_classes) % spec.n_topics for i in range(spec.vocab_size)])
        for i in range(spec.vocab_size):
            surface = (chr(_IDIOM_BASE + i)
                       + chr(_IDIOM_BASE + 0x100 + int(self.idiom_class[i]))
                       + chr(_IDIOM_BASE + 0x180 + int(self.idiom_topic[i]))
                       + chr(_IDIOM_BASE + i))
            self.vocab.add(surface)
        self._by_class = [np.flatnonzero(self.idiom_class == c)
                          for c in range(spec.n_classes)]
        self._by_topic = [np.flatnonzero(self.idiom_topic == t)
                          for t in range(spec.n_topics)]

    def _topic_char(self, topic, rng):
        return chr(_TOPIC_BASE + topic * _TOPIC_CHARS + int(rng.integers(_TOPIC_CHARS)))

    def _distractors(self, gold, rng):
        spec = self.spec
        c, t = int(self.idiom_class[gold]), int(self.idiom_topic[gold])
        same_class = [i for i in self._by_class[c]
                      if i != gold and self.idiom_topic[i] != t]
        same_topic = [i for i in self._by_topic[t]
                      if i != gold and self.idiom_class[i] != c]
        picks = []
        picks.append(int(rng.choice(same_class)))
        picks.append(int(rng.choice(same_topic)))
        pool = [i for i in range(spec.vocab_size) if i != gold and i not in picks]
        extra = rng.choice(len(pool), size=spec.n_candidates - 3, replace=False)
        picks.extend(int(pool[j]) for j in extra)
        return picks

    def make_example(self, example_id, rng, gold=None):
        spec = self.spec
        if gold is None:
            gold = int(rng.integers(spec.vocab_size))
        c, t = int(self.idiom_class[gold]), int(self.idiom_topic[gold])
        n_ctx = int(rng.integers(spec.min_context, spec.max_context + 1))
        ctx = [self._topic_char(t, rng) for _ in range(n_ctx)]
        pos = int(rng.integers(n_ctx + 1))
        tokens = ctx[:pos] + [chr(_CLASS_LEFT + c), MASK, chr(_CLASS_RIGHT + c)] + ctx[pos:]
        candidates = [gold] + self._distractors(gold, rng)
        order = rng.permutation(len(candidates))
        candidates = [candidates[int(j)] for j in order]
        return ClozeExample(
            example_id=example_id,
            tokens=tokens,
            candidates=candidates,
            gold_index=candidates.index(gold),
        )

    def generate(self, n=None, seed=None):
        """Deterministically generate n examples (defaults from the SynthSpec)."""
        spec = self.spec
        rng = np.random.default_rng(spec.seed if seed is None else seed)
        n = spec.n_examples if n is None else n
        return [self.make_example(f"syn-{i:06d}", rng) for i in range(n)]

    def generate_groups(self, n_groups, seed=None, min_blanks=2, max_blanks=None):
        """Competition-style groups where each shared candidate is the gold
        answer of exactly one member blank.  Returns (examples, groups)."""
        spec = self.spec
        rng = np.random.default_rng((spec.seed if seed is None else seed) + 1)
        max_blanks = max_blanks or spec.n_candidates
        examples, groups = [], []
        for g in range(n_groups):
            m = int(rng.integers(min_blanks, max_blanks + 1))
            cands = [int(i) for i in rng.choice(spec.vocab_size, size=m, replace=False)]
            member_ids = []
            for j, gold in enumerate(cands):
                ex = self.make_example(f"grp-{g:05d}-{j}", rng, gold=gold)
                ex.candidates = list(cands)
                ex.gold_index = cands.index(gold)
                examples.append(ex)
                member_ids.append(ex.example_id)
            groups.append(CandidateGroup(f"grp-{g:05d}", list(cands), member_ids))
        return examples, groups


def generate_synthetic(spec: SynthSpec):
    """Build the synthetic world and its dataset; returns (examples, vocab)."""
    world = SyntheticWorld(spec)
    return world.generate(), world.vocab


def split_dataset(examples, train=0.8, dev=0.1):
    """80/10/10 split by example index."""
    n = len(examples)
    n_train, n_dev = int(n * train), int(n * dev)
    return (examples[:n_train],
            examples[n_train:n_train + n_dev],
            examples[n_train + n_dev:])
