"""Accuracy and mean-reciprocal-rank evaluation with per-split reports.

MRR is only reported for heads that carry idiom embeddings: the rank of
the gold idiom is taken in the full-vocabulary scoring, ties broken
toward the lower idiom id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import heads, model as M
from . import tensor as T


@dataclass
class EvalReport:
    split: str
    accuracy: float
    mrr: float | None            # None for heads without idiom embeddings
    count: int
    records: list = field(default_factory=list)   # {id, predicted, gold, rank}

    def to_dict(self):
        return {"split": self.split, "accuracy": self.accuracy,
                "mrr": self.mrr, "count": self.count, "records": self.records}

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, indent=2)

    def render(self):
        lines = [f"split      {self.split}",
                 f"examples   {self.count}",
                 f"accuracy   {self.accuracy:.4f}"]
        if self.mrr is not None:
            lines.append(f"mrr        {self.mrr:.4f}")
        return "\n".join(lines)


def accuracy(predictions, golds):
    if len(predictions) != len(golds):
        raise ValueError(f"length mismatch: {len(predictions)} vs {len(golds)}")
    if not predictions:
        raise ValueError("empty prediction list")
    return float(np.mean(np.asarray(predictions) == np.asarray(golds)))


def mrr(ranks):
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("empty rank list")
    if (ranks < 1).any():
        raise ValueError("ranks are 1-based; got a rank < 1")
    return float(np.mean(1.0 / ranks))


def evaluate(mdl: M.Model, examples, token_vocab, idiom_vocab,
             split="eval", batch_size=64, char_table=None) -> EvalReport:
    """Argmax over each example's candidate distribution; ranks via the
    full-vocabulary scoring for embedding heads.  Argmax ties break to
    the lowest candidate index."""
    has_embeddings = mdl.head != "charseq"
    if mdl.head == "charseq" and char_table is None:
        char_table = M.idiom_char_ids(idiom_vocab, token_vocab)
    max_len = M.window_budget(mdl.head, mdl.encoder_config.max_positions)

    records, ranks = [], []
    with M.frozen(mdl):
        for lo in range(0, len(examples), batch_size):
            chunk = examples[lo:lo + batch_size]
            batch = M.make_batch(chunk, token_vocab, max_len=max_len, head=mdl.head)
            cand_logits, _ = M.forward_logits(mdl, batch, ec=False,
                                              char_table=char_table,
                                              token_vocab=token_vocab)
            preds = np.argmax(cand_logits.data, axis=1)
            if has_embeddings:
                from . import encoder as enc
                H = enc.encode(mdl.params, mdl.encoder_config,
                               batch.ids, batch.pad_mask)
                h_b = T.gather_positions(H, batch.blank)
                tables = mdl.tables()
                for i, ex in enumerate(chunk):
                    rank = heads.rank_vocabulary(h_b.data[i], tables,
                                                 int(batch.gold_idiom[i]))
                    ranks.append(rank)
                    records.append({"id": ex.example_id, "predicted": int(preds[i]),
                                    "gold": int(batch.gold_index[i]), "rank": rank})
            else:
                for i, ex in enumerate(chunk):
                    records.append({"id": ex.example_id, "predicted": int(preds[i]),
                                    "gold": int(batch.gold_index[i])})

    acc = accuracy([r["predicted"] for r in records],
                   [r["gold"] for r in records])
    return EvalReport(split=split, accuracy=acc,
                      mrr=mrr(ranks) if has_embeddings else None,
                      count=len(records), records=records)
