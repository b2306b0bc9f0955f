"""Integrated gradients over input token embeddings, with word-merged
values for display.

The attribution target is the pre-softmax score of a chosen candidate.
Baseline is all-zero embedding rows; the path integral is approximated
by a left Riemann-style sum at m interior points k/m, k = 1..m.  The
per-token scalar is the sum over embedding dimensions of the IG vector.
A word's merged value is the token value of highest absolute value in
its span, sign preserved.
"""

from __future__ import annotations

import html
import json
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from . import tensor as T
from . import encoder as enc


@dataclass
class AttributionReport:
    tokens: list
    token_values: np.ndarray
    target_candidate: int          # index into the example's candidate list
    completeness_gap: float
    f_input: float
    f_baseline: float
    word_spans: list = field(default_factory=list)    # (start, end) half-open
    word_values: list = field(default_factory=list)

    def to_dict(self):
        return {
            "tokens": self.tokens,
            "token_values": [float(v) for v in self.token_values],
            "target_candidate": self.target_candidate,
            "completeness_gap": self.completeness_gap,
            "f_input": self.f_input,
            "f_baseline": self.f_baseline,
            "word_spans": [list(s) for s in self.word_spans],
            "word_values": [float(v) for v in self.word_values],
        }


def integrated_gradients_fn(f, x, steps=50, baseline=None):
    """IG for a scalar function of an array input.

    attr = (x - baseline) * (1/m) * sum_{k=1..m} grad f(baseline + (k/m)(x - baseline))

    Returns (attributions with x's shape, completeness gap, f(x), f(baseline)).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    baseline = np.zeros_like(x) if baseline is None else np.asarray(baseline)
    delta = x - baseline

    grad_sum = np.zeros_like(x)
    for k in range(1, steps + 1):
        point = T.Tensor(baseline + (k / steps) * delta, requires_grad=True)
        out = f(point)
        out.backward()
        if point.grad is None:
            continue
        if not np.isfinite(point.grad).all():
            raise T.NumericalError("integrated gradients: non-finite gradient")
        grad_sum += point.grad
    attr = delta * grad_sum / steps

    f_x = f(T.Tensor(x)).item()
    f_b = f(T.Tensor(baseline)).item()
    gap = abs(float(attr.sum()) - (f_x - f_b))
    return attr, gap, f_x, f_b


def _candidate_score_fn(mdl: M.Model, batch: M.Batch, target,
                        token_vocab=None, char_table=None):
    """(input ids, pad mask, f: embeddings -> scalar pre-softmax score)."""
    p, cfg = mdl.params, mdl.encoder_config
    if mdl.head == "charseq":
        from . import heads
        win = [batch.ids[0, batch.pad_mask[0]]]
        cand_chars = char_table[batch.cand_ids][:, target:target + 1]
        ids, mask, _, _ = heads.batched_charseq_logits(
            None, win, cand_chars, token_vocab.pad_id)

        def f(emb):
            H = enc.encode_from_embeddings(p, cfg, emb, mask)
            cls_row = T.gather_positions(H, np.zeros(1, dtype=np.int64))
            return T.add(T.tsum(T.mul(cls_row, p["cls_w"])), p["cls_bias"])

        return ids, mask, f

    ids, mask = batch.ids, batch.pad_mask

    def f(emb):
        H = enc.encode_from_embeddings(p, cfg, emb, mask)
        h_b = T.gather_positions(H, batch.blank)
        from . import heads
        if mdl.head in ("idm", "idm-ec"):
            logits = heads.batched_idm_logits(h_b, batch.cand_ids, p["idiom_emb"],
                                              p["head_w"], p["head_bias"])
        elif mdl.head == "cp":
            logits = heads.batched_pooled_logits(H, h_b, mask, batch.cand_ids,
                                                 p["idiom_emb"], p["idiom_emb"])
        else:
            logits = heads.batched_pooled_logits(H, h_b, mask, batch.cand_ids,
                                                 p["idiom_u"], p["idiom_v"])
        return T.tsum(T.gather_last(logits, np.array([target])))

    return ids, mask, f


def attribute_example(mdl: M.Model, example, token_vocab, target_candidate=None,
                      steps=50, token_strings=None, word_spans=None,
                      char_table=None) -> AttributionReport:
    """IG attribution for one example's chosen (default: gold) candidate."""
    batch = M.make_batch([example], token_vocab,
                         max_len=M.window_budget(mdl.head,
                                                 mdl.encoder_config.max_positions),
                         head=mdl.head)
    target = example.gold_index if target_candidate is None else target_candidate
    with M.frozen(mdl):
        ids, mask, f = _candidate_score_fn(mdl, batch, target,
                                           token_vocab=token_vocab,
                                           char_table=char_table)
        x = mdl.params["tok_emb"].data[ids]
        attr, gap, f_x, f_b = integrated_gradients_fn(f, x, steps=steps)
    token_values = attr.sum(axis=-1)[0]

    if token_strings is None:
        from .corpus import tokenize_window
        win, _ = tokenize_window(example.tokens,
                                 M.window_budget(mdl.head,
                                                 mdl.encoder_config.max_positions))
        token_strings = win if mdl.head != "charseq" else None
    if token_strings is None or len(token_strings) != len(token_values):
        token_strings = [f"tok{i}" for i in range(len(token_values))]

    report = AttributionReport(
        tokens=list(token_strings),
        token_values=token_values,
        target_candidate=target,
        completeness_gap=gap,
        f_input=f_x,
        f_baseline=f_b,
    )
    spans = word_spans or [(i, i + 1) for i in range(len(token_values))]
    report.word_spans = list(spans)
    report.word_values = merge_to_words(token_values, spans)
    return report


class SegmentationError(ValueError):
    """Word spans do not partition the token sequence."""


def merge_to_words(token_values, spans):
    """Per-word value = the token value of maximal absolute value within
    the span (sign preserved).  Spans must partition the tokens."""
    token_values = np.asarray(token_values)
    covered = np.zeros(len(token_values), dtype=bool)
    out = []
    for start, end in spans:
        if not (0 <= start < end <= len(token_values)):
            raise SegmentationError(f"span ({start}, {end}) out of bounds")
        if covered[start:end].any():
            raise SegmentationError(f"span ({start}, {end}) overlaps another span")
        covered[start:end] = True
        seg = token_values[start:end]
        out.append(float(seg[np.argmax(np.abs(seg))]))
    if not covered.all():
        raise SegmentationError("spans leave tokens uncovered")
    return out


def render_report(report: AttributionReport) -> str:
    """Standalone HTML heatmap: red for positive, blue for negative,
    intensity proportional to |value| / max |value|."""
    values = np.asarray(report.word_values, dtype=np.float64)
    peak = float(np.max(np.abs(values))) if values.size else 0.0
    spans_html = []
    for (start, end), v in zip(report.word_spans, report.word_values):
        word = "".join(report.tokens[start:end])
        alpha = abs(v) / peak if peak > 0 else 0.0
        color = "255,0,0" if v > 0 else "0,0,255"
        style = f"background: rgba({color},{alpha:.3f});" if v != 0 and peak > 0 else ""
        spans_html.append(
            f'<span class="w" data-value="{v:.4f}" style="{style}">'
            f'{html.escape(word)}</span>')
    payload = json.dumps(report.to_dict(), ensure_ascii=False)
    return (
        "<!DOCTYPE html><html><head><meta charset=\"utf-8\">"
        "<style>.w{padding:1px 2px;margin:1px;display:inline-block;"
        "font-family:sans-serif}</style></head><body>"
        f"<p>target candidate index: {report.target_candidate}; "
        f"completeness gap: {report.completeness_gap:.6f}</p>"
        f"<div>{' '.join(spans_html)}</div>"
        f"<script type=\"application/json\" id=\"attribution-data\">{payload}"
        "</script></body></html>"
    )
