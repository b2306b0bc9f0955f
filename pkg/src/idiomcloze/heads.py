"""The five candidate-scoring formulations.

All heads map hidden states and idiom embeddings to a probability
distribution over a candidate set:

* ``charseq``  — re-encode passage + idiom characters per candidate,
                 linear map on the CLS row;
* ``idm``      — blank-row match against a single idiom embedding via
                 elementwise fusion with a learned weight vector and bias;
* ``enlarged`` — plain dot product against every idiom in the vocabulary
                 (no weight vector or bias on this path);
* ``cp``       — blank-row match plus max-pooled match over every non-PAD
                 position (CLS and SEP included);
* ``dual``     — like ``cp`` but with separate local and global embedding
                 tables; its enlarged variant matches both tables against
                 the blank row only.

Public functions score one example at a time; the ``batched_*`` helpers
return logit Tensors for training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T

HEAD_VARIANTS = ("charseq", "idm", "idm-ec", "cp", "cp-de")

# Heads that train with the enlarged-candidate loss term by default.
DEFAULT_EC = {"charseq": False, "idm": False, "idm-ec": True, "cp": True, "cp-de": True}


@dataclass
class CandidateDistribution:
    """Probabilities over an ordered candidate list, with provenance."""

    probs: np.ndarray
    candidate_ids: list
    head: str
    candidate_set: str        # "original" or "enlarged"

    def argmax(self):
        return int(np.argmax(self.probs))


def _probs(logits):
    return T.softmax(T.Tensor(np.asarray(logits, dtype=np.float64)), axis=-1).data


# ---------------------------------------------------------------------------
# Batched logit computations (differentiable; used by training and by the
# per-example wrappers below)
# ---------------------------------------------------------------------------

def batched_idm_logits(h_b, cand_ids, table, w, b):
    """Eq-style fusion: logit_k = w . (a_k * h_b) + b.  h_b (B,d) -> (B,K)."""
    A = T.embedding(table, np.asarray(cand_ids))              # (B, K, d)
    hb = T.reshape(h_b, (h_b.shape[0], 1, h_b.shape[1]))      # (B, 1, d)
    fused = T.mul(A, hb)
    return T.add(T.tsum(T.mul(fused, w), axis=-1), b)


def batched_pooled_logits(H, h_b, pad_mask, cand_ids, blank_table, pool_table):
    """Blank-row match plus context max-pool:
    logit_k = a_k^blank . h_b + max_i (a_k^pool . h_i), PAD excluded."""
    cand_ids = np.asarray(cand_ids)
    Ab = T.embedding(blank_table, cand_ids)                   # (B, K, d)
    Ap = T.embedding(pool_table, cand_ids)
    hb = T.reshape(h_b, (h_b.shape[0], 1, h_b.shape[1]))
    blank_term = T.tsum(T.mul(Ab, hb), axis=-1)               # (B, K)
    dots = T.matmul(H, T.transpose(Ap, (0, 2, 1)))            # (B, L, K)
    pad = ~np.asarray(pad_mask, dtype=bool)
    dots = T.masked_fill(dots, pad[:, :, None], -1e30)
    pooled, _ = T.max_over_axis(dots, axis=1)                 # (B, K)
    return T.add(blank_term, pooled)


def batched_enlarged_logits(h_b, table):
    """Eq-style enlarged set: logit_a = a . h_b over the whole vocabulary."""
    return T.matmul(h_b, T.transpose(table, (1, 0)))          # (B, V)


def batched_dual_enlarged_logits(h_b, table_u, table_v):
    """Dual enlarged set: logit_a = u_a . h_b + v_a . h_b (blank row only)."""
    return T.matmul(h_b, T.transpose(T.add(table_u, table_v), (1, 0)))


def batched_charseq_logits(encode_fn, window_tokens_ids, cand_char_ids, pad_id):
    """One encoder pass per (example, candidate): CLS + passage + SEP +
    four idiom characters + SEP, scored by a linear map on the CLS row.

    window_tokens_ids: list of B id arrays (each starts with CLS, ends
    with SEP); cand_char_ids: (B, K, 4) idiom character ids.  encode_fn
    maps (ids, pad_mask) to states and owns the CLS-row linear map; here
    we only assemble the sequences.  Returns (ids, pad_mask, B, K).
    """
    cand_char_ids = np.asarray(cand_char_ids)
    B, K, _ = cand_char_ids.shape
    seqs = []
    for i in range(B):
        base = np.asarray(window_tokens_ids[i])
        for k in range(K):
            seqs.append(np.concatenate([base, cand_char_ids[i, k], base[-1:]]))
    L = max(len(s) for s in seqs)
    ids = np.full((B * K, L), pad_id, dtype=np.int64)
    mask = np.zeros((B * K, L), dtype=bool)
    for j, s in enumerate(seqs):
        ids[j, :len(s)] = s
        mask[j, :len(s)] = True
    return ids, mask, B, K


# ---------------------------------------------------------------------------
# Per-example scoring API
# ---------------------------------------------------------------------------

def score_idm_emb(h_b, candidate_ids, table, w, b) -> CandidateDistribution:
    if len(candidate_ids) < 1:
        raise ValueError("empty candidate list")
    logits = batched_idm_logits(_row(h_b), [candidate_ids], table, w, b)
    return CandidateDistribution(_probs(logits.data[0]), list(candidate_ids),
                                 "idm", "original")


def score_enlarged(h_b, table) -> CandidateDistribution:
    if table.shape[0] < 1:
        raise ValueError("empty vocabulary")
    logits = batched_enlarged_logits(_row(h_b), table)
    return CandidateDistribution(_probs(logits.data[0]),
                                 list(range(table.shape[0])), "idm", "enlarged")


def score_context_pool(H, blank_index, candidate_ids, table,
                       pad_mask=None) -> CandidateDistribution:
    H, pad_mask, h_b = _states(H, blank_index, pad_mask)
    logits = batched_pooled_logits(H, h_b, pad_mask, [candidate_ids], table, table)
    return CandidateDistribution(_probs(logits.data[0]), list(candidate_ids),
                                 "cp", "original")


def score_dual(H, blank_index, candidate_ids, table_u, table_v,
               pad_mask=None) -> CandidateDistribution:
    H, pad_mask, h_b = _states(H, blank_index, pad_mask)
    logits = batched_pooled_logits(H, h_b, pad_mask, [candidate_ids],
                                   table_u, table_v)
    return CandidateDistribution(_probs(logits.data[0]), list(candidate_ids),
                                 "cp-de", "original")


def score_dual_enlarged(h_b, table_u, table_v) -> CandidateDistribution:
    if table_u.shape[0] < 1:
        raise ValueError("empty vocabulary")
    logits = batched_dual_enlarged_logits(_row(h_b), table_u, table_v)
    return CandidateDistribution(_probs(logits.data[0]),
                                 list(range(table_u.shape[0])), "cp-de", "enlarged")


def vocabulary_scores(h_b, tables):
    """Enlarged-set scores over the whole vocabulary; ``tables`` is either
    a single table or a (u, v) pair."""
    if isinstance(tables, tuple):
        logits = batched_dual_enlarged_logits(_row(h_b), *tables)
    else:
        logits = batched_enlarged_logits(_row(h_b), tables)
    return logits.data[0]


def rank_vocabulary(h_b, tables, idiom_id):
    """1-based rank of an idiom under the full-vocabulary scores; ties
    break toward the lower idiom id."""
    scores = vocabulary_scores(h_b, tables)
    s = scores[idiom_id]
    return int(1 + np.sum(scores > s) + np.sum(scores[:idiom_id] == s))


def _row(h_b):
    h_b = T.as_tensor(h_b)
    if h_b.data.ndim == 1:
        h_b = T.reshape(h_b, (1, h_b.data.shape[0]))
    return h_b


def _states(H, blank_index, pad_mask):
    H = T.as_tensor(H)
    if H.data.ndim == 2:
        H = T.reshape(H, (1,) + H.data.shape)
    L = H.data.shape[1]
    if not 0 <= blank_index < L:
        raise IndexError(f"blank index {blank_index} outside sequence of {L}")
    if pad_mask is None:
        pad_mask = np.ones((1, L), dtype=bool)
    else:
        pad_mask = np.asarray(pad_mask, dtype=bool).reshape(1, L)
    h_b = T.gather_positions(H, np.array([blank_index]))
    return H, pad_mask, h_b
