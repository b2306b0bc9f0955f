"""Model container: encoder parameters plus head parameters, batched
forward passes for every head variant, and checkpoint round-tripping."""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import corpus, heads
from . import encoder as enc
from . import tensor as T


@dataclass
class Model:
    head: str
    encoder_config: enc.EncoderConfig
    params: dict                 # name -> Tensor, encoder and head together
    idiom_vocab_size: int

    @property
    def ec_default(self):
        return heads.DEFAULT_EC[self.head]

    def tables(self):
        """The embedding table(s) used for enlarged scoring / ranking."""
        if self.head == "cp-de":
            return (self.params["idiom_u"], self.params["idiom_v"])
        return self.params["idiom_emb"]


def build_model(encoder_config: enc.EncoderConfig, head: str, n_idioms: int,
                seed: int = 0) -> Model:
    if head not in heads.HEAD_VARIANTS:
        raise ValueError(f"unknown head {head!r}; expected one of {heads.HEAD_VARIANTS}")
    encoder_config.seed = seed
    params = enc.init_params(encoder_config)
    rng = np.random.default_rng(seed + 1)
    d = encoder_config.hidden_size

    def w(*shape):
        return T.Tensor(rng.normal(0.0, 0.02, size=shape), requires_grad=True)

    if head == "charseq":
        params["cls_w"] = w(d)
        params["cls_bias"] = T.Tensor(0.0, requires_grad=True)
    elif head == "cp-de":
        params["idiom_u"] = w(n_idioms, d)
        params["idiom_v"] = w(n_idioms, d)
    else:
        params["idiom_emb"] = w(n_idioms, d)
        if head in ("idm", "idm-ec"):
            params["head_w"] = w(d)
            params["head_bias"] = T.Tensor(0.0, requires_grad=True)
    return Model(head, encoder_config, params, n_idioms)


@contextmanager
def frozen(model: Model):
    """Disable gradient tracking for pure evaluation passes."""
    flags = {n: p.requires_grad for n, p in model.params.items()}
    for p in model.params.values():
        p.requires_grad = False
    try:
        yield model
    finally:
        for n, p in model.params.items():
            p.requires_grad = flags[n]


# ---------------------------------------------------------------------------
# Batch assembly and forward passes
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    ids: np.ndarray          # (B, L) token ids, PAD-filled
    pad_mask: np.ndarray     # (B, L) True on real tokens
    blank: np.ndarray        # (B,) index of MASK per row
    cand_ids: np.ndarray     # (B, K)
    gold_index: np.ndarray   # (B,) index into the candidate list
    gold_idiom: np.ndarray   # (B,) idiom id of the gold answer
    example_ids: list


def window_budget(model_head, max_positions, max_len=128):
    """charseq appends SEP + 4 idiom characters + SEP to the window."""
    budget = max_positions - 6 if model_head == "charseq" else max_positions
    return min(max_len, budget)


def make_batch(examples, token_vocab: corpus.TokenVocabulary, max_len=128,
               head="idm") -> Batch:
    windows, blanks = [], []
    eff_len = max_len
    for ex in examples:
        win, b = corpus.tokenize_window(ex.tokens, eff_len)
        windows.append(token_vocab.encode(win))
        blanks.append(b)
    L = max(len(w) for w in windows)
    B = len(examples)
    ids = np.full((B, L), token_vocab.pad_id, dtype=np.int64)
    mask = np.zeros((B, L), dtype=bool)
    for i, w in enumerate(windows):
        ids[i, :len(w)] = w
        mask[i, :len(w)] = True
    return Batch(
        ids=ids,
        pad_mask=mask,
        blank=np.array(blanks, dtype=np.int64),
        cand_ids=np.array([ex.candidates for ex in examples], dtype=np.int64),
        gold_index=np.array([ex.gold_index for ex in examples], dtype=np.int64),
        gold_idiom=np.array([ex.candidates[ex.gold_index] for ex in examples],
                            dtype=np.int64),
        example_ids=[ex.example_id for ex in examples],
    )


def idiom_char_ids(idiom_vocab: corpus.IdiomVocabulary,
                   token_vocab: corpus.TokenVocabulary):
    """(V, 4) matrix of surface character ids for the charseq head."""
    rows = []
    for i in range(len(idiom_vocab)):
        surface = idiom_vocab.surface(i)
        rows.append([token_vocab.id_of(ch) for ch in surface])
    return np.array(rows, dtype=np.int64)


def forward_logits(model: Model, batch: Batch, ec: bool, dropout_rng=None,
                   char_table=None, token_vocab=None):
    """Candidate logits (B, K) and, when ec, enlarged logits (B, V).

    Embedding heads encode the passage once; charseq re-encodes once per
    candidate and never supports the enlarged set.
    """
    p = model.params
    cfg = model.encoder_config
    if model.head == "charseq":
        if ec:
            raise ValueError("enlarged candidate set is not supported for charseq")
        if char_table is None:
            raise ValueError("charseq forward needs the idiom character table")
        win_ids = [batch.ids[i, batch.pad_mask[i]] for i in range(batch.ids.shape[0])]
        cand_chars = char_table[batch.cand_ids]
        ids, mask, B, K = heads.batched_charseq_logits(
            None, win_ids, cand_chars, token_vocab.pad_id)
        H = enc.encode(p, cfg, ids, mask, dropout_rng)
        cls_rows = T.gather_positions(H, np.zeros(ids.shape[0], dtype=np.int64))
        scalars = T.add(T.tsum(T.mul(cls_rows, p["cls_w"]), axis=-1), p["cls_bias"])
        return T.reshape(scalars, (B, K)), None

    H = enc.encode(p, cfg, batch.ids, batch.pad_mask, dropout_rng)
    h_b = T.gather_positions(H, batch.blank)
    if model.head in ("idm", "idm-ec"):
        cand = heads.batched_idm_logits(h_b, batch.cand_ids, p["idiom_emb"],
                                        p["head_w"], p["head_bias"])
        enl = heads.batched_enlarged_logits(h_b, p["idiom_emb"]) if ec else None
    elif model.head == "cp":
        cand = heads.batched_pooled_logits(H, h_b, batch.pad_mask, batch.cand_ids,
                                           p["idiom_emb"], p["idiom_emb"])
        enl = heads.batched_enlarged_logits(h_b, p["idiom_emb"]) if ec else None
    elif model.head == "cp-de":
        cand = heads.batched_pooled_logits(H, h_b, batch.pad_mask, batch.cand_ids,
                                           p["idiom_u"], p["idiom_v"])
        enl = (heads.batched_dual_enlarged_logits(h_b, p["idiom_u"], p["idiom_v"])
               if ec else None)
    else:
        raise ValueError(f"unknown head {model.head!r}")
    return cand, enl


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: Model, step, train_config_dict,
                    token_vocab: corpus.TokenVocabulary,
                    idiom_vocab: corpus.IdiomVocabulary):
    meta = {
        "head": model.head,
        "encoder_config": enc.config_to_dict(model.encoder_config),
        "idiom_vocab_size": model.idiom_vocab_size,
        "step": int(step),
        "train_config": train_config_dict,
        "tokens": token_vocab._tokens,
        "idioms": idiom_vocab.surfaces(),
    }
    arrays = {f"param.{n}": p.data for n, p in model.params.items()}
    meta_bytes = np.frombuffer(json.dumps(meta, ensure_ascii=False).encode("utf-8"),
                               dtype=np.uint8)
    np.savez(path, __meta__=meta_bytes, **arrays)


def load_checkpoint(path):
    """Returns (model, step, train_config_dict, token_vocab, idiom_vocab)."""
    with np.load(path) as npz:
        meta = json.loads(bytes(npz["__meta__"]).decode("utf-8"))
        arrays = {k[len("param."):]: npz[k] for k in npz.files if k.startswith("param.")}
    cfg = enc.config_from_dict(meta["encoder_config"])
    params = {n: T.Tensor(a, requires_grad=True) for n, a in arrays.items()}
    model = Model(meta["head"], cfg, params, meta["idiom_vocab_size"])
    tv = corpus.TokenVocabulary()
    for t in meta["tokens"]:
        tv.add(t)
    iv = corpus.IdiomVocabulary()
    for s in meta["idioms"]:
        iv.add(s)
    return model, meta["step"], meta["train_config"], tv, iv
