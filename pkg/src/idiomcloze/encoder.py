"""Small pre-norm transformer encoder producing last-layer hidden states.

Stands in for the pretrained backbone: embedding + learned positions,
pre-norm self-attention and feed-forward blocks, final layer norm.  An
import/export path for externally computed hidden states lets downstream
heads run without this encoder at all.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T


@dataclass
class EncoderConfig:
    layers: int = 2
    heads: int = 4
    hidden_size: int = 64
    ffn_size: int = 256
    max_positions: int = 160
    vocab_size: int = 0
    dropout: float = 0.0
    seed: int = 0

    def validate(self):
        if self.hidden_size % self.heads != 0:
            raise ValueError(
                f"hidden size {self.hidden_size} not divisible by {self.heads} heads")
        if self.max_positions < 8:
            raise ValueError("max_positions too small")
        if self.vocab_size <= 0:
            raise ValueError("vocab_size must be set")
        return self


@dataclass
class HiddenStates:
    """Last-layer states for one sequence plus the blank row index."""

    states: np.ndarray    # (length, hidden_size)
    blank_index: int


def init_params(config: EncoderConfig):
    """Deterministic parameter set: scaled-normal weights, zero biases,
    layer-norm gain 1.  Keys follow ``<block>.<name>`` naming; anything
    containing 'bias' or 'ln_' is excluded from weight decay downstream."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    d, f = config.hidden_size, config.ffn_size
    std = 0.02

    def w(*shape):
        return T.Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)

    def zeros(*shape):
        return T.Tensor(np.zeros(shape), requires_grad=True)

    def ones(*shape):
        return T.Tensor(np.ones(shape), requires_grad=True)

    params = {
        "tok_emb": w(config.vocab_size, d),
        "pos_emb": w(config.max_positions, d),
        "final.ln_g": ones(d),
        "final.ln_bias": zeros(d),
    }
    for i in range(config.layers):
        p = f"layer{i}"
        params.update({
            f"{p}.attn.ln_g": ones(d), f"{p}.attn.ln_bias": zeros(d),
            f"{p}.attn.wq": w(d, d), f"{p}.attn.bias_q": zeros(d),
            f"{p}.attn.wk": w(d, d), f"{p}.attn.bias_k": zeros(d),
            f"{p}.attn.wv": w(d, d), f"{p}.attn.bias_v": zeros(d),
            f"{p}.attn.wo": w(d, d), f"{p}.attn.bias_o": zeros(d),
            f"{p}.ffn.ln_g": ones(d), f"{p}.ffn.ln_bias": zeros(d),
            f"{p}.ffn.w1": w(d, f), f"{p}.ffn.bias_1": zeros(f),
            f"{p}.ffn.w2": w(f, d), f"{p}.ffn.bias_2": zeros(d),
        })
    return params


def _attention(params, prefix, x, key_mask, config, dropout_rng):
    """Pre-norm multi-head self-attention block with PAD keys masked out."""
    B, L, d = x.shape
    h = config.heads
    dh = d // h
    normed = T.layer_norm(x, params[f"{prefix}.ln_g"], params[f"{prefix}.ln_bias"])

    def proj(wname, bname):
        y = T.add(T.matmul(normed, params[wname]), params[bname])
        y = T.reshape(y, (B, L, h, dh))
        return T.transpose(y, (0, 2, 1, 3))      # (B, h, L, dh)

    q = proj(f"{prefix}.wq", f"{prefix}.bias_q")
    k = proj(f"{prefix}.wk", f"{prefix}.bias_k")
    v = proj(f"{prefix}.wv", f"{prefix}.bias_v")

    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    pad_keys = ~key_mask[:, None, None, :]       # (B, 1, 1, L) -> broadcast
    scores = T.masked_fill(scores, np.broadcast_to(pad_keys, scores.shape), -1e30)
    attn = T.softmax(scores, axis=-1)
    attn = _dropout(attn, config, dropout_rng)
    ctx = T.matmul(attn, v)                      # (B, h, L, dh)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, L, d))
    out = T.add(T.matmul(ctx, params[f"{prefix}.wo"]), params[f"{prefix}.bias_o"])
    return _dropout(out, config, dropout_rng)


def _ffn(params, prefix, x, config, dropout_rng):
    normed = T.layer_norm(x, params[f"{prefix}.ln_g"], params[f"{prefix}.ln_bias"])
    hidden = T.gelu(T.add(T.matmul(normed, params[f"{prefix}.w1"]),
                          params[f"{prefix}.bias_1"]))
    out = T.add(T.matmul(hidden, params[f"{prefix}.w2"]), params[f"{prefix}.bias_2"])
    return _dropout(out, config, dropout_rng)


def _dropout(x, config, rng):
    if rng is None or config.dropout <= 0.0:
        return x
    keep = 1.0 - config.dropout
    mask = (rng.random(x.shape) < keep) / keep
    return T.mul(x, T.Tensor(mask))


def encode_from_embeddings(params, config, emb, pad_mask, dropout_rng=None):
    """Run the stack on pre-looked-up token embeddings (B, L, d).

    Position embeddings are added here, so integrated gradients can treat
    the token embedding rows as the attribution input.
    """
    B, L, _ = emb.shape
    if L > config.max_positions:
        raise ValueError(f"sequence length {L} exceeds max positions "
                         f"{config.max_positions}; window the passage first")
    pad_mask = np.asarray(pad_mask, dtype=bool)
    pos = T.embedding(params["pos_emb"], np.broadcast_to(np.arange(L), (B, L)))
    x = _dropout(T.add(emb, pos), config, dropout_rng)
    for i in range(config.layers):
        x = T.add(x, _attention(params, f"layer{i}.attn", x, pad_mask, config, dropout_rng))
        x = T.add(x, _ffn(params, f"layer{i}.ffn", x, config, dropout_rng))
    return T.layer_norm(x, params["final.ln_g"], params["final.ln_bias"])


def encode(params, config, token_ids, pad_mask=None, dropout_rng=None):
    """Encode a batch of token id sequences (B, L) to states (B, L, d)."""
    token_ids = np.asarray(token_ids, dtype=np.int64)
    if token_ids.ndim == 1:
        token_ids = token_ids[None, :]
    if pad_mask is None:
        pad_mask = np.ones(token_ids.shape, dtype=bool)
    emb = T.embedding(params["tok_emb"], token_ids)
    return encode_from_embeddings(params, config, emb, pad_mask, dropout_rng)


# ---------------------------------------------------------------------------
# Hidden-state interchange
# ---------------------------------------------------------------------------

def export_hidden_states(hs: HiddenStates, path):
    """JSON container {rows, dim, blank_index, values row-major}.  JSON
    floats use shortest round-trippable repr, so the round trip is exact."""
    states = np.asarray(hs.states, dtype=np.float64)
    doc = {
        "rows": int(states.shape[0]),
        "dim": int(states.shape[1]),
        "blank_index": int(hs.blank_index),
        "values": states.reshape(-1).tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def import_hidden_states(path, expected_dim=None) -> HiddenStates:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    rows, dim = int(doc["rows"]), int(doc["dim"])
    values = np.array(doc["values"], dtype=np.float64)
    if values.size != rows * dim:
        raise ValueError(f"hidden-state file: {values.size} values for "
                         f"{rows}x{dim} matrix")
    if expected_dim is not None and dim != expected_dim:
        raise ValueError(f"hidden-state dimension {dim} != configured {expected_dim}")
    return HiddenStates(values.reshape(rows, dim), int(doc["blank_index"]))


def config_to_dict(config: EncoderConfig):
    return asdict(config)


def config_from_dict(d) -> EncoderConfig:
    return EncoderConfig(**d)
