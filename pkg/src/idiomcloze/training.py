"""Loss assembly, AdamW with decoupled weight decay, warmup-linear
schedule, and the training loop."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import corpus, model as M
from . import tensor as T

PROB_FLOOR = 1e-300

# Full-scale preset mirrors the reference fine-tuning recipe; desk preset
# is sized for CPU training on the synthetic language.
PRESETS = {
    "full": dict(lr=5e-5, warmup_steps=1000, epochs=5, batch_size=10),
    "desk": dict(lr=1e-3, warmup_steps=100, epochs=20, batch_size=32),
}


@dataclass
class TrainConfig:
    head: str = "cp-de"
    lr: float = 1e-3
    warmup_steps: int = 100
    epochs: int = 20
    batch_size: int = 32
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    seed: int = 42
    max_len: int = 128
    ec: bool | None = None      # None -> the head's default

    def validate(self, total_steps=None):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if total_steps is not None and self.warmup_steps >= total_steps:
            raise ValueError(
                f"warmup {self.warmup_steps} must be < total steps {total_steps}")
        return self

    def resolved_ec(self):
        from .heads import DEFAULT_EC
        return DEFAULT_EC[self.head] if self.ec is None else self.ec


@dataclass
class LossReport:
    nll_candidates: float
    nll_enlarged: float | None
    total: float
    clamped: bool = False


def nll_from_logits(logits, gold, clamp_flag):
    """-sum log softmax(logits)[gold], with probabilities floored at
    PROB_FLOOR; returns (scalar Tensor, clamped?)."""
    probs = T.softmax(logits, axis=-1)
    p_star = T.gather_last(probs, np.asarray(gold))
    clamped = bool((p_star.data < PROB_FLOOR).any())
    p_star = T.clamp_min(p_star, PROB_FLOOR)
    return T.scale(T.tsum(T.log(p_star)), -1.0), clamped or clamp_flag


def compute_loss(mdl: M.Model, batch: M.Batch, ec: bool, dropout_rng=None,
                 char_table=None, token_vocab=None):
    """Batch NLL over the candidate set, plus the enlarged-set NLL term
    when ec is on.  Returns (scalar loss Tensor, LossReport)."""
    cand_logits, enl_logits = M.forward_logits(
        mdl, batch, ec, dropout_rng, char_table=char_table, token_vocab=token_vocab)
    loss, clamped = nll_from_logits(cand_logits, batch.gold_index, False)
    nll_c = loss.item()
    nll_e = None
    if ec:
        loss_e, clamped = nll_from_logits(enl_logits, batch.gold_idiom, clamped)
        nll_e = loss_e.item()
        loss = T.add(loss, loss_e)
    return loss, LossReport(nll_c, nll_e, loss.item(), clamped)


def lr_at(step, lr_max, warmup_steps, total_steps):
    """Linear ramp 0 -> lr_max over warmup, then linear decay to 0."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step <= warmup_steps:
        return lr_max * step / max(1, warmup_steps)
    return lr_max * (total_steps - step) / max(1, total_steps - warmup_steps)


def _no_decay(name):
    return "bias" in name or "ln_g" in name


class AdamW:
    """Adaptive moments with decoupled weight decay; biases and layer-norm
    gains are excluded from the decay term."""

    def __init__(self, params, weight_decay=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self, lr):
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for n, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[n] = self.b1 * self.m[n] + (1 - self.b1) * g
            self.v[n] = self.b2 * self.v[n] + (1 - self.b2) * g * g
            update = (self.m[n] / bc1) / (np.sqrt(self.v[n] / bc2) + self.eps)
            if self.weight_decay and not _no_decay(n):
                update = update + self.weight_decay * p.data
            p.data = p.data - lr * update

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def clip_global_norm(params, max_norm):
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = np.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)     # {step, epoch, loss, lr}

    def record(self, step, epoch, loss_report: LossReport, lr):
        self.steps.append({"step": step, "epoch": epoch,
                           "loss": loss_report.total, "lr": lr,
                           "clamped": loss_report.clamped})


class TrainingAborted(RuntimeError):
    """Non-finite loss; carries a diagnostic dump of the offending batch."""

    def __init__(self, step, batch: M.Batch, cause):
        self.step = step
        self.batch_dump = {
            "example_ids": batch.example_ids,
            "gold_index": batch.gold_index.tolist(),
        }
        super().__init__(f"training aborted at step {step}: {cause}; "
                         f"batch={self.batch_dump}")


def fit(examples, token_vocab: corpus.TokenVocabulary,
        idiom_vocab: corpus.IdiomVocabulary, encoder_config,
        config: TrainConfig, start_model=None, start_step=0):
    """Train a model; deterministic under a fixed seed in single-threaded
    mode.  Returns (model, TrainLog)."""
    if not examples:
        raise ValueError("empty dataset")
    n_batches = (len(examples) + config.batch_size - 1) // config.batch_size
    total_steps = start_step + config.epochs * n_batches
    config.validate(total_steps=total_steps)

    encoder_config.vocab_size = len(token_vocab)
    mdl = start_model or M.build_model(encoder_config, config.head,
                                       len(idiom_vocab), seed=config.seed)
    ec = config.resolved_ec()
    opt = AdamW(mdl.params, weight_decay=config.weight_decay)
    log = TrainLog()
    char_table = (M.idiom_char_ids(idiom_vocab, token_vocab)
                  if config.head == "charseq" else None)
    max_len = M.window_budget(config.head, encoder_config.max_positions,
                              config.max_len)
    dropout_rng = (np.random.default_rng([config.seed, 7])
                   if encoder_config.dropout > 0 else None)

    step = start_step
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(examples))
        for b in range(n_batches):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            batch = M.make_batch([examples[i] for i in idx], token_vocab,
                                 max_len=max_len, head=config.head)
            step += 1
            try:
                loss, report = compute_loss(mdl, batch, ec, dropout_rng,
                                            char_table=char_table,
                                            token_vocab=token_vocab)
                opt.zero_grad()
                loss.backward()
            except T.NumericalError as exc:
                raise TrainingAborted(step, batch, exc) from exc
            clip_global_norm(mdl.params, config.clip_norm)
            lr = lr_at(step, config.lr, config.warmup_steps, total_steps)
            opt.step(lr)
            log.record(step, epoch, report, lr)
    return mdl, log


def train_config_to_dict(config: TrainConfig):
    return asdict(config)


def train_config_from_dict(d) -> TrainConfig:
    return TrainConfig(**d)
