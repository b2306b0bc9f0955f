"""Sklearn-style estimator facade over the cloze model.

``ClozeIdiomClassifier`` composes with the scikit-learn ecosystem:
``get_params`` / ``set_params`` / ``clone`` work, ``fit`` takes a list of
:class:`~idiomcloze.corpus.ClozeExample`, ``predict`` returns the chosen
candidate index per example and ``score`` is plain accuracy.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import corpus, metrics, model as M, training
from .encoder import EncoderConfig


def validate_examples(X, idiom_vocab=None):
    """Input validation: every element is a well-formed ClozeExample."""
    if not isinstance(X, (list, tuple)) or not X:
        raise ValueError("X must be a non-empty list of ClozeExample")
    size = len(idiom_vocab) if idiom_vocab is not None else None
    for ex in X:
        if not isinstance(ex, corpus.ClozeExample):
            raise TypeError(f"expected ClozeExample, got {type(ex).__name__}")
        ex.validate(vocab_size=size)
    return list(X)


class ClozeIdiomClassifier(ClassifierMixin, BaseEstimator):
    """Cloze idiom predictor with a configurable head variant.

    Parameters mirror the desk-scale training defaults; ``head`` selects
    among charseq / idm / idm-ec / cp / cp-de.
    """

    def __init__(self, head="cp-de", hidden_size=64, num_layers=2, num_heads=4,
                 ffn_size=256, max_len=128, learning_rate=1e-3, warmup_steps=100,
                 epochs=20, batch_size=32, weight_decay=0.01, seed=42):
        self.head = head
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.ffn_size = ffn_size
        self.max_len = max_len
        self.learning_rate = learning_rate
        self.warmup_steps = warmup_steps
        self.epochs = epochs
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.seed = seed

    def _encoder_config(self, vocab_size):
        return EncoderConfig(
            layers=self.num_layers, heads=self.num_heads,
            hidden_size=self.hidden_size, ffn_size=self.ffn_size,
            max_positions=self.max_len + 8, vocab_size=vocab_size,
            seed=self.seed)

    def fit(self, X, y=None, idiom_vocab=None):
        """Train on a list of ClozeExample.  ``y`` is ignored (golds live
        on the examples); pass ``idiom_vocab`` to pin id assignment,
        otherwise it is rebuilt from the candidate lists."""
        X = validate_examples(X)
        if idiom_vocab is None:
            idiom_vocab = corpus.IdiomVocabulary()
            # ids by first appearance; surfaces are unknown here, so use
            # the raw candidate ids as their own surface keys
            n = 1 + max(max(ex.candidates) for ex in X)
            for i in range(n):
                idiom_vocab.add(f"idiom-{i:05d}")
        self.idiom_vocab_ = idiom_vocab
        self.token_vocab_ = corpus.build_token_vocabulary(X, idiom_vocab)
        cfg = training.TrainConfig(
            head=self.head, lr=self.learning_rate,
            warmup_steps=self.warmup_steps, epochs=self.epochs,
            batch_size=self.batch_size, weight_decay=self.weight_decay,
            seed=self.seed, max_len=self.max_len)
        self.model_, self.train_log_ = training.fit(
            X, self.token_vocab_, self.idiom_vocab_,
            self._encoder_config(len(self.token_vocab_)), cfg)
        return self

    def predict_proba(self, X):
        """(n, K) candidate probabilities; requires equal K across X."""
        check_is_fitted(self, "model_")
        X = validate_examples(X, self.idiom_vocab_)
        max_len = M.window_budget(self.head, self.model_.encoder_config.max_positions,
                                  self.max_len)
        char_table = (M.idiom_char_ids(self.idiom_vocab_, self.token_vocab_)
                      if self.head == "charseq" else None)
        out = []
        with M.frozen(self.model_):
            for lo in range(0, len(X), 64):
                chunk = X[lo:lo + 64]
                batch = M.make_batch(chunk, self.token_vocab_, max_len=max_len,
                                     head=self.head)
                logits, _ = M.forward_logits(self.model_, batch, ec=False,
                                             char_table=char_table,
                                             token_vocab=self.token_vocab_)
                z = logits.data - logits.data.max(axis=1, keepdims=True)
                e = np.exp(z)
                out.append(e / e.sum(axis=1, keepdims=True))
        return np.vstack(out)

    def predict(self, X):
        """Chosen candidate index per example (ties to the lowest index)."""
        return np.argmax(self.predict_proba(X), axis=1)

    def score(self, X, y=None):
        """Accuracy against each example's gold index."""
        check_is_fitted(self, "model_")
        golds = [ex.gold_index for ex in X] if y is None else list(y)
        return metrics.accuracy(list(self.predict(X)), golds)

    def evaluate(self, X, split="eval"):
        check_is_fitted(self, "model_")
        return metrics.evaluate(self.model_, validate_examples(X), self.token_vocab_,
                                self.idiom_vocab_, split=split)
