"""Desk-scale laboratory for cloze-style idiom prediction: idiom
embedding heads with context pooling and dual embeddings, enlarged
candidate training, assignment-based group decoding and integrated
gradients attribution over a small self-contained encoder."""

from .corpus import (ClozeExample, IdiomVocabulary, TokenVocabulary,
                     CandidateGroup, SynthSpec, SyntheticWorld,
                     tokenize_window, load_dataset, save_dataset,
                     generate_synthetic)
from .encoder import EncoderConfig, HiddenStates, encode, init_params
from .estimator import ClozeIdiomClassifier
from .heads import CandidateDistribution, HEAD_VARIANTS
from .metrics import EvalReport, accuracy, mrr, evaluate
from .assignment import Assignment, solve_assignment, decode_group
from .attribution import AttributionReport, attribute_example, merge_to_words
from .training import TrainConfig, fit, lr_at
from .model import Model, build_model, save_checkpoint, load_checkpoint

__all__ = [
    "ClozeExample", "IdiomVocabulary", "TokenVocabulary", "CandidateGroup",
    "SynthSpec", "SyntheticWorld", "tokenize_window", "load_dataset",
    "save_dataset", "generate_synthetic", "EncoderConfig", "HiddenStates",
    "encode", "init_params", "ClozeIdiomClassifier", "CandidateDistribution",
    "HEAD_VARIANTS", "EvalReport", "accuracy", "mrr", "evaluate",
    "Assignment", "solve_assignment", "decode_group", "AttributionReport",
    "attribute_example", "merge_to_words", "TrainConfig", "fit", "lr_at",
    "Model", "build_model", "save_checkpoint", "load_checkpoint",
]

__version__ = "0.1.0"
