"""Desk-scale BERT-style encoder with gated external word-embedding injection."""

from .autodiff import (
    AdamState,
    ComputationGraph,
    Tensor,
    adam_step,
    backward,
    grad_check,
    zero_grad,
)
from .datasets import Instance, load_dataset_tsv
from .embeddings import (
    EmbeddingStore,
    PairLexicon,
    load_embeddings,
    load_lexicon,
    lookup,
    partition_instances,
)
from .evaluation import (
    EvalReport,
    GateSnapshot,
    detect_failed_run,
    evaluate,
    export_gate_snapshot,
    f1_binary,
    lexical_overlap,
    non_obvious_f1,
    seed_average,
)
from .model import (
    ModelConfig,
    count_injection_params,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .synth import SynthSpec, audit_files, generate, write_files
from .tokenization import (
    InjectionSequence,
    WordPieceSequence,
    WordPieceVocab,
    build_injection_sequence,
    encode_pair,
    pack_pair,
    pre_tokenize,
    wordpiece_tokenize,
)
from .training import PairClassifier, TrainConfig, TrainResult, train

__version__ = "0.1.0"
