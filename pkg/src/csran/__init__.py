"""Sentence-pair matching with co-stacked residual affinity, on numpy.

The package carries its own small reverse-mode autodiff engine
(:mod:`csran.tensor`), the layers built on it, the CAFE refinement block,
the co-stack affinity and alignment stage, data handling, training and
a command-line front end.
"""

from .checks import check_model, tiny_setup
from .data import (
    Batch, RawPair, Vocab, build_char_vocab, build_vocab, encode_pairs, gen_synthetic, load_embeddings,
    make_batches, read_pairs, write_pairs,
)
from .errors import (
    ConfigError, ContractError, CsranError, DataError, DegenerateSliceError, DimensionError, FormatError,
    TrainingError, VocabularyError,
)
from .metrics import accuracy, f1_binary, map_mrr, recall_at_k, report
from .model import CsranModel, ModelConfig, cross_entropy, load_checkpoint, predict, save_checkpoint
from .tensor import Parameter, Tensor, backward, grad_check, no_grad
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"
