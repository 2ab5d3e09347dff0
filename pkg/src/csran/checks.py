"""Finite-difference audit of a whole model, one parameter group at a time."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .data import build_char_vocab, build_vocab, encode_pairs, gen_synthetic, make_batches
from .model import CsranModel, ModelConfig, cross_entropy, parameter_groups

# groups that sit upstream of the co-stack max get the looser tolerance
MAX_PATH_PREFIXES = ("word_emb", "char_enc", "highway", "encoder")
MAX_PATH_TOL = 1e-3
SMOOTH_TOL = 1e-5


@dataclass
class GroupResult:
    group: str
    size: int
    error: float
    tolerance: float

    @property
    def ok(self):
        return self.error <= self.tolerance

    def to_line(self):
        flag = "ok" if self.ok else "FAIL"
        return f"{self.group}\t{self.size}\t{self.error:.3e}\t{self.tolerance:.0e}\t{flag}"


def tolerance_for(group: str) -> float:
    return MAX_PATH_TOL if group.startswith(MAX_PATH_PREFIXES) else SMOOTH_TOL


def tiny_setup(config: ModelConfig | None = None, data_seed=3, init_seed=2, batch=2, max_len=5):
    """A small float64 model with dropout off plus one batch of synthetic pairs.

    The default seeds give an instance where no ReLU preactivation or
    layer-pair maximum lies within the finite-difference step of a switch,
    so central differences are meaningful everywhere.
    """
    raw = gen_synthetic("paraphrase", batch, data_seed, min_len=3, max_len=max_len)
    words, chars = build_vocab(raw), build_char_vocab(raw)
    if config is None:
        config = ModelConfig(word_dim=8, use_char=False, char_dim=4, char_hidden=3, encoder_hidden=6,
                             stack_depth=2, num_classes=2, prediction_hidden=8)
    config = replace(config, vocab_size=len(words), char_vocab_size=len(chars), precision="float64", dropout=0.0)
    model = CsranModel(config, seed=init_seed)
    (tiny_batch,) = make_batches(encode_pairs(raw, words, chars), batch)
    return model, tiny_batch


def check_model(model: CsranModel, batch, epsilon=1e-4, oracle_dtype=np.longdouble, on_group=None):
    """Worst relative error of every parameter group against its tolerance.

    Perturbed forwards run in ``oracle_dtype`` so that the difference
    quotient resolves gradients far below the 1e-8 relative-error floor.
    """
    def loss():
        return cross_entropy(model(batch), batch.labels)

    results = []
    for group, named in parameter_groups(model).items():
        params = [p for _, p in named]
        error = max(T.grad_check_errors(loss, params, epsilon, oracle_dtype), default=0.0)
        result = GroupResult(group, int(sum(p.size for p in params)), float(error), tolerance_for(group))
        results.append(result)
        if on_group is not None:
            on_group(result)
    return results
