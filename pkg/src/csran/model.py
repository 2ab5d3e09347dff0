"""The full co-stack residual affinity network.

Pipeline: word (+ character) embeddings -> optional highway -> stacked
BiLSTMs with CAFE refinement -> co-stack affinity -> bidirectional
alignment -> matching + aggregation BiLSTM -> sum pooling -> dense head.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .cafe import StackedEncoder, StackedStates
from .csra import Aggregator, bidir_align, concat_stack, costack_affinity, match_aggregate, pool_features
from .errors import ConfigError, DataError, FormatError
from .layers import CharEncoder, Dense, Embedding, Highway, Module, dropout
from .tensor import Tensor

# task kind -> number of classes; the last two are ranking formulations
TASK_KINDS = {"nli": 3, "binary": 2, "f1": 2, "ranking": 2, "response": 2}
RANKING_KINDS = ("ranking", "response")
CHECKPOINT_FORMAT = "csran-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    vocab_size: int = 100
    char_vocab_size: int = 50
    word_dim: int = 50
    use_char: bool = True
    char_dim: int = 16
    char_hidden: int = 16
    char_repr_dim: int = 0  # 0: same as word_dim
    encoder_hidden: int = 64
    stack_depth: int = 3
    agg_depth: int = 1
    agg_hidden: int = 0  # 0: same as encoder_hidden
    prediction_layers: int = 2
    prediction_hidden: int = 100
    num_classes: int = 3
    use_highway: bool = True
    highway_depth: int = 2
    use_mar: bool = True
    use_csra: bool = True
    fm_factor: int = 4
    dropout: float = 0.1
    precision: str = "float32"
    affinity_fusion: str = "max"

    def validate(self):
        positive = ("vocab_size", "word_dim", "encoder_hidden", "stack_depth", "agg_depth",
                    "prediction_hidden", "fm_factor", "highway_depth")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(name, f"must be at least 1, got {getattr(self, name)}")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size", "must include the padding and unknown rows")
        if self.use_char:
            for name in ("char_vocab_size", "char_dim", "char_hidden"):
                if getattr(self, name) < 1:
                    raise ConfigError(name, f"must be at least 1 when use_char is on, got {getattr(self, name)}")
        if self.num_classes < 2:
            raise ConfigError("num_classes", f"must be at least 2, got {self.num_classes}")
        if not 1 <= self.prediction_layers <= 3:
            raise ConfigError("prediction_layers", f"must lie in [1, 3], got {self.prediction_layers}")
        if self.agg_depth not in (1, 2):
            raise ConfigError("agg_depth", f"must be 1 or 2, got {self.agg_depth}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout", f"must lie in [0, 1), got {self.dropout}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision", f"must be float32 or float64, got {self.precision!r}")
        if self.affinity_fusion not in ("max", "sum", "mean"):
            raise ConfigError("affinity_fusion", f"unknown fusion {self.affinity_fusion!r}")
        return self

    @property
    def dtype(self):
        return np.dtype(self.precision)

    @classmethod
    def from_dict(cls, values):
        names = {f.name for f in fields(cls)}
        unknown = set(values) - names
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown model setting")
        return cls(**values)


class CsranModel(Module):
    """All parameter groups of the network; both sequences share every layer."""

    def __init__(self, config: ModelConfig, seed=0, pretrained=None):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        dt = config.dtype
        h = config.encoder_hidden
        agg_h = config.agg_hidden or h

        init = frozen = None
        if pretrained is not None:
            init, frozen = pretrained.table, pretrained.found
        self.word_emb = Embedding(config.vocab_size, config.word_dim, rng, dt, init=init, frozen=frozen)
        in_dim = config.word_dim
        self.char_enc = None
        if config.use_char:
            repr_dim = config.char_repr_dim or config.word_dim
            self.char_enc = CharEncoder(config.char_vocab_size, config.char_dim, config.char_hidden,
                                        repr_dim, rng, dt)
            in_dim += repr_dim
        self.highway = Highway(in_dim, rng, config.highway_depth, dt) if config.use_highway else None
        self.encoder = StackedEncoder(in_dim, h, config.stack_depth, rng, config.use_mar, config.fm_factor, dt)
        # alignment always runs over the concatenated stack, with or without CSRA
        self.aggregator = Aggregator(4 * config.stack_depth * 2 * h, agg_h, config.agg_depth, rng, dt)
        width = 2 * 2 * agg_h
        self.head = []
        for _ in range(config.prediction_layers):
            self.head.append(Dense(width, config.prediction_hidden, rng, "relu", dt))
            width = config.prediction_hidden
        self.head.append(Dense(width, config.num_classes, rng, None, dt))

    # -- pipeline stages --------------------------------------------------------
    def embed(self, words, chars, mask, training=False, rng=None) -> Tensor:
        x = self.word_emb(words)
        if self.char_enc is not None:
            x = T.concat([x, self.char_enc(chars, mask)], axis=-1)
        if self.highway is not None:
            x = self.highway(x)
        return dropout(x, self.config.dropout, training, rng)

    def encode(self, batch, training=False, rng=None):
        ea = self.embed(batch.a_words, batch.a_chars, batch.a_mask, training, rng)
        eb = self.embed(batch.b_words, batch.b_chars, batch.b_mask, training, rng)
        return self.encoder(ea, eb, batch.a_mask, batch.b_mask, self.config.dropout, training, rng)

    def affinity(self, stack_a: StackedStates, stack_b: StackedStates):
        if self.config.use_csra:
            return costack_affinity(stack_a, stack_b, self.config.affinity_fusion)
        last_a = StackedStates([stack_a.layers[-1]], stack_a.mask)
        last_b = StackedStates([stack_b.layers[-1]], stack_b.mask)
        return costack_affinity(last_a, last_b)

    def features(self, batch, training=False, rng=None, details=False):
        """Pooled feature vector z, shape ``(batch, 4 * agg_hidden)``."""
        stack_a, stack_b = self.encode(batch, training, rng)
        S = self.affinity(stack_a, stack_b)
        acat, bcat = concat_stack(stack_a), concat_stack(stack_b)
        b_bar, a_bar = bidir_align(acat, bcat, S)
        agg_a, agg_b = match_aggregate(acat, b_bar, bcat, a_bar, batch.a_mask, batch.b_mask, self.aggregator)
        z = pool_features(agg_a, agg_b, batch.a_mask, batch.b_mask)
        if details:
            return z, {"stack_a": stack_a, "stack_b": stack_b, "affinity": S}
        return z

    def forward(self, batch, training=False, rng=None) -> Tensor:
        """Pre-softmax class scores, shape ``(batch, num_classes)``."""
        x = self.features(batch, training, rng)
        for layer in self.head[:-1]:
            x = dropout(layer(x), self.config.dropout, training, rng)
        return self.head[-1](x)

    __call__ = forward


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy over the batch."""
    labels = np.asarray(labels)
    n_classes = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"labels must lie in [0, {n_classes})")
    onehot = np.eye(n_classes, dtype=logits.dtype)[labels]
    return -T.sum(T.log_softmax(logits, axis=-1) * onehot) * (1.0 / len(labels))


def predict(logits, task_kind="nli") -> np.ndarray:
    """Class ids for classification tasks, positive-class probability for ranking."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if task_kind in RANKING_KINDS:
        z = z - z.max(axis=-1, keepdims=True)
        p = np.exp(z)
        return p[..., 1] / p.sum(axis=-1)
    return np.argmax(z, axis=-1)


# -- checkpoints ----------------------------------------------------------------
def save_checkpoint(path, model: CsranModel, extra=None):
    """Write parameters plus a JSON manifest into one ``.npz`` container."""
    arrays, entries = {}, []
    for name, p in model.named_parameters():
        arrays[name] = p.data
        entries.append({"name": name, "shape": list(p.shape), "dtype": str(p.dtype)})
        if p.frozen_rows is not None:
            arrays["frozen::" + name] = p.frozen_rows
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "precision": model.config.precision,
        "config": asdict(model.config),
        "parameters": entries,
        "extra": extra or {},
    }
    arrays["__manifest__"] = np.array(json.dumps(manifest, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Rebuild a model from :func:`save_checkpoint`; returns ``(model, extra)``."""
    with np.load(path, allow_pickle=False) as blob:
        if "__manifest__" not in blob:
            raise FormatError(f"{path} has no manifest")
        manifest = json.loads(str(blob["__manifest__"]))
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise FormatError(f"{path} is not a checkpoint")
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {manifest.get('version')}")
        model = CsranModel(ModelConfig.from_dict(manifest["config"]))
        params = dict(model.named_parameters())
        for entry in manifest["parameters"]:
            name = entry["name"]
            if name not in params or list(params[name].shape) != entry["shape"]:
                raise FormatError(f"parameter {name} does not fit the configured model")
            params[name].data = blob[name].copy()
            if "frozen::" + name in blob:
                params[name].frozen_rows = blob["frozen::" + name].copy()
    return model, manifest["extra"]


def parameter_groups(model: CsranModel):
    """Parameters grouped by top-level component, e.g. ``encoder.cafe.0``."""
    groups = {}
    for name, p in model.named_parameters():
        parts = name.split(".")
        if parts[0] == "encoder" and len(parts) > 2:
            key = ".".join(parts[:3])
        elif parts[0] in ("head", "aggregator") and len(parts) > 2:
            key = ".".join(parts[:3]) if parts[0] == "aggregator" else ".".join(parts[:2])
        else:
            key = parts[0]
        groups.setdefault(key, []).append((name, p))
    return groups


__all__ = [
    "ModelConfig", "CsranModel", "cross_entropy", "predict", "save_checkpoint", "load_checkpoint",
    "parameter_groups", "TASK_KINDS", "RANKING_KINDS",
]
