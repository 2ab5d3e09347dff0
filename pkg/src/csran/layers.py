"""Reusable neural layers: embeddings, dense, highway, dropout and BiLSTM.

Sequences are laid out as ``(..., length, width)`` with a companion binary
mask of shape ``(..., length)``. Masks must be right-padded: a prefix of
ones followed by zeros.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, DimensionError, VocabularyError
from .tensor import Parameter, Tensor


def glorot_uniform(rng: np.random.Generator, shape, dtype=np.float32, fan=None):
    """Glorot/Xavier uniform initialisation."""
    fan_in, fan_out = fan if fan is not None else (shape[0], shape[-1])
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Module:
    """Container that discovers parameters and sub-modules from attributes."""

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{prefix}{key}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def check_mask(mask) -> np.ndarray:
    """Validate a right-padded binary mask and return it as float array."""
    mask = np.asarray(mask)
    if mask.size and not ((mask == 0) | (mask == 1)).all():
        raise DataError("mask must be binary")
    if mask.shape[-1] > 1 and (np.diff(mask, axis=-1) > 0).any():
        raise DataError("mask must be a prefix of ones (right padding only)")
    return mask.astype(np.float64)


def expand_mask(mask, x: Tensor) -> np.ndarray:
    """Broadcast a ``(..., length)`` mask over the feature axis of ``x``."""
    return np.broadcast_to(np.asarray(mask, dtype=x.dtype)[..., None], x.shape)


class Dense(Module):
    def __init__(self, in_dim, out_dim, rng, activation=None, dtype=np.float32):
        self.weight = Parameter(glorot_uniform(rng, (in_dim, out_dim), dtype))
        self.bias = Parameter(np.zeros(out_dim, dtype=dtype))
        self.activation = activation
        self.in_dim, self.out_dim = in_dim, out_dim

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"dense layer expects width {self.in_dim}, got {x.shape}")
        y = T.matmul(x, self.weight) + self.bias
        if self.activation == "relu":
            return T.relu(y)
        if self.activation == "tanh":
            return T.tanh(y)
        return y


class Embedding(Module):
    """Lookup table whose row 0 is the all-zero padding vector.

    Row 0 is always frozen; ``frozen`` can mark further rows (pretrained
    vectors) that the optimizer must leave untouched.
    """

    def __init__(self, num, dim, rng, dtype=np.float32, init=None, frozen=None):
        table = glorot_uniform(rng, (num, dim), dtype) if init is None else np.array(init, dtype=dtype)
        if table.shape != (num, dim):
            raise DimensionError(f"embedding init has shape {table.shape}, expected {(num, dim)}")
        table[0] = 0.0
        rows = np.zeros(num, dtype=bool) if frozen is None else np.array(frozen, dtype=bool)
        rows[0] = True
        self.table = Parameter(table, frozen_rows=rows)

    @property
    def dim(self):
        return self.table.shape[1]

    def __call__(self, ids) -> Tensor:
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.table.shape[0]):
            raise VocabularyError(f"id out of range [0, {self.table.shape[0]})")
        return T.take(self.table, ids)


class Highway(Module):
    """Stack of highway layers ``t * relu(W x + b) + (1 - t) * x``.

    The transform gate ``t = sigmoid(W_t x + b_t)`` starts with bias -1 so
    fresh layers lean toward passing their input through.
    """

    def __init__(self, dim, rng, depth=2, dtype=np.float32, gate_bias=-1.0):
        self.dim = dim
        self.transform = [Dense(dim, dim, rng, "relu", dtype) for _ in range(depth)]
        self.gate = [Dense(dim, dim, rng, None, dtype) for _ in range(depth)]
        for g in self.gate:
            g.bias.data[:] = gate_bias

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise DimensionError(f"highway expects width {self.dim}, got {x.shape}")
        for transform, gate in zip(self.transform, self.gate):
            t = T.sigmoid(gate(x))
            x = t * transform(x) + (1.0 - t) * x
        return x


def dropout(x: Tensor, rate, training, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError("dropout", f"rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout", "training-mode dropout needs a random generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep


# -- recurrence -----------------------------------------------------------------
def lstm_scan(inputs: Tensor, recurrent: Tensor, mask, reverse=False) -> Tensor:
    """Run the LSTM recurrence over pre-projected inputs.

    ``inputs`` holds ``x_t W + b`` with shape ``(batch, length, 4h)`` and gate
    order (input, forget, cell, output). Masked steps zero both the cell
    and the hidden state, so nothing leaks across padding and padded
    outputs are exactly zero. The whole scan is a single graph node with a
    hand-written backward pass.
    """
    xp = inputs.data
    U = recurrent.data
    batch, length, four_h = xp.shape
    h = four_h // 4
    dt = np.result_type(xp, U)
    m = np.asarray(mask, dtype=dt).reshape(batch, length, 1)
    steps = range(length - 1, -1, -1) if reverse else range(length)

    h_prev = np.zeros((batch, h), dtype=dt)
    c_prev = np.zeros((batch, h), dtype=dt)
    out = np.zeros((batch, length, h), dtype=dt)
    cache = []
    for t in steps:
        gates = xp[:, t] + h_prev @ U
        s = T._sigmoid(gates)
        i, f, o = s[:, :h], s[:, h:2 * h], s[:, 3 * h:]
        g = np.tanh(gates[:, 2 * h:3 * h])
        c = (f * c_prev + i * g) * m[:, t]
        tc = np.tanh(c)
        h_new = o * tc
        out[:, t] = h_new
        cache.append((t, i, f, g, o, c_prev, h_prev, tc))
        h_prev, c_prev = h_new, c

    def _bw(grad):
        d_xp = np.zeros_like(xp)
        d_U = np.zeros_like(U)
        dh_next = np.zeros((batch, h), dtype=dt)
        dc_next = np.zeros((batch, h), dtype=dt)
        for t, i, f, g, o, cp, hp, tc in reversed(cache):
            dh = grad[:, t] + dh_next
            do = dh * tc
            dc = (dc_next + dh * o * (1.0 - tc * tc)) * m[:, t]
            dgates = np.concatenate(
                [dc * g * i * (1.0 - i), dc * cp * f * (1.0 - f), dc * i * (1.0 - g * g), do * o * (1.0 - o)],
                axis=1,
            )
            d_xp[:, t] = dgates
            d_U += hp.T @ dgates
            dh_next = dgates @ U.T
            dc_next = dc * f
        return d_xp, d_U

    return Tensor.from_op(out, (inputs, recurrent), _bw)


class LSTM(Module):
    """One direction of an LSTM layer."""

    def __init__(self, in_dim, hidden, rng, dtype=np.float32, reverse=False):
        self.input_weight = Parameter(glorot_uniform(rng, (in_dim, 4 * hidden), dtype, fan=(in_dim, hidden)))
        self.recurrent_weight = Parameter(glorot_uniform(rng, (hidden, 4 * hidden), dtype, fan=(hidden, hidden)))
        self.bias = Parameter(np.zeros(4 * hidden, dtype=dtype))
        self.in_dim, self.hidden, self.reverse = in_dim, hidden, reverse

    def __call__(self, x: Tensor, mask) -> Tensor:
        lead = x.shape[:-2]
        length = x.shape[-2]
        flat = T.reshape(x, (-1, length, x.shape[-1]))
        proj = T.matmul(flat, self.input_weight) + self.bias
        out = lstm_scan(proj, self.recurrent_weight, np.reshape(mask, (-1, length)), self.reverse)
        return T.reshape(out, lead + (length, self.hidden))


class BiLSTM(Module):
    """Bidirectional LSTM returning ``[forward ; backward]`` states (width 2h)."""

    def __init__(self, in_dim, hidden, rng, dtype=np.float32):
        self.forward = LSTM(in_dim, hidden, rng, dtype)
        self.backward = LSTM(in_dim, hidden, rng, dtype, reverse=True)
        self.in_dim, self.hidden = in_dim, hidden

    @property
    def out_dim(self):
        return 2 * self.hidden

    def __call__(self, x: Tensor, mask) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"BiLSTM expects width {self.in_dim}, got {x.shape}")
        mask = check_mask(mask)
        if mask.shape != x.shape[:-1]:
            raise DimensionError(f"mask shape {mask.shape} does not match input {x.shape}")
        return T.concat([self.forward(x, mask), self.backward(x, mask)], axis=-1)


class CharEncoder(Module):
    """Character-level word representation.

    Characters of each word run through a BiLSTM; the final forward and
    final backward states are concatenated and projected to ``out_dim``.
    """

    def __init__(self, num_chars, char_dim, hidden, out_dim, rng, dtype=np.float32):
        self.embedding = Embedding(num_chars, char_dim, rng, dtype)
        self.rnn = BiLSTM(char_dim, hidden, rng, dtype)
        self.project = Dense(2 * hidden, out_dim, rng, None, dtype)
        self.hidden = hidden

    def final_states(self, char_ids, word_mask=None) -> Tensor:
        """Concatenated final BiLSTM states, shape ``(..., words, 2h)``."""
        char_ids = np.asarray(char_ids)
        cmask = (char_ids != 0).astype(np.float64)
        lengths = cmask.sum(-1)
        if word_mask is not None:
            empty = (np.asarray(word_mask) > 0) & (lengths == 0)
            if empty.any():
                raise DataError("a non-padding word has no characters")
        states = self.rnn(self.embedding(char_ids), cmask)
        h = self.hidden
        # last real character per word; all-padding words select nothing
        last = np.zeros(cmask.shape + (1,), dtype=states.dtype)
        idx = np.maximum(lengths.astype(int) - 1, 0)
        np.put_along_axis(last, idx[..., None, None], (lengths > 0)[..., None, None].astype(states.dtype), axis=-2)
        fwd = T.sum(states[..., :h] * np.broadcast_to(last, states.shape[:-1] + (h,)).copy(), axis=-2)
        bwd = states[..., 0, h:]
        return T.concat([fwd, bwd], axis=-1)

    def __call__(self, char_ids, word_mask=None) -> Tensor:
        return self.project(self.final_states(char_ids, word_mask))


def _pad_length(x: Tensor, mask: np.ndarray, length: int):
    extra = length - x.shape[-2]
    if extra == 0:
        return x, mask
    zeros = Tensor(np.zeros(x.shape[:-2] + (extra, x.shape[-1]), dtype=x.dtype))
    pad = np.zeros(mask.shape[:-1] + (extra,), dtype=mask.dtype)
    return T.concat([x, zeros], axis=-2), np.concatenate([mask, pad], axis=-1)


def run_pair(layer, A: Tensor, B: Tensor, mask_a, mask_b):
    """Apply one sequence layer to both sides as a single batch.

    The shorter side is right-padded to the common length; since masked
    steps never influence real ones, the result equals two separate calls.
    """
    mask_a, mask_b = np.asarray(mask_a), np.asarray(mask_b)
    la, lb = A.shape[-2], B.shape[-2]
    length = max(la, lb)
    A, ma = _pad_length(A, mask_a, length)
    B, mb = _pad_length(B, mask_b, length)
    n = A.shape[0]
    out = layer(T.concat([A, B], axis=0), np.concatenate([ma, mb], axis=0))
    return out[:n, :la], out[n:, :lb]
