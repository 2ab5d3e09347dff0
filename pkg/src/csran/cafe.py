"""Compare-align-factorize blocks and multi-level attention refinement.

A CAFE block soft-aligns two sequences, compresses three matching vectors
(concatenation, product, difference) into scalars with factorization
machines, repeats the same with each sequence aligned to itself, and
appends the six scalars to every position.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .layers import BiLSTM, Dense, Module, dropout, expand_mask, glorot_uniform, run_pair
from .tensor import Parameter, Tensor


def fm_eval(x: Tensor, w0: Tensor, w: Tensor, v: Tensor) -> Tensor:
    """Factorization machine over the last axis of ``x``.

    ``w0 + x.w + sum_{i<j} <v_i, v_j> x_i x_j``, with the pairwise term
    computed in O(n k) as ``0.5 * sum_f ((x v)_f^2 - (x^2)(v^2)_f)``.
    Returns one scalar per leading index.
    """
    if x.shape[-1] != w.shape[0] or v.shape[0] != w.shape[0]:
        raise DimensionError(f"FM of size {w.shape[0]} cannot take input {x.shape}")
    lead = x.shape[:-1]
    x2 = T.reshape(x, (-1, x.shape[-1]))
    linear = T.matmul(x2, T.reshape(w, (-1, 1)))
    xv = T.matmul(x2, v)
    pair = T.sum(xv * xv - T.matmul(x2 * x2, v * v), axis=-1, keepdims=True) * 0.5
    return T.reshape(linear + pair + w0, lead)


class FactorizationMachine(Module):
    def __init__(self, n, factors, rng, dtype=np.float32):
        self.w0 = Parameter(np.zeros((), dtype=dtype))
        self.w = Parameter(glorot_uniform(rng, (n,), dtype, fan=(n, 1)))
        self.v = Parameter(glorot_uniform(rng, (n, factors), dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return fm_eval(x, self.w0, self.w, self.v)


def score_align(A: Tensor, B: Tensor, project=None) -> Tensor:
    """Alignment scores ``E_ij = F(a_i) . F(b_j)``; ``project=None`` means F = identity."""
    if A.shape[-1] != B.shape[-1]:
        raise DimensionError(f"cannot align widths {A.shape} and {B.shape}")
    fa = A if project is None else project(A)
    fb = B if project is None else project(B)
    return T.matmul(fa, T.transpose_last(fb))


def soft_align(E: Tensor, A: Tensor, B: Tensor, mask_a=None, mask_b=None):
    """Attend across an alignment score matrix.

    Returns ``(A_to_B, B_to_A)``: ``A_to_B[j] = sum_i softmax_i(E[:, j]) A[i]``
    summarises A for every position of B, ``B_to_A[i]`` summarises B for
    every position of A. Padded keys receive zero weight.
    """
    mask_a = np.ones(A.shape[:-1]) if mask_a is None else np.asarray(mask_a)
    mask_b = np.ones(B.shape[:-1]) if mask_b is None else np.asarray(mask_b)
    row_w = T.softmax(E, axis=-1, mask=mask_b[..., None, :] > 0)
    col_w = T.softmax(E, axis=-2, mask=mask_a[..., :, None] > 0)
    b_to_a = T.matmul(row_w, B)
    a_to_b = T.matmul(T.transpose_last(col_w), A)
    return a_to_b, b_to_a


def matching_vectors(x: Tensor, aligned: Tensor):
    """The three CAFE matching vectors ``[aligned; x]``, ``aligned * x``, ``aligned - x``."""
    return T.concat([aligned, x], axis=-1), aligned * x, aligned - x


class CafeBlock(Module):
    """One CAFE block for sequences of width ``dim``; output width ``dim + 6``.

    The inter- and intra-attention paths each own a projection F and
    three factorization machines. Both sequences of a pair use the same
    parameters.
    """

    def __init__(self, dim, rng, factors=4, dtype=np.float32):
        self.dim = dim
        self.inter_proj = Dense(dim, dim, rng, "relu", dtype)
        self.inter_fm = [
            FactorizationMachine(2 * dim, factors, rng, dtype),
            FactorizationMachine(dim, factors, rng, dtype),
            FactorizationMachine(dim, factors, rng, dtype),
        ]
        self.intra_proj = Dense(dim, dim, rng, "relu", dtype)
        self.intra_fm = [
            FactorizationMachine(2 * dim, factors, rng, dtype),
            FactorizationMachine(dim, factors, rng, dtype),
            FactorizationMachine(dim, factors, rng, dtype),
        ]

    @staticmethod
    def _compress(fms, x, aligned) -> Tensor:
        feats = [fm(vec) for fm, vec in zip(fms, matching_vectors(x, aligned))]
        return T.stack(feats, axis=-1)

    def inter_features(self, x: Tensor, aligned: Tensor) -> Tensor:
        """Three FM scalars per position from ``x`` and its cross-aligned counterpart."""
        return self._compress(self.inter_fm, x, aligned)

    def intra_features(self, x: Tensor, mask=None) -> Tensor:
        """Three FM scalars per position from ``x`` aligned against itself."""
        E = score_align(x, x, self.intra_proj)
        _, self_aligned = soft_align(E, x, x, mask, mask)
        return self._compress(self.intra_fm, x, self_aligned)

    def __call__(self, A: Tensor, B: Tensor, mask_a=None, mask_b=None):
        if A.shape[-1] != self.dim or B.shape[-1] != self.dim:
            raise DimensionError(f"CAFE block of width {self.dim} got {A.shape} and {B.shape}")
        mask_a = np.ones(A.shape[:-1]) if mask_a is None else np.asarray(mask_a)
        mask_b = np.ones(B.shape[:-1]) if mask_b is None else np.asarray(mask_b)
        E = score_align(A, B, self.inter_proj)
        a_to_b, b_to_a = soft_align(E, A, B, mask_a, mask_b)
        out = []
        for x, aligned, m in ((A, b_to_a, mask_a), (B, a_to_b, mask_b)):
            feats = T.concat([self.inter_features(x, aligned), self.intra_features(x, m)], axis=-1)
            feats = feats * expand_mask(m, feats)
            out.append(T.concat([x, feats], axis=-1))
        return out[0], out[1]


@dataclass
class StackedStates:
    """Per-layer encoder outputs for one sequence, each ``(..., length, 2h)``."""

    layers: list
    mask: np.ndarray = field(repr=False)

    @property
    def depth(self):
        return len(self.layers)


class StackedEncoder(Module):
    """``k`` BiLSTM layers with optional CAFE refinement between them.

    With refinement on, a CAFE block follows every layer but the last and
    widens the sequence to ``2h + 6``; the next BiLSTM maps it back to 2h.
    """

    def __init__(self, in_dim, hidden, depth, rng, use_mar=True, factors=4, dtype=np.float32):
        if depth < 1:
            raise ConfigError("stack_depth", f"must be at least 1, got {depth}")
        width = 2 * hidden + (6 if use_mar else 0)
        self.layers = [BiLSTM(in_dim if i == 0 else width, hidden, rng, dtype) for i in range(depth)]
        self.cafe = [CafeBlock(2 * hidden, rng, factors, dtype) for _ in range(depth - 1)] if use_mar else []
        self.use_mar = use_mar

    def __call__(self, A, B, mask_a, mask_b, dropout_rate=0.0, training=False, rng=None):
        return mar_encode(A, B, mask_a, mask_b, self, dropout_rate, training, rng)


def mar_encode(A: Tensor, B: Tensor, mask_a, mask_b, encoder: StackedEncoder,
               dropout_rate=0.0, training=False, rng=None):
    """Encode a pair through the stack; returns one StackedStates per side."""
    mask_a, mask_b = np.asarray(mask_a), np.asarray(mask_b)
    states_a, states_b = [], []
    for depth, rnn in enumerate(encoder.layers):
        A, B = run_pair(rnn, A, B, mask_a, mask_b)
        states_a.append(A)
        states_b.append(B)
        if depth == len(encoder.layers) - 1:
            break
        A = dropout(A, dropout_rate, training, rng)
        B = dropout(B, dropout_rate, training, rng)
        if encoder.use_mar:
            A, B = encoder.cafe[depth](A, B, mask_a, mask_b)
    return StackedStates(states_a, mask_a), StackedStates(states_b, mask_b)
