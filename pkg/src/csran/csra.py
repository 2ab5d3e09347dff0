"""Co-stack residual affinity, bidirectional alignment, matching and pooling.

The affinity between word i of A and word j of B is the largest dot
product found between any encoder layer of A and any encoder layer of B,
so a strong match at any depth of the hierarchy survives to the
alignment step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .cafe import StackedStates
from .errors import DimensionError
from .layers import BiLSTM, Module, expand_mask, run_pair
from .tensor import Tensor

FUSIONS = ("max", "sum", "mean")


@dataclass
class AffinityMatrix:
    """Word-pair affinity scores with the winning layer pair of every cell.

    ``scores`` stays finite everywhere so it can be differentiated;
    :meth:`masked_scores` gives the view with padded cells at ``-inf``.
    ``argmax_pq[..., i, j]`` is ``(p, q)``: layer p of A against layer q of B.
    """

    scores: Tensor
    argmax_pq: np.ndarray
    mask_a: np.ndarray = field(repr=False)
    mask_b: np.ndarray = field(repr=False)

    def pair_mask(self) -> np.ndarray:
        return (self.mask_a[..., :, None] > 0) & (self.mask_b[..., None, :] > 0)

    def masked_scores(self) -> np.ndarray:
        return np.where(self.pair_mask(), self.scores.data, -np.inf)


def costack_affinity(stack_a: StackedStates, stack_b: StackedStates, fusion="max") -> AffinityMatrix:
    """``s_ij = max_{p,q} a_{p,i} . b_{q,j}`` over all k_a x k_b layer pairs.

    Pairs are enumerated p-major, so among tied pairs the smallest p, then
    the smallest q, wins and receives the gradient. ``fusion="sum"`` or
    ``"mean"`` replaces the max for experiments.
    """
    if not stack_a.layers or not stack_b.layers:
        raise DimensionError("co-stack affinity needs at least one layer per side")
    width = stack_a.layers[0].shape[-1]
    for layer in stack_a.layers + stack_b.layers:
        if layer.shape[-1] != width:
            raise DimensionError(f"stacked layers differ in width: {width} vs {layer.shape[-1]}")
    if fusion not in FUSIONS:
        raise ValueError(f"unknown fusion {fusion!r}; expected one of {FUSIONS}")
    kb = len(stack_b.layers)
    products = [
        T.matmul(a, T.transpose_last(b)) for a in stack_a.layers for b in stack_b.layers
    ]
    if len(products) == 1:
        scores, best = products[0], np.zeros(products[0].shape, dtype=int)
    else:
        cube = T.stack(products, axis=-3)
        if fusion == "max":
            scores, best = T.max(cube, axis=-3), T.argmax(cube, axis=-3)
        else:
            scores = T.sum(cube, axis=-3) if fusion == "sum" else T.mean(cube, axis=-3)
            best = None
    if best is None:
        argmax_pq = np.full(scores.shape + (2,), -1)
    else:
        argmax_pq = np.stack([best // kb, best % kb], axis=-1)
    return AffinityMatrix(scores, argmax_pq, np.asarray(stack_a.mask), np.asarray(stack_b.mask))


def concat_stack(stack: StackedStates) -> Tensor:
    """Concatenate the k layers per position: ``(..., length, k * 2h)``."""
    if not stack.layers:
        raise DimensionError("cannot concatenate an empty stack")
    if len(stack.layers) == 1:
        return stack.layers[0]
    return T.concat(stack.layers, axis=-1)


def bidir_align(A: Tensor, B: Tensor, affinity: AffinityMatrix):
    """Softmax-weighted summaries driven by the affinity matrix.

    Returns ``(b_bar, a_bar)``: ``b_bar[i]`` summarises B for position i of
    A (rows of S normalised over B), ``a_bar[j]`` summarises A for position
    j of B (columns normalised over A). Padded rows of the outputs are zero.
    """
    S = affinity.scores
    if S.shape[-2:] != (A.shape[-2], B.shape[-2]):
        raise DimensionError(f"affinity {S.shape} does not match lengths {A.shape[-2]}, {B.shape[-2]}")
    mask_a, mask_b = affinity.mask_a, affinity.mask_b
    row_w = T.softmax(S, axis=-1, mask=mask_b[..., None, :] > 0)
    col_w = T.softmax(S, axis=-2, mask=mask_a[..., :, None] > 0)
    b_bar = T.matmul(row_w, B)
    a_bar = T.matmul(T.transpose_last(col_w), A)
    return b_bar * expand_mask(mask_a, b_bar), a_bar * expand_mask(mask_b, a_bar)


def matching_vector(x: Tensor, aligned: Tensor) -> Tensor:
    """``[aligned - x, aligned * x, aligned, x]`` per position (width 4w)."""
    if x.shape != aligned.shape:
        raise DimensionError(f"cannot match {x.shape} against {aligned.shape}")
    return T.concat([aligned - x, aligned * x, aligned, x], axis=-1)


class Aggregator(Module):
    """Stack of BiLSTMs run over the matching vectors of both sides."""

    def __init__(self, in_dim, hidden, depth, rng, dtype=np.float32):
        self.layers = [BiLSTM(in_dim if i == 0 else 2 * hidden, hidden, rng, dtype) for i in range(depth)]

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def __call__(self, x: Tensor, mask) -> Tensor:
        for layer in self.layers:
            x = layer(x, mask)
        return x


def match_aggregate(A: Tensor, b_bar: Tensor, B: Tensor, a_bar: Tensor, mask_a, mask_b, aggregator: Aggregator):
    """Build matching vectors for both sides and run the shared aggregator."""
    return run_pair(aggregator, matching_vector(A, b_bar), matching_vector(B, a_bar), mask_a, mask_b)


def pool_features(A: Tensor, B: Tensor, mask_a, mask_b) -> Tensor:
    """``z = [sum_i A_i ; sum_j B_j]`` over unmasked positions."""
    sa = T.sum(A * expand_mask(mask_a, A), axis=-2)
    sb = T.sum(B * expand_mask(mask_b, B), axis=-2)
    return T.concat([sa, sb], axis=-1)


def dump_affinity(path, affinity: AffinityMatrix, index=None):
    """Write S and the winning layer pairs as tab-separated row-major text.

    ``index`` picks one pair out of a batched matrix. Padded cells are
    written as ``-inf``; argmax cells as ``p,q``.
    """
    scores = affinity.masked_scores()
    pq = affinity.argmax_pq
    if index is not None:
        scores, pq = scores[index], pq[index]
    if scores.ndim != 2:
        raise DimensionError("dump needs a single (la, lb) matrix; pass index for batches")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# scores {scores.shape[0]}x{scores.shape[1]}\n")
        for row in scores:
            fh.write("\t".join(repr(float(v)) for v in row) + "\n")
        fh.write("# argmax_pq\n")
        for row in pq:
            fh.write("\t".join(f"{p},{q}" for p, q in row) + "\n")


def load_affinity_dump(path):
    """Read back a :func:`dump_affinity` file as ``(scores, argmax_pq)`` arrays."""
    scores, pairs, section = [], [], None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# scores"):
                section = scores
            elif line.startswith("# argmax_pq"):
                section = pairs
            elif line:
                section.append(line.split("\t"))
    s = np.array([[float(v) for v in row] for row in scores])
    pq = np.array([[[int(t) for t in cell.split(",")] for cell in row] for row in pairs])
    return s, pq
