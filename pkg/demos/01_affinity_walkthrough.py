# Co-stack affinity on a toy pair, step by step.
# Run: python3 demos/01_affinity_walkthrough.py

import numpy as np

from csran.cafe import StackedStates
from csran.csra import bidir_align, concat_stack, costack_affinity
from csran.tensor import Tensor

# %%
# Two "encoder layers" per sentence. Sentence A has 3 words, B has 2;
# each layer state is 2-dimensional to keep the numbers readable.
a_layers = [np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]),
            np.array([[0.0, 1.0], [1.0, 1.0], [0.0, 0.0]])]
b_layers = [np.array([[1.0, 0.0], [0.0, 0.2]]),
            np.array([[2.0, 0.0], [0.0, 3.0]])]

stack_a = StackedStates([Tensor(x[None]) for x in a_layers], np.ones((1, 3)))
stack_b = StackedStates([Tensor(x[None]) for x in b_layers], np.ones((1, 2)))

# %%
# Every cell keeps the best of the 2 x 2 layer pairings.
S = costack_affinity(stack_a, stack_b)
print("scores\n", S.scores.data[0])
print("winning (layer of A, layer of B) per cell")
for i, row in enumerate(S.argmax_pq[0]):
    print(" ", i, [tuple(int(v) for v in pq) for pq in row])

# %%
# Compare with the last-layer-only affinity a plain stacked model would use.
last = a_layers[-1] @ b_layers[-1].T
print("last layer only\n", last)
print("cells where a lower layer wins:", int((S.scores.data[0] > last).sum()))

# %%
# Alignment: each word of A gets a softmax-weighted summary of B and vice versa.
b_bar, a_bar = bidir_align(concat_stack(stack_a), concat_stack(stack_b), S)
print("B summarised for each word of A\n", np.round(b_bar.data[0], 3))
print("A summarised for each word of B\n", np.round(a_bar.data[0], 3))
