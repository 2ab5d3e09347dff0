# What the two switches remove: parameter counts for the four variants,
# and the six CAFE features that the refinement blocks append.
# Run: python3 demos/03_ablation_parameters.py

import numpy as np

from csran import CsranModel, ModelConfig
from csran.cafe import CafeBlock
from csran.tensor import Tensor

base = dict(vocab_size=500, char_vocab_size=60, word_dim=50, encoder_hidden=64, stack_depth=3,
            num_classes=3, prediction_hidden=100)

# %%
print("variant   parameters")
for name, use_mar, use_csra in (("original", True, True), ("no_mar", False, True),
                                ("no_csra", True, False), ("no_both", False, False)):
    model = CsranModel(ModelConfig(use_mar=use_mar, use_csra=use_csra, **base))
    print(f"{name:9s} {model.num_parameters():10d}")
# The affinity itself has no weights, so turning it off leaves the count alone.

# %%
rng = np.random.default_rng(0)
block = CafeBlock(4, rng, dtype=np.float64)
A = Tensor(rng.standard_normal((1, 3, 4)))
B = Tensor(rng.standard_normal((1, 5, 4)))
out_a, out_b = block(A, B)
print("input width", A.shape[-1], "-> output width", out_a.shape[-1])
print("appended features for A (inter: concat, mul, sub; intra: concat, mul, sub)")
print(np.round(out_a.data[0, :, 4:], 4))
