# Train a small model on the synthetic paraphrase task, save it, reload it.
# Takes a few seconds on one core.
# Run: python3 demos/02_train_paraphrase.py

import tempfile
from pathlib import Path

from csran import (
    CsranModel, ModelConfig, TrainConfig, build_char_vocab, build_vocab, encode_pairs, evaluate,
    gen_synthetic, load_checkpoint, save_checkpoint, train,
)

# %%
train_raw = gen_synthetic("paraphrase", 200, seed=0)
dev_raw = gen_synthetic("paraphrase", 100, seed=1)
print(train_raw[0])
print(train_raw[1])

words, chars = build_vocab(train_raw), build_char_vocab(train_raw)
train_pairs = encode_pairs(train_raw, words, chars)
dev_pairs = encode_pairs(dev_raw, words, chars)
print(len(words), "word types,", len(chars), "character types")

# %%
config = ModelConfig(vocab_size=len(words), char_vocab_size=len(chars), word_dim=16, char_dim=8,
                     char_hidden=8, encoder_hidden=16, stack_depth=2, num_classes=2, prediction_hidden=32)
model = CsranModel(config, seed=0)
print(model.num_parameters(), "parameters")

result = train(model, train_pairs, dev_pairs, TrainConfig(epochs=10, batch_size=32),
               on_epoch=lambda r: print("epoch", r.epoch, "loss %.4f" % r.train_loss, "dev acc %.3f" % r.dev_metric))
print("best epoch", result.best_epoch)

# %%
# Checkpoints are single .npz files; the reloaded model scores identically.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "paraphrase.npz"
    save_checkpoint(path, model)
    reloaded, _ = load_checkpoint(path)
    print("in memory:", evaluate(model, dev_pairs, "binary").values)
    print("reloaded: ", evaluate(reloaded, dev_pairs, "binary").values)
