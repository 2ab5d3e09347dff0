from dataclasses import replace

import numpy as np
import pytest

from csran import tensor as T
from csran.checks import tiny_setup
from csran.data import Batch
from csran.errors import ConfigError, DataError, FormatError
from csran.model import (
    CsranModel, ModelConfig, cross_entropy, load_checkpoint, parameter_groups, predict, save_checkpoint,
)
from csran.tensor import Tensor


def small_config(**kw):
    base = dict(vocab_size=30, char_vocab_size=12, word_dim=6, char_dim=3, char_hidden=2, encoder_hidden=4,
                stack_depth=2, num_classes=3, prediction_hidden=5, dropout=0.0, precision="float64")
    base.update(kw)
    return ModelConfig(**base)


def random_batch(rng, n=3, la=4, lb=5, config=None):
    vocab = 30 if config is None else config.vocab_size
    chars = 12 if config is None else config.char_vocab_size
    lens_a, lens_b = rng.integers(1, la + 1, n), rng.integers(1, lb + 1, n)
    lens_a[0], lens_b[0] = la, lb

    def side(lens, length):
        mask = (np.arange(length)[None, :] < lens[:, None]).astype(float)
        words = rng.integers(2, vocab, (n, length)) * mask.astype(int)
        ch = rng.integers(2, chars, (n, length, 3)) * mask.astype(int)[..., None]
        ch[..., 2] = 0
        return words, ch, mask

    aw, ac, am = side(lens_a, la)
    bw, bc, bm = side(lens_b, lb)
    return Batch(aw, ac, am, bw, bc, bm, rng.integers(0, 3, n))


def pad_batch(batch, extra_a=0, extra_b=0, fill=0):
    def widen(words, chars, mask, extra):
        n = len(words)
        return (np.concatenate([words, np.full((n, extra), fill)], axis=1),
                np.concatenate([chars, np.full((n, extra, chars.shape[2]), fill)], axis=1),
                np.concatenate([mask, np.zeros((n, extra))], axis=1))

    aw, ac, am = widen(batch.a_words, batch.a_chars, batch.a_mask, extra_a)
    bw, bc, bm = widen(batch.b_words, batch.b_chars, batch.b_mask, extra_b)
    return Batch(aw, ac, am, bw, bc, bm, batch.labels)


# -- loss / predict ------------------------------------------------------------------
def test_uniform_logits_loss_is_log_classes():
    assert float(cross_entropy(Tensor(np.zeros((4, 3))), [0, 1, 2, 0]).data) == pytest.approx(np.log(3), abs=1e-12)


def test_loss_worked_example():
    loss = float(cross_entropy(Tensor([[1.0, 2.0]]), [1]).data)
    assert loss == pytest.approx(np.log1p(np.exp(-1.0)), abs=1e-12)
    assert loss == pytest.approx(0.3133, abs=1e-4)


def test_loss_limit_and_non_negative():
    assert float(cross_entropy(Tensor([[500.0, 0.0]]), [0]).data) < 1e-12
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert float(cross_entropy(Tensor(rng.standard_normal((4, 3)) * 5), rng.integers(0, 3, 4)).data) >= 0


def test_label_out_of_range():
    with pytest.raises(DataError):
        cross_entropy(Tensor(np.zeros((1, 2))), [2])


def test_predict_examples():
    assert predict(Tensor([[0.1, 2.0]]))[0] == 1
    assert predict(np.array([[0.0, 0.0]]), "ranking")[0] == 0.5
    rng = np.random.default_rng(1)
    z = rng.standard_normal((200, 2))
    margin = z[:, 1] - z[:, 0]
    score = predict(z, "ranking")
    order = np.argsort(margin)
    assert (np.diff(score[order]) >= 0).all()


# -- configuration -------------------------------------------------------------------
@pytest.mark.parametrize("field,value", [
    ("num_classes", 1), ("stack_depth", 0), ("prediction_layers", 4), ("agg_depth", 3),
    ("dropout", 1.0), ("precision", "float16"), ("affinity_fusion", "min"),
])
def test_config_errors_at_construction(field, value):
    with pytest.raises(ConfigError) as err:
        CsranModel(small_config(**{field: value}))
    assert err.value.field == field


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"stack_height": 3})


# -- forward -------------------------------------------------------------------------
def test_logit_shape_and_degenerate_configuration():
    rng = np.random.default_rng(2)
    cfg = small_config(stack_depth=1, use_mar=False, use_csra=False, use_char=False)
    model = CsranModel(cfg)
    assert model(random_batch(rng)).shape == (3, 3)
    assert model.encoder.cafe == []


def test_forward_deterministic_with_seeded_dropout():
    rng = np.random.default_rng(3)
    model = CsranModel(small_config(dropout=0.3))
    batch = random_batch(rng)
    a = model(batch, training=True, rng=np.random.default_rng(9)).data
    b = model(batch, training=True, rng=np.random.default_rng(9)).data
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(model(batch).data, model(batch).data)


def test_swapped_pair_swaps_pooled_halves():
    rng = np.random.default_rng(4)
    model = CsranModel(small_config())
    batch = random_batch(rng)
    z = model.features(batch).data
    zs = model.features(batch.swapped()).data
    half = z.shape[1] // 2
    np.testing.assert_allclose(zs, np.concatenate([z[:, half:], z[:, :half]], axis=1), rtol=1e-10, atol=1e-12)


def test_identical_pair_has_symmetric_features():
    rng = np.random.default_rng(5)
    model = CsranModel(small_config())
    b = random_batch(rng, la=4, lb=4)
    same = Batch(b.a_words, b.a_chars, b.a_mask, b.a_words, b.a_chars, b.a_mask, b.labels)
    z = model.features(same).data
    half = z.shape[1] // 2
    np.testing.assert_allclose(z[:, :half], z[:, half:], rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("precision,tol", [("float64", 1e-10), ("float32", 1e-6)])
@pytest.mark.parametrize("use_char", [True, False])
def test_padding_invariance(precision, tol, use_char):
    rng = np.random.default_rng(6)
    model = CsranModel(small_config(precision=precision, use_char=use_char), seed=1)
    batch = random_batch(rng)
    base = model(batch).data
    for extra_a, extra_b in ((3, 0), (0, 2), (1, 4)):
        padded = model(pad_batch(batch, extra_a, extra_b)).data
        assert np.abs(padded - base).max() <= tol


def test_ablation_parameter_counts():
    def count(**kw):
        return sum(p.size for p in CsranModel(small_config(stack_depth=3, **kw)).parameters())

    original = count()
    assert count(use_mar=False) < original
    assert count(use_csra=False) == original
    assert count(use_mar=False, use_csra=False) == count(use_mar=False)
    no_mar = CsranModel(small_config(use_mar=False))
    assert not any(name.startswith("encoder.cafe") for name, _ in no_mar.named_parameters())


def test_no_csra_uses_last_layer_affinity():
    rng = np.random.default_rng(7)
    cfg = small_config()
    full, last = CsranModel(cfg, seed=3), CsranModel(replace(cfg, use_csra=False), seed=3)
    batch = random_batch(rng)
    _, info = last.features(batch, details=True)
    sa, sb = info["stack_a"], info["stack_b"]
    want = T.matmul(sa.layers[-1], T.transpose_last(sb.layers[-1])).data
    np.testing.assert_array_equal(info["affinity"].scores.data, want)
    assert not np.allclose(full(batch).data, last(batch).data)


def test_parameter_groups_partition_all_parameters():
    model = CsranModel(small_config(stack_depth=3, agg_depth=2))
    groups = parameter_groups(model)
    names = [n for named in groups.values() for n, _ in named]
    assert sorted(names) == sorted(n for n, _ in model.named_parameters())
    assert {"word_emb", "char_enc", "highway", "encoder.layers.0", "encoder.cafe.1",
            "aggregator.layers.1", "head.2"} <= set(groups)


def test_shared_encoder_between_sides():
    model = CsranModel(small_config())
    ids = [id(p) for p in model.parameters()]
    assert len(ids) == len(set(ids))
    assert len(model.encoder.layers) == 2  # one stack, used for both A and B


# -- gradients -----------------------------------------------------------------------
def test_tiny_model_gradients_through_every_group():
    model, batch = tiny_setup()
    model.zero_grad()
    cross_entropy(model(batch), batch.labels).backward()
    for group, named in parameter_groups(model).items():
        assert any(np.abs(p.grad).max() > 0 for _, p in named), group


def test_tiny_model_head_grad_check():
    model, batch = tiny_setup()
    params = [p for name, p in model.named_parameters() if name.startswith("head")]
    loss = lambda: cross_entropy(model(batch), batch.labels)
    assert T.grad_check(loss, params) < 1e-5


# -- checkpoints ---------------------------------------------------------------------
@pytest.mark.parametrize("precision", ["float32", "float64"])
def test_checkpoint_round_trip_bit_exact(tmp_path, precision):
    rng = np.random.default_rng(8)
    cfg = small_config(precision=precision)
    model = CsranModel(cfg, seed=5)
    model.word_emb.table.frozen_rows[4] = True
    path = tmp_path / "m.npz"
    save_checkpoint(path, model, extra={"words": ["<pad>", "<unk>"]})
    loaded, extra = load_checkpoint(path)
    batch = random_batch(rng)
    np.testing.assert_array_equal(loaded(batch).data, model(batch).data)
    assert loaded.config == cfg
    assert extra == {"words": ["<pad>", "<unk>"]}
    np.testing.assert_array_equal(loaded.word_emb.table.frozen_rows, model.word_emb.table.frozen_rows)
    assert loaded.word_emb.table.dtype == np.dtype(precision)


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "other.npz"
    np.savez(path, weights=np.ones(3))
    with pytest.raises(FormatError):
        load_checkpoint(path)
