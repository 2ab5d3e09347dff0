"""Corpus reading, vocabularies, batching, pretrained vectors and synthetic tasks.

File formats (UTF-8, tab separated, one example per line)::

    classification:  label <TAB> text_a <TAB> text_b
    ranking:         group_id <TAB> relevance(0|1) <TAB> query <TAB> candidate

Embedding files hold a token followed by ``dim`` space-separated floats.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .layers import glorot_uniform

log = logging.getLogger(__name__)

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
FORMATS = ("classification", "ranking")
SYNTHETIC_TASKS = ("paraphrase", "entailment3", "ranking", "multihop")


@dataclass
class RawPair:
    text_a: str
    text_b: str
    label: int
    group: str | None = None


def tokenize(text: str) -> list[str]:
    """Lower-case whitespace tokenisation; punctuation stays attached."""
    return text.lower().split()


class Vocab:
    """Token to id mapping with reserved ids 0 (padding) and 1 (unknown)."""

    def __init__(self, tokens=()):
        self.itos = [PAD_TOKEN, UNK_TOKEN]
        self.stoi = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)

    @classmethod
    def from_counts(cls, counts: Counter, min_count=1):
        kept = [t for t, c in counts.items() if c >= min_count and t not in (PAD_TOKEN, UNK_TOKEN)]
        kept.sort(key=lambda t: (-counts[t], t))
        return cls(kept)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def encode(self, tokens) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.itos[i] for i in ids]


def read_pairs(path, fmt="classification") -> list[RawPair]:
    """Parse a pair file; errors carry the offending line number."""
    if fmt not in FORMATS:
        raise ConfigError("format", f"expected one of {FORMATS}, got {fmt!r}")
    n_fields = 3 if fmt == "classification" else 4
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != n_fields:
                raise FormatError(f"expected {n_fields} tab-separated fields, found {len(cols)}", lineno)
            if any(not c.strip() for c in cols):
                raise FormatError("empty field", lineno)
            try:
                if fmt == "classification":
                    pairs.append(RawPair(cols[1], cols[2], int(cols[0])))
                else:
                    rel = int(cols[1])
                    if rel not in (0, 1):
                        raise ValueError(rel)
                    pairs.append(RawPair(cols[2], cols[3], rel, cols[0]))
            except ValueError:
                raise FormatError("label is not a valid integer", lineno) from None
    if not pairs:
        raise DataError(f"{path} contains no examples")
    return pairs


def write_pairs(path, pairs, fmt="classification"):
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            if fmt == "ranking":
                fh.write(f"{p.group}\t{p.label}\t{p.text_a}\t{p.text_b}\n")
            else:
                fh.write(f"{p.label}\t{p.text_a}\t{p.text_b}\n")


def build_vocab(pairs, min_count=1) -> Vocab:
    """Word vocabulary ordered by (count descending, token ascending)."""
    if not pairs:
        raise DataError("cannot build a vocabulary from an empty corpus")
    counts = Counter()
    for p in pairs:
        counts.update(tokenize(p.text_a))
        counts.update(tokenize(p.text_b))
    return Vocab.from_counts(counts, min_count)


def build_char_vocab(pairs, min_count=1) -> Vocab:
    counts = Counter()
    for p in pairs:
        for tok in tokenize(p.text_a) + tokenize(p.text_b):
            counts.update(tok)
    return Vocab.from_counts(counts, min_count)


@dataclass
class TokenizedPair:
    a_words: list
    b_words: list
    a_chars: list
    b_chars: list
    label: int
    group: str | None = None


def encode_pair(pair: RawPair, words: Vocab, chars: Vocab) -> TokenizedPair:
    ta, tb = tokenize(pair.text_a), tokenize(pair.text_b)
    if not ta or not tb:
        raise DataError(f"empty sequence in pair {pair!r}")
    return TokenizedPair(
        words.encode(ta), words.encode(tb),
        [chars.encode(t) for t in ta], [chars.encode(t) for t in tb],
        pair.label, pair.group,
    )


def encode_pairs(pairs, words: Vocab, chars: Vocab) -> list[TokenizedPair]:
    return [encode_pair(p, words, chars) for p in pairs]


@dataclass
class Batch:
    """Right-padded id arrays with binary masks for both sides of each pair."""

    a_words: np.ndarray
    a_chars: np.ndarray
    a_mask: np.ndarray
    b_words: np.ndarray
    b_chars: np.ndarray
    b_mask: np.ndarray
    labels: np.ndarray
    groups: list = field(default_factory=list)
    truncated: int = 0

    def __len__(self):
        return len(self.labels)

    def swapped(self) -> "Batch":
        """The same batch with sequences A and B exchanged."""
        return Batch(self.b_words, self.b_chars, self.b_mask, self.a_words, self.a_chars, self.a_mask,
                     self.labels, self.groups, self.truncated)


def _pad_side(seqs, char_seqs, max_len, max_word_len):
    cut = 0
    length = min(max(len(s) for s in seqs), max_len)
    wlen = max(1, min(max((len(c) for cs in char_seqs for c in cs[:length]), default=1), max_word_len))
    words = np.zeros((len(seqs), length), dtype=np.int64)
    chars = np.zeros((len(seqs), length, wlen), dtype=np.int64)
    for r, (s, cs) in enumerate(zip(seqs, char_seqs)):
        if len(s) > max_len:
            cut += 1
        s = s[:length]
        words[r, :len(s)] = s
        for c, w in enumerate(cs[:length]):
            if len(w) > max_word_len:
                cut += 1
            w = w[:wlen]
            chars[r, c, :len(w)] = w
    return words, chars, cut


def collate(pairs, max_len=64, max_word_len=16) -> Batch:
    aw, ac, cut_a = _pad_side([p.a_words for p in pairs], [p.a_chars for p in pairs], max_len, max_word_len)
    bw, bc, cut_b = _pad_side([p.b_words for p in pairs], [p.b_chars for p in pairs], max_len, max_word_len)
    am = np.zeros(aw.shape)
    bm = np.zeros(bw.shape)
    for r, p in enumerate(pairs):
        am[r, :min(len(p.a_words), aw.shape[1])] = 1.0
        bm[r, :min(len(p.b_words), bw.shape[1])] = 1.0
    labels = np.array([p.label for p in pairs], dtype=np.int64)
    return Batch(aw, ac, am, bw, bc, bm, labels, [p.group for p in pairs], cut_a + cut_b)


def make_batches(pairs, batch_size, shuffle_seed=None, max_len=64, max_word_len=16) -> list[Batch]:
    """Split encoded pairs into padded batches.

    Pairs sharing a ranking group always land in the same batch, so a batch
    may exceed ``batch_size`` when a single group is larger. With a seed the
    order of groups (or pairs) is shuffled deterministically.
    """
    if batch_size < 1:
        raise ConfigError("batch_size", f"must be at least 1, got {batch_size}")
    units: dict = {}
    for i, p in enumerate(pairs):
        key = ("g", p.group) if p.group is not None else ("i", i)
        units.setdefault(key, []).append(p)
    order = list(units.values())
    if shuffle_seed is not None:
        perm = np.random.default_rng(shuffle_seed).permutation(len(order))
        order = [order[i] for i in perm]
    batches, current = [], []
    for unit in order:
        if current and len(current) + len(unit) > batch_size:
            batches.append(collate(current, max_len, max_word_len))
            current = []
        current.extend(unit)
    if current:
        batches.append(collate(current, max_len, max_word_len))
    cut = sum(b.truncated for b in batches)
    if cut:
        log.warning("truncated %d over-long sequences or words", cut)
    return batches


@dataclass
class PretrainedEmbeddings:
    table: np.ndarray
    found: np.ndarray
    coverage: float


def load_embeddings(path, vocab: Vocab, dim, rng=None, dtype=np.float32) -> PretrainedEmbeddings:
    """Fill a vocabulary-sized table from a text embedding file.

    Rows of tokens present in the file are copied and flagged in ``found``
    (they stay frozen during training); the rest are glorot-uniform
    initialised. The padding row is zero.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    table = glorot_uniform(rng, (len(vocab), dim), dtype)
    found = np.zeros(len(vocab), dtype=bool)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip().split(" ")
            if not parts or parts == [""]:
                continue
            if len(parts) != dim + 1:
                raise FormatError(f"expected {dim} values, found {len(parts) - 1}", lineno)
            tok = parts[0]
            idx = vocab.stoi.get(tok)
            if idx is None or idx == PAD:
                continue
            try:
                table[idx] = np.array(parts[1:], dtype=np.float64)
            except ValueError:
                raise FormatError("non-numeric embedding value", lineno) from None
            found[idx] = True
    table[PAD] = 0.0
    real = len(vocab) - 2
    coverage = float(found[2:].sum() / real) if real > 0 else 0.0
    return PretrainedEmbeddings(table, found, coverage)


# -- synthetic corpora ------------------------------------------------------------
def _tokens(rng, pool, n):
    return [pool[i] for i in rng.choice(len(pool), size=n, replace=False)]


def gen_synthetic(task_kind, size, seed, vocab_size=40, min_len=3, max_len=7,
                  candidates=5, balance=None) -> list[RawPair]:
    """Generate a labelled toy corpus whose labels follow from construction.

    paraphrase
        label 1: B is a shuffled copy of A; label 0: B is freshly sampled.
    entailment3
        label 0: B's tokens are a subset of A's; 1: partial overlap;
        2: no shared token. ``balance`` sets the class proportions.
    ranking
        ``size`` query groups of ``candidates`` candidates; the single
        relevant candidate shares a hidden key token with the query, the
        others share nothing with it.
    multihop
        Tokens come in hidden synonym pairs. Label 1: B is a shuffled copy
        of A in which every token may be swapped for its synonym; label 0:
        the same but one token is replaced by an unrelated one, so
        deciding needs both the synonym link and exact matching.
    """
    if task_kind not in SYNTHETIC_TASKS:
        raise ConfigError("task_kind", f"expected one of {SYNTHETIC_TASKS}, got {task_kind!r}")
    rng = np.random.default_rng(seed)
    pool = [f"w{i}" for i in range(vocab_size)]
    out = []
    if task_kind == "paraphrase":
        for _ in range(size):
            a = _tokens(rng, pool, rng.integers(min_len, max_len + 1))
            if rng.random() < 0.5:
                b = [a[i] for i in rng.permutation(len(a))]
                label = 1
            else:
                b = _tokens(rng, pool, rng.integers(min_len, max_len + 1))
                label = 0
            out.append(RawPair(" ".join(a), " ".join(b), label))
    elif task_kind == "entailment3":
        p = np.full(3, 1 / 3) if balance is None else np.asarray(balance, dtype=float)
        for _ in range(size):
            label = int(rng.choice(3, p=p / p.sum()))
            a = _tokens(rng, pool, rng.integers(max(min_len, 3), max_len + 1))
            rest = [t for t in pool if t not in a]
            if label == 0:
                b = _tokens(rng, a, rng.integers(1, len(a)))
            elif label == 1:
                shared = _tokens(rng, a, rng.integers(1, len(a)))
                b = shared + _tokens(rng, rest, rng.integers(1, 3))
                b = [b[i] for i in rng.permutation(len(b))]
            else:
                b = _tokens(rng, rest, rng.integers(min_len, max_len + 1))
            out.append(RawPair(" ".join(a), " ".join(b), label))
    elif task_kind == "ranking":
        for g in range(size):
            q = _tokens(rng, pool, rng.integers(min_len, max_len + 1))
            key = q[rng.integers(len(q))]
            rest = [t for t in pool if t not in q]
            pos = rng.integers(candidates)
            for c in range(candidates):
                body = _tokens(rng, rest, rng.integers(min_len, max_len + 1))
                if c == pos:
                    body[rng.integers(len(body))] = key
                out.append(RawPair(" ".join(q), " ".join(body), int(c == pos), f"q{g}"))
    else:
        half = vocab_size // 2
        syn = {f"w{i}": f"w{i + half}" for i in range(half)}
        syn.update({v: k for k, v in list(syn.items())})
        base = pool[:half]
        for _ in range(size):
            a = _tokens(rng, base, rng.integers(min_len, max_len + 1))
            a = [syn[t] if rng.random() < 0.5 else t for t in a]
            b = [syn[t] if rng.random() < 0.5 else t for t in a]
            label = int(rng.random() < 0.5)
            if not label:
                used = set(a) | {syn[t] for t in a}
                j = rng.integers(len(b))
                b[j] = _tokens(rng, [t for t in pool if t not in used], 1)[0]
            b = [b[i] for i in rng.permutation(len(b))]
            out.append(RawPair(" ".join(a), " ".join(b), label))
    return out
