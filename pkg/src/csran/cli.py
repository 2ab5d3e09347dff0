"""Command-line front end: train, eval, gradcheck, ablate, depth-sweep.

Settings come from three layers, later ones winning: built-in defaults,
an optional flat ``key = value`` file given with ``--config``, and
``--field-name value`` flags. Exit codes: 0 success, 1 a check or
tolerance failed, 2 bad usage, configuration or input data.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import checks
from .csra import dump_affinity
from .data import (
    FORMATS, SYNTHETIC_TASKS, Vocab, build_char_vocab, build_vocab, encode_pairs, gen_synthetic,
    load_embeddings, make_batches, read_pairs,
)
from .errors import ConfigError, CsranError, DataError
from .metrics import DEFAULT_DEV_METRIC
from .model import TASK_KINDS, CsranModel, ModelConfig, load_checkpoint, save_checkpoint
from .tensor import no_grad
from .training import TrainConfig, evaluate, train, write_history

log = logging.getLogger("csran")

SYNTHETIC_KIND = {"paraphrase": "binary", "entailment3": "nli", "ranking": "ranking", "multihop": "binary"}
ABLATIONS = (("original", True, True), ("no_mar", False, True), ("no_csra", True, False), ("no_both", False, False))
SWEEP_VARIANTS = (("csran", True, True), ("stacked", False, False))


@dataclass
class RunConfig:
    """Everything a command needs besides the model hyperparameters."""

    task_kind: str = "binary"
    train_file: str = ""
    dev_file: str = ""
    test_file: str = ""
    data_format: str = "classification"
    embedding_file: str = ""
    output_dir: str = "run"
    synthetic: str = ""  # name of a generated corpus; replaces the data files
    synthetic_size: int = 200
    synthetic_dev_size: int = 100
    synthetic_seed: int = 0
    synthetic_candidates: int = 5
    min_count: int = 1
    init_seed: int = 0
    shuffle_seed: int = 0
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    patience: int = 5
    clip_norm: float = 5.0
    dev_metric: str = ""
    max_len: int = 64
    max_word_len: int = 16
    record_time: bool = False
    dump_affinity: bool = False
    seeds: int = 1
    parallel: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def train_config(self, **changes) -> TrainConfig:
        tc = TrainConfig(task_kind=self.task_kind, epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                         patience=self.patience, clip_norm=self.clip_norm, shuffle_seed=self.shuffle_seed,
                         dev_metric=self.dev_metric, max_len=self.max_len, max_word_len=self.max_word_len,
                         record_time=self.record_time)
        return replace(tc, **changes)

    def validate(self, needs_data=True):
        if self.task_kind not in TASK_KINDS:
            raise ConfigError("task_kind", f"expected one of {sorted(TASK_KINDS)}, got {self.task_kind!r}")
        if self.data_format not in FORMATS:
            raise ConfigError("data_format", f"expected one of {FORMATS}, got {self.data_format!r}")
        if self.dev_metric and self.dev_metric not in _metric_names(self.task_kind):
            raise ConfigError("dev_metric", f"{self.dev_metric!r} is not reported for {self.task_kind}")
        for name in ("epochs", "patience", "parallel"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be non-negative")
        for name in ("batch_size", "seeds", "max_len", "max_word_len", "min_count", "synthetic_size",
                     "synthetic_dev_size"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be at least 1")
        if self.lr < 0:
            raise ConfigError("lr", "must be non-negative")
        if self.model.num_classes != TASK_KINDS[self.task_kind]:
            raise ConfigError("num_classes", f"task {self.task_kind} has {TASK_KINDS[self.task_kind]} classes, "
                              f"model is configured for {self.model.num_classes}")
        if needs_data:
            if self.synthetic:
                if self.synthetic not in SYNTHETIC_TASKS:
                    raise ConfigError("synthetic", f"expected one of {SYNTHETIC_TASKS}, got {self.synthetic!r}")
                kind = SYNTHETIC_KIND[self.synthetic]
                if TASK_KINDS[kind] != TASK_KINDS[self.task_kind]:
                    raise ConfigError("task_kind", f"synthetic {self.synthetic} data is a {kind} task")
            else:
                for name in ("train_file", "dev_file"):
                    path = getattr(self, name)
                    if not path:
                        raise ConfigError(name, "required unless a synthetic corpus is selected")
                    if not os.path.isfile(path):
                        raise ConfigError(name, f"no such file: {path}")
                if self.test_file and not os.path.isfile(self.test_file):
                    raise ConfigError("test_file", f"no such file: {self.test_file}")
            if self.embedding_file and not os.path.isfile(self.embedding_file):
                raise ConfigError("embedding_file", f"no such file: {self.embedding_file}")
        # vocabulary sizes are replaced from the data once it is read
        self.model.validate()
        return self


def _metric_names(task_kind):
    return {"nli": ("accuracy",), "binary": ("accuracy",), "f1": ("f1",), "ranking": ("map", "mrr"),
            "response": ("r@1", "r@2", "r@5", "accuracy")}[task_kind]


# -- settings ---------------------------------------------------------------------
def _settings():
    """Every configurable field: name -> (owner, type)."""
    out = {}
    for f in fields(RunConfig):
        if f.name != "model":
            out[f.name] = ("run", type(getattr(RunConfig(), f.name)))
    for f in fields(ModelConfig):
        out[f.name] = ("model", type(getattr(ModelConfig(), f.name)))
    return out


def parse_bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(name, kind, text):
    try:
        if kind is bool:
            return parse_bool(text)
        return kind(text)
    except ValueError as exc:
        raise ConfigError(name, str(exc)) from None


def read_config_file(path) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    known = _settings()
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    for number, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"{path}:{number}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(key, f"unknown setting in {path}:{number}")
        values[key] = _convert(key, known[key][1], value)
    return values


def build_run_config(values: dict) -> RunConfig:
    """Apply explicit settings on top of defaults.

    ``num_classes`` follows the task kind unless given explicitly.
    """
    known = _settings()
    run_kw = {k: v for k, v in values.items() if known[k][0] == "run"}
    model_kw = {k: v for k, v in values.items() if known[k][0] == "model"}
    cfg = RunConfig(**run_kw)
    model_kw.setdefault("num_classes", TASK_KINDS.get(cfg.task_kind, 2))
    cfg.model = ModelConfig(**model_kw)
    return cfg


def _add_setting_flags(parser):
    group = parser.add_argument_group("settings (also accepted in a --config file)")
    for name, (_, kind) in _settings().items():
        flag = "--" + name.replace("_", "-")
        group.add_argument(flag, dest="set_" + name, metavar=kind.__name__.upper(), default=argparse.SUPPRESS)


def _explicit(args) -> dict:
    """Settings from the config file and flags, flags winning."""
    known = _settings()
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for key, text in vars(args).items():
        if key.startswith("set_"):
            name = key[4:]
            values[name] = _convert(name, known[name][1], text)
    return values


# -- data -------------------------------------------------------------------------
def load_corpora(cfg: RunConfig):
    """Raw train, dev and (possibly empty) test pairs."""
    if cfg.synthetic:
        kw = {"candidates": cfg.synthetic_candidates} if cfg.synthetic == "ranking" else {}
        train_raw = gen_synthetic(cfg.synthetic, cfg.synthetic_size, cfg.synthetic_seed, **kw)
        dev_raw = gen_synthetic(cfg.synthetic, cfg.synthetic_dev_size, cfg.synthetic_seed + 1, **kw)
        return train_raw, dev_raw, []
    test_raw = read_pairs(cfg.test_file, cfg.data_format) if cfg.test_file else []
    return read_pairs(cfg.train_file, cfg.data_format), read_pairs(cfg.dev_file, cfg.data_format), test_raw


@dataclass
class Prepared:
    words: Vocab
    chars: Vocab
    train: list
    dev: list
    test: list
    pretrained: object = None


def prepare(cfg: RunConfig) -> Prepared:
    train_raw, dev_raw, test_raw = load_corpora(cfg)
    n_classes = cfg.model.num_classes
    for pair in train_raw + dev_raw + test_raw:
        if not 0 <= pair.label < n_classes:
            raise DataError(f"label {pair.label} outside [0, {n_classes}) for task {cfg.task_kind}")
    words = build_vocab(train_raw, cfg.min_count)
    chars = build_char_vocab(train_raw)
    pretrained = None
    if cfg.embedding_file:
        rng = np.random.default_rng(cfg.init_seed)
        pretrained = load_embeddings(cfg.embedding_file, words, cfg.model.word_dim, rng, cfg.model.dtype)
        print(f"pretrained coverage: {pretrained.coverage:.3f}")
    return Prepared(words, chars, encode_pairs(train_raw, words, chars), encode_pairs(dev_raw, words, chars),
                    encode_pairs(test_raw, words, chars), pretrained)


def build_model(cfg: RunConfig, prep: Prepared, **changes) -> CsranModel:
    mc = replace(cfg.model, vocab_size=len(prep.words), char_vocab_size=len(prep.chars), **changes)
    return CsranModel(mc, seed=cfg.init_seed, pretrained=prep.pretrained)


def fit(cfg: RunConfig, prep: Prepared, **model_changes):
    model = build_model(cfg, prep, **model_changes)
    result = train(model, prep.train, prep.dev, cfg.train_config())
    return model, result


# -- commands ---------------------------------------------------------------------
def _announce(cfg: RunConfig):
    print(f"seeds: init_seed={cfg.init_seed} shuffle_seed={cfg.shuffle_seed}", flush=True)


def cmd_train(cfg: RunConfig) -> int:
    cfg.validate()
    _announce(cfg)
    prep = prepare(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    model, result = fit(cfg, prep)
    extra = {"words": prep.words.itos[2:], "chars": prep.chars.itos[2:], "task_kind": cfg.task_kind}
    save_checkpoint(os.path.join(cfg.output_dir, "checkpoint.npz"), model, extra)
    write_history(os.path.join(cfg.output_dir, "history.tsv"), result)
    dev = evaluate(model, prep.dev, cfg.task_kind, max_len=cfg.max_len, max_word_len=cfg.max_word_len)
    text = f"best_epoch={result.best_epoch}\n" + dev.to_text()
    with open(os.path.join(cfg.output_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    if prep.test:
        test = evaluate(model, prep.test, cfg.task_kind, max_len=cfg.max_len, max_word_len=cfg.max_word_len)
        with open(os.path.join(cfg.output_dir, "test_report.txt"), "w", encoding="utf-8") as fh:
            fh.write(test.to_text())
    if cfg.dump_affinity:
        batch = make_batches(prep.dev, cfg.batch_size, None, cfg.max_len, cfg.max_word_len)[0]
        with no_grad():
            _, info = model.features(batch, details=True)
        dump_affinity(os.path.join(cfg.output_dir, "affinity.txt"), info["affinity"], 0)
    return 0


def cmd_eval(checkpoint, data, task_kind, data_format="classification", batch_size=64) -> int:
    if task_kind not in TASK_KINDS:
        raise ConfigError("task_kind", f"expected one of {sorted(TASK_KINDS)}, got {task_kind!r}")
    if not os.path.isfile(checkpoint):
        raise ConfigError("checkpoint", f"no such file: {checkpoint}")
    if not os.path.isfile(data):
        raise ConfigError("data", f"no such file: {data}")
    model, extra = load_checkpoint(checkpoint)
    if model.config.num_classes != TASK_KINDS[task_kind]:
        raise ConfigError("task_kind", f"checkpoint predicts {model.config.num_classes} classes but "
                          f"{task_kind} needs {TASK_KINDS[task_kind]}")
    words, chars = Vocab(extra.get("words", [])), Vocab(extra.get("chars", []))
    raw = read_pairs(data, data_format)
    for pair in raw:
        if not 0 <= pair.label < model.config.num_classes:
            raise DataError(f"label {pair.label} outside [0, {model.config.num_classes})")
    result = evaluate(model, encode_pairs(raw, words, chars), task_kind, batch_size)
    print(result.to_text(), end="")
    return 0


def cmd_gradcheck(values: dict) -> int:
    """Finite-difference audit of a tiny model; only explicit settings apply."""
    model_kw = {k: v for k, v in values.items() if k in {f.name for f in fields(ModelConfig)}}
    base = ModelConfig(word_dim=8, use_char=False, char_dim=4, char_hidden=3, encoder_hidden=6, stack_depth=2,
                       num_classes=2, prediction_hidden=8)
    config = replace(base, **model_kw)
    data_seed = values.get("synthetic_seed", 3)
    init_seed = values.get("init_seed", 2)
    print(f"seeds: init_seed={init_seed} data_seed={data_seed}", flush=True)
    model, batch = checks.tiny_setup(config, data_seed, init_seed)
    print("group\tsize\tmax_rel_error\ttolerance\tstatus", flush=True)
    results = checks.check_model(model, batch, on_group=lambda r: print(r.to_line(), flush=True))
    failed = [r.group for r in results if not r.ok]
    if failed:
        print("gradient check failed for: " + ", ".join(failed))
        return 1
    print("gradient check passed")
    return 0


def ablation_rows(cfg: RunConfig, prep: Prepared = None):
    """``(variant, parameter_count, dev_metric)`` for the four ablations."""
    prep = prep or prepare(cfg)
    rows = []
    for name, use_mar, use_csra in ABLATIONS:
        model, result = fit(cfg, prep, use_mar=use_mar, use_csra=use_csra)
        rows.append((name, model.num_parameters(), result.best_metric))
        print(f"{name}\t{model.num_parameters()}\t{result.best_metric:.6f}", flush=True)
    return rows


def cmd_ablate(cfg: RunConfig) -> int:
    cfg.validate()
    _announce(cfg)
    metric = cfg.dev_metric or DEFAULT_DEV_METRIC[cfg.task_kind]
    print(f"variant\tparameters\t{metric}", flush=True)
    rows = ablation_rows(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "ablation.tsv"), "w", encoding="utf-8") as fh:
        fh.write(f"variant\tparameters\t{metric}\n")
        for name, count, value in rows:
            fh.write(f"{name}\t{count}\t{value:.6f}\n")
    return 0


def _sweep_job(job):
    cfg, depth, variant, use_mar, use_csra, offset = job
    cfg = replace(cfg, init_seed=cfg.init_seed + offset, shuffle_seed=cfg.shuffle_seed + offset)
    prep = prepare(cfg)
    _, result = fit(cfg, prep, stack_depth=depth, use_mar=use_mar, use_csra=use_csra)
    return depth, variant, cfg.init_seed, result.best_metric


def parse_depths(text) -> list[int]:
    try:
        depths = [int(d) for d in str(text).replace(",", " ").split()]
    except ValueError:
        raise ConfigError("depths", f"expected a comma separated list of integers, got {text!r}") from None
    if not depths or any(not 1 <= d <= 5 for d in depths):
        raise ConfigError("depths", f"every depth must lie in [1, 5], got {text!r}")
    return depths


def depth_sweep(cfg: RunConfig, depths):
    """Per-seed rows ``(depth, variant, seed, metric)`` and seed-averaged rows."""
    jobs = [(cfg, d, name, mar, csra, s) for d in depths for name, mar, csra in SWEEP_VARIANTS
            for s in range(cfg.seeds)]
    if cfg.parallel > 1:
        with ProcessPoolExecutor(max_workers=cfg.parallel) as pool:
            per_seed = list(pool.map(_sweep_job, jobs))
    else:
        per_seed = []
        for job in jobs:
            per_seed.append(_sweep_job(job))
            print("\t".join(str(x) for x in per_seed[-1][:3]) + f"\t{per_seed[-1][3]:.6f}", flush=True)
    means = []
    for d in depths:
        for name, _, _ in SWEEP_VARIANTS:
            vals = [m for dd, v, _, m in per_seed if dd == d and v == name]
            means.append((d, name, float(np.mean(vals))))
    return per_seed, means


def cmd_depth_sweep(cfg: RunConfig, depths) -> int:
    depths = parse_depths(depths)
    cfg.validate()
    _announce(cfg)
    per_seed, means = depth_sweep(cfg, depths)
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "depth_sweep_seeds.tsv"), "w", encoding="utf-8") as fh:
        for d, name, seed, value in per_seed:
            fh.write(f"{d}\t{name}\t{seed}\t{value:.6f}\n")
    lines = [f"{d}\t{name}\t{value:.6f}" for d, name, value in means]
    with open(os.path.join(cfg.output_dir, "depth_sweep.tsv"), "w", encoding="utf-8") as fh:
        fh.write("".join(line + "\n" for line in lines))
    print("depth\tvariant\tdev_metric")
    print("\n".join(lines))
    return 0


# -- entry point ------------------------------------------------------------------
def make_parser():
    parser = argparse.ArgumentParser(prog="csran", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("train", "train a model and write checkpoint, history and report"),
                       ("ablate", "train the four MAR/CSRA ablations"),
                       ("depth-sweep", "compare CSRAN and a stacked baseline across depths"),
                       ("gradcheck", "finite-difference check of a tiny model")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="flat key = value settings file")
        if name == "depth-sweep":
            p.add_argument("--depths", default="1,2,3", help="comma separated stack depths in [1, 5]")
        _add_setting_flags(p)
    p = sub.add_parser("eval", help="evaluate a checkpoint on a data file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--task-kind", required=True)
    p.add_argument("--data-format", default="classification")
    p.add_argument("--batch-size", type=int, default=64)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "eval":
            return cmd_eval(args.checkpoint, args.data, args.task_kind, args.data_format, args.batch_size)
        values = _explicit(args)
        if args.command == "gradcheck":
            return cmd_gradcheck(values)
        cfg = build_run_config(values)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "ablate":
            return cmd_ablate(cfg)
        return cmd_depth_sweep(cfg, args.depths)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except CsranError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
