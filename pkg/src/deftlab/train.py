"""Adam optimization, best-on-dev checkpointing and deterministic training."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import LABELS
from .encoder import DROPOUT, EncoderConfig
from .evaluation import EvalReport, compute_metrics, sentence_metrics
from .heads import LossWeights, decide
from .model import TASKS, Example, Model, stream

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.txt"
PAYLOAD = "params.bin"
TRACE = "trace.tsv"


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 2e-5
    epochs: int = 100
    batch_size: int = 16
    mode: str = "finetune"
    task: str = "2"
    weights: tuple[float, float, float] = (0.33, 0.33, 0.33)
    seed: int = 0
    dropout: float | None = None  # None: 0.8 finetune / 0.2 frozen
    checkpoint_dir: str | None = None
    d_emb: int = 256
    d_out: int = 128
    hidden_layers: int = 1
    source: str = "internal"

    def __post_init__(self):
        self.task = str(self.task)
        self.weights = tuple(float(w) for w in self.weights)
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.mode not in DROPOUT:
            raise ConfigError(f"mode must be one of {sorted(DROPOUT)}, got {self.mode!r}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if len(self.weights) != 3:
            raise ConfigError("three loss weights expected")
        if self.hidden_layers not in (1, 2):
            raise ConfigError("hidden_layers must be 1 or 2")
        if self.source not in ("internal", "external"):
            raise ConfigError(f"unknown embedding source {self.source!r}")
        if self.dropout is not None and not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def effective_dropout(self) -> float:
        return DROPOUT[self.mode] if self.dropout is None else self.dropout

    def encoder_config(self, vocab_size: int = 0) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=vocab_size,
            d_emb=self.d_emb,
            d_out=self.d_out,
            hidden_layers=self.hidden_layers,
            dropout=self.effective_dropout,
            source=self.source,
            train_embeddings=self.mode == "finetune",
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(*self.weights)

    def echo(self) -> dict:
        d = asdict(self)
        d["weights"] = list(self.weights)
        d["dropout"] = self.effective_dropout
        return d


# --- Adam -----------------------------------------------------------------


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, precision=None) -> None:
    """One bias-corrected Adam update, in place.

    Parameters without an entry in ``grads`` are skipped.  With ``precision``
    (e.g. ``np.float32``) updated values are rounded to that type.
    """
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for name in sorted(grads):
        g = np.asarray(grads[name], dtype=np.float64)
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new = p - step
        p[...] = new.astype(precision) if precision is not None else new


# --- checkpoints ----------------------------------------------------------


def save_checkpoint(directory, model: Model, config: TrainConfig, dev_metric: float, epoch: int, extra=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = list(model.params)
    manifest = {
        "format_version": FORMAT_VERSION,
        "task": model.task,
        "config": config.echo(),
        "encoder": asdict(model.encoder.config),
        "labels": list(LABELS),
        "params": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
        "dev_metric": dev_metric,
        "epoch": epoch,
    }
    manifest.update(extra or {})
    with open(directory / PAYLOAD, "wb") as f:
        for n in names:
            f.write(np.ascontiguousarray(model.params[n], dtype="<f4").tobytes())
    with open(directory / MANIFEST, "w", encoding="utf-8", newline="\n") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def read_manifest(directory) -> dict:
    with open(Path(directory) / MANIFEST, encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')}")
    return manifest


def load_checkpoint(directory) -> tuple[Model, dict]:
    manifest = read_manifest(directory)
    enc = EncoderConfig(**manifest["encoder"])
    cfg = manifest["config"]
    model = Model(manifest["task"], enc, seed=cfg["seed"], weights=LossWeights(*cfg["weights"]))
    raw = np.fromfile(Path(directory) / PAYLOAD, dtype="<f4")
    offset = 0
    for entry in manifest["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in model.params or model.params[name].shape != shape:
            raise ValueError(f"checkpoint parameter {name} {shape} does not fit the model")
        size = int(np.prod(shape))
        model.params[name][...] = raw[offset : offset + size].reshape(shape).astype(np.float64)
        offset += size
    if offset != raw.size:
        raise ValueError(f"payload holds {raw.size} values, manifest declares {offset}")
    return model, manifest


# --- evaluation helpers ---------------------------------------------------


def evaluate_examples(model: Model, examples: Sequence[Example]) -> EvalReport:
    if model.task == "1":
        pred = [decide(model.predict_probability(ex)) for ex in examples]
        return sentence_metrics([bool(ex.label) for ex in examples], pred)
    gold = [[LABELS[k] for k in ex.token_tags] for ex in examples]
    pred = [model.predict_tags(ex) for ex in examples]
    return compute_metrics(gold, pred)


def dev_criterion(report: EvalReport) -> float:
    """Positive-class F1 for sentence classification, macro-F1 over tags otherwise."""
    if report.positive is not None:
        return report.f1[report.positive]
    return report.macro_f1


# --- loop -----------------------------------------------------------------


@dataclass
class TrainResult:
    model: Model
    best_metric: float
    best_epoch: int
    trace: list[tuple[int, float, float]]
    step_losses: list[float]


def build_model(config: TrainConfig, vocab_size: int = 0) -> Model:
    return Model(config.task, config.encoder_config(vocab_size), config.seed, config.loss_weights())


def train_loop(
    config: TrainConfig,
    train: Sequence[Example],
    dev: Sequence[Example],
    model: Model | None = None,
    vocab_size: int = 0,
    manifest_extra: dict | None = None,
    on_epoch=None,
) -> TrainResult:
    """Run ``config.epochs`` epochs, evaluating on ``dev`` after each and keeping the best parameters.

    The best parameters are written to ``config.checkpoint_dir`` (when set)
    whenever the dev criterion strictly improves; ``trace.tsv`` gets one row per
    epoch.  There is no early stopping.  ``on_epoch(epoch, model)`` is called
    after each epoch's update.
    """
    if not train:
        raise ConfigError("training data is empty")
    if not dev:
        raise ConfigError("development data is empty")
    model = model or build_model(config, vocab_size)
    names = model.trainable()
    state = AdamState()
    shuffle_rng = stream(config.seed, "shuffle")
    dropout_rng = stream(config.seed, "dropout")
    ckpt = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    if ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)
        (ckpt / TRACE).write_text("epoch\ttrain_loss\tdev_metric\n", encoding="utf-8")

    best_metric, best_epoch, best_params = -np.inf, 0, None
    trace: list[tuple[int, float, float]] = []
    step_losses: list[float] = []
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [train[i] for i in order[start : start + config.batch_size]]
            grads: dict[str, np.ndarray] = {}
            batch_loss = 0.0
            for ex in batch:
                batch_loss += model.loss_and_grad(ex, grads, dropout_rng)
            scale = 1.0 / len(batch)
            grads = {n: g * scale for n, g in grads.items() if n in names}
            adam_step(model.params, grads, state, config.lr, precision=np.float32)
            step_losses.append(batch_loss * scale)
            epoch_loss += batch_loss
        epoch_loss /= len(train)
        if on_epoch is not None:
            on_epoch(epoch, model)
        metric = dev_criterion(evaluate_examples(model, dev))
        trace.append((epoch, epoch_loss, metric))
        log.info("epoch %d  loss %.6f  dev %.6f", epoch, epoch_loss, metric)
        if ckpt is not None:
            with open(ckpt / TRACE, "a", encoding="utf-8", newline="\n") as f:
                f.write(f"{epoch}\t{epoch_loss!r}\t{metric!r}\n")
        if metric > best_metric:
            best_metric, best_epoch = metric, epoch
            best_params = {n: p.copy() for n, p in model.params.items()}
            if ckpt is not None:
                save_checkpoint(ckpt, model, config, metric, epoch, manifest_extra)
    for n, p in best_params.items():
        model.params[n][...] = p
    return TrainResult(model, best_metric, best_epoch, trace, step_losses)
