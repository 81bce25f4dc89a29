"""Small reproducible experiments on the bundled synthetic corpus."""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

from . import align, corpus
from .corpus import LABELS, iter_sentences
from .model import Example, Featurizer
from .preprocess import clean_sentence
from .synthetic import bundled_path
from .train import TrainConfig, TrainResult, train_loop

# overfit budget: lr is raised from the 2e-5 default so 200 epochs suffice
OVERFIT = TrainConfig(lr=1e-4, epochs=200, batch_size=16, task="2", seed=0)


@dataclass
class OverfitRun:
    mode: str
    accuracy: float
    first_epoch_99: int | None  # first epoch whose training accuracy reached 0.99
    seconds: float
    result: TrainResult


def synthetic_examples(mode: str = "finetune", path=None, task: str = "2"):
    """Vocabulary plus examples for the bundled corpus (or ``path``)."""
    windows = corpus.parse_deft_file(path or bundled_path())
    clean = lambda t: clean_sentence(t, mode)  # noqa: E731
    texts = [corpus.join_texts(align.model_texts(s.tokens, clean))[0] for s in iter_sentences(windows)]
    vocab = align.build_vocabulary(texts)
    examples = Featurizer(mode, vocab=vocab).window_examples(windows, with_ids=task == "multitask")
    return vocab, examples


def token_accuracy(model, examples: list[Example]) -> float:
    right = total = 0
    for ex in examples:
        pred = model.predict_tags(ex)
        right += sum(p == LABELS[g] for p, g in zip(pred, ex.token_tags))
        total += len(pred)
    return right / total


def overfit(mode: str, config: TrainConfig = OVERFIT, examples=None, vocab=None) -> OverfitRun:
    """Train on the synthetic corpus and score on the same sentences."""
    if examples is None:
        vocab, examples = synthetic_examples(mode)
    config = replace(config, mode=mode, checkpoint_dir=None)
    first = None

    def watch(epoch, model):
        nonlocal first
        if first is None and token_accuracy(model, examples) >= 0.99:
            first = epoch

    t0 = time.perf_counter()
    result = train_loop(config, examples, examples, vocab_size=len(vocab), on_epoch=watch)
    seconds = time.perf_counter() - t0
    return OverfitRun(mode, token_accuracy(result.model, examples), first, seconds, result)
