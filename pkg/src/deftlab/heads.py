"""Output heads: sentence classifier, per-token id/relation classifiers, joint loss."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, log_softmax

from .corpus import NONE_MARKER, RELATIONS, ContextWindow
from .encoder import HIDDEN, accumulate, glorot, relu

log = logging.getLogger(__name__)

MAX_TAG_SLOTS = 10
N_ID_CLASSES = MAX_TAG_SLOTS + 1
ID_NONE = MAX_TAG_SLOTS
REL_CLASSES = RELATIONS + (NONE_MARKER,)
REL_NONE = len(RELATIONS)
THRESHOLD = 0.5


class SentenceClassifierHead:
    """``d_out -> 512 -> 1`` with a ramp hidden layer and a sigmoid output."""

    def __init__(self, d_in: int, rng: np.random.Generator, hidden: int = HIDDEN, prefix: str = "cls"):
        self.prefix = prefix
        self.params = {
            f"{prefix}.W1": glorot(rng, d_in, hidden),
            f"{prefix}.b1": np.zeros(hidden),
            f"{prefix}.W2": glorot(rng, hidden, 1),
            f"{prefix}.b2": np.zeros(1),
        }

    def _p(self, name):
        return self.params[f"{self.prefix}.{name}"]

    def logit(self, pooled: np.ndarray):
        z = pooled @ self._p("W1") + self._p("b1")
        h = relu(z)
        out = float((h @ self._p("W2") + self._p("b2"))[0])
        return out, (pooled, z, h)

    def probability(self, pooled: np.ndarray) -> float:
        return float(expit(self.logit(pooled)[0]))

    def loss_and_backward(self, pooled: np.ndarray, label: bool, grads: dict):
        """Binary cross-entropy; gradients go into ``grads``, returns ``(loss, d_pooled)``."""
        logit, (x, z, h) = self.logit(pooled)
        y = 1.0 if label else 0.0
        # log(1 + e^l) - y*l, stable
        loss = float(np.logaddexp(0.0, logit) - y * logit)
        g = float(expit(logit)) - y
        accumulate(grads, f"{self.prefix}.W2", np.outer(h, [g]))
        accumulate(grads, f"{self.prefix}.b2", np.array([g]))
        gh = g * self._p("W2")[:, 0] * (z > 0)
        accumulate(grads, f"{self.prefix}.W1", np.outer(x, gh))
        accumulate(grads, f"{self.prefix}.b1", gh)
        return loss, gh @ self._p("W1").T


def classify_sentence(pooled: np.ndarray, head: SentenceClassifierHead) -> float:
    """Probability that the sentence contains a definition."""
    return head.probability(pooled)


def decide(probability: float) -> bool:
    return probability >= THRESHOLD


class TokenClassifierHead:
    """Per-position affine map to ``n_classes`` logits trained with cross-entropy."""

    def __init__(self, d_in: int, n_classes: int, rng: np.random.Generator, prefix: str):
        self.prefix = prefix
        self.params = {
            f"{prefix}.W": glorot(rng, d_in, n_classes),
            f"{prefix}.b": np.zeros(n_classes),
        }

    def logits(self, x: np.ndarray) -> np.ndarray:
        return x @ self.params[f"{self.prefix}.W"] + self.params[f"{self.prefix}.b"]

    def predict(self, x: np.ndarray) -> list[int]:
        return [int(k) for k in np.argmax(self.logits(x), axis=1)]

    def loss_and_backward(self, x: np.ndarray, gold: Sequence[int], grads: dict | None, weight: float = 1.0):
        """Mean cross-entropy over positions; returns ``(loss, d_x)`` with gradients scaled by ``weight``."""
        gold = np.asarray(gold, dtype=np.int64)
        if len(gold) != x.shape[0]:
            raise ValueError(f"{len(gold)} labels for {x.shape[0]} positions")
        logp = log_softmax(self.logits(x), axis=1)
        n = len(gold)
        loss = float(-logp[np.arange(n), gold].mean())
        g = np.exp(logp)
        g[np.arange(n), gold] -= 1.0
        g *= weight / n
        if grads is not None:
            accumulate(grads, f"{self.prefix}.W", x.T @ g)
            accumulate(grads, f"{self.prefix}.b", g.sum(axis=0))
        return loss, g @ self.params[f"{self.prefix}.W"].T


@dataclass(frozen=True)
class LossWeights:
    tag: float = 0.33
    tag_id: float = 0.33
    relation: float = 0.33

    def __post_init__(self):
        for v in (self.tag, self.tag_id, self.relation):
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weights must be finite and non-negative, got {v}")


def cross_entropy(logits: np.ndarray, gold: Sequence[int]) -> float:
    logp = log_softmax(np.asarray(logits, dtype=np.float64), axis=1)
    return float(-logp[np.arange(len(gold)), np.asarray(gold)].mean())


def multitask_loss(tag_nll: float, id_logits, y_id, rel_logits, y_rel, weights: LossWeights) -> float:
    """``l1 * tag NLL + l2 * id cross-entropy + l3 * relation cross-entropy``."""
    id_logits = np.asarray(id_logits)
    rel_logits = np.asarray(rel_logits)
    if not (len(y_id) == len(y_rel) == id_logits.shape[0] == rel_logits.shape[0]):
        raise ValueError("tag id and relation sequences must cover the same subwords")
    total = weights.tag * tag_nll
    if weights.tag_id:
        total += weights.tag_id * cross_entropy(id_logits, y_id)
    if weights.relation:
        total += weights.relation * cross_entropy(rel_logits, y_rel)
    return total


def tag_id_slots(window: ContextWindow) -> list[list[int]]:
    """Per sentence, per token: slot category of its tag id (first-occurrence order, none = 10)."""
    ids = window.tag_ids()
    if len(ids) > MAX_TAG_SLOTS:
        log.warning("window %d has %d tag ids; slots beyond %d map to none", window.window_id, len(ids), MAX_TAG_SLOTS)
    slot = {tid: k for k, tid in enumerate(ids[:MAX_TAG_SLOTS])}
    return [[slot.get(t.tag_id, ID_NONE) for t in s.tokens] for s in window.sentences]


def relation_classes(window: ContextWindow) -> list[list[int]]:
    return [[REL_CLASSES.index(t.relation) for t in s.tokens] for s in window.sentences]


def assign_tag_ids(
    window: ContextWindow, categories: Sequence[Sequence[int]], ids: Sequence[int] | None = None
) -> list[list[int | None]]:
    """Map predicted slot categories back to tag ids.

    Slots are renumbered by first occurrence in the window; the ``k``-th slot
    receives ``ids[k]`` (default ``k + 1``).  Category 10 yields ``None``.
    """
    if len(categories) != len(window.sentences):
        raise ValueError(f"expected categories for {len(window.sentences)} sentences, got {len(categories)}")
    order: dict[int, int] = {}
    out = []
    for sent, cats in zip(window.sentences, categories):
        if len(cats) != len(sent.tokens):
            raise ValueError("one category per token expected")
        row = []
        for c in cats:
            c = int(c)
            if not 0 <= c <= ID_NONE:
                raise ValueError(f"tag id category {c} outside 0..{ID_NONE}")
            if c == ID_NONE:
                row.append(None)
                continue
            if c not in order:
                if len(order) == MAX_TAG_SLOTS:
                    log.warning("more than %d tag slots predicted; extra slots dropped", MAX_TAG_SLOTS)
                    row.append(None)
                    continue
                order[c] = len(order)
            k = order[c]
            row.append(ids[k] if ids is not None and k < len(ids) else k + 1)
        out.append(row)
    return out
