"""Encoder plus task heads, and conversion of corpus records into model inputs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import align
from .align import SubwordAlignment, SubwordVocabulary
from .corpus import LABEL_INDEX, LABELS, ContextWindow, SentenceRecord
from .crf import CrfParameters, lattice_scores, nll_and_gradient, viterbi_from_scores
from .encoder import DataError, Encoder, EncoderConfig, accumulate, as_f32
from .heads import (
    N_ID_CLASSES,
    REL_CLASSES,
    LossWeights,
    SentenceClassifierHead,
    TokenClassifierHead,
    relation_classes,
    tag_id_slots,
)
from .preprocess import clean_sentence

TASKS = ("1", "2", "multitask")
START_MARKERS = (align.BOS, "[CLS]", "<cls>")

# stable seed-stream ids per component; adding a head never shifts another's stream
_STREAMS = {"encoder": 1, "crf": 2, "cls": 3, "ids": 4, "rel": 5, "dropout": 6, "shuffle": 7}


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _STREAMS[name]]))


@dataclass
class Example:
    inputs: np.ndarray  # subword ids with the start marker first, or an external (n+1, d_emb) block
    alignment: SubwordAlignment | None = None
    tags: list[int] | None = None  # per subword
    token_tags: list[int] | None = None
    tag_ids: list[int] | None = None  # per subword slot categories
    relations: list[int] | None = None
    label: bool | None = None
    sentence: SentenceRecord | None = None
    text: str = ""


class Model:
    """Shared encoder feeding the heads of one task.

    ``task`` is ``"1"`` (sentence classifier), ``"2"`` (CRF tagger) or
    ``"multitask"`` (CRF tagger plus tag-id and relation heads).
    """

    def __init__(self, task: str, encoder_config: EncoderConfig, seed: int = 0, weights: LossWeights | None = None):
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}")
        self.task = task
        self.weights = weights or LossWeights()
        self.encoder = Encoder(encoder_config, stream(seed, "encoder"))
        self.params: dict[str, np.ndarray] = self.encoder.params
        d = encoder_config.d_out
        self.cls = self.id_head = self.rel_head = None
        if task == "1":
            self.cls = SentenceClassifierHead(d, stream(seed, "cls"))
            self.params.update(self.cls.params)
        else:
            crf = CrfParameters.init(len(LABELS), d, stream(seed, "crf"))
            self.params["crf.W"] = as_f32(crf.W)
            self.params["crf.b"] = crf.b
        if task == "multitask":
            self.id_head = TokenClassifierHead(d, N_ID_CLASSES, stream(seed, "ids"), "ids")
            self.rel_head = TokenClassifierHead(d, len(REL_CLASSES), stream(seed, "rel"), "rel")
            self.params.update(self.id_head.params)
            self.params.update(self.rel_head.params)
        # heads read from this same dict
        for head in (self.cls, self.id_head, self.rel_head):
            if head is not None:
                head.params = self.params

    def trainable(self) -> list[str]:
        frozen_table = not self.encoder.config.train_embeddings
        return [n for n in self.params if not (n == "emb" and frozen_table)]

    @property
    def crf(self) -> CrfParameters:
        return CrfParameters(self.params["crf.W"], self.params["crf.b"])

    def loss_and_grad(self, ex: Example, grads: dict, rng: np.random.Generator | None) -> float:
        """Loss of one example; gradients are added into ``grads``."""
        x, cache = self.encoder.forward(ex.inputs, training=rng is not None, rng=rng)
        dx = np.zeros_like(x)
        if self.task == "1":
            loss, d_pooled = self.cls.loss_and_backward(x[0], bool(ex.label), grads)
            dx[0] = d_pooled
        else:
            body = x[1:]
            nll, dW, db, d_body = nll_and_gradient(body, ex.tags, self.crf)
            w_tag = self.weights.tag if self.task == "multitask" else 1.0
            loss = w_tag * nll
            accumulate(grads, "crf.W", w_tag * dW)
            accumulate(grads, "crf.b", w_tag * db)
            dx[1:] = w_tag * d_body
            if self.task == "multitask":
                for head, gold, w in (
                    (self.id_head, ex.tag_ids, self.weights.tag_id),
                    (self.rel_head, ex.relations, self.weights.relation),
                ):
                    if w:
                        ce, d_head = head.loss_and_backward(body, gold, grads, weight=w)
                        loss += w * ce
                        dx[1:] += d_head
        self.encoder.backward(cache, dx, grads)
        return float(loss)

    def encode(self, ex: Example) -> np.ndarray:
        return self.encoder.encode(ex.inputs)

    def predict_subword_tags(self, ex: Example) -> list[int]:
        x = self.encode(ex)
        return viterbi_from_scores(lattice_scores(x[1:], self.crf))[0]

    def predict_tags(self, ex: Example) -> list[str]:
        """Word-level labels: Viterbi over subwords, then majority/first-piece resolution."""
        sub = [LABELS[k] for k in self.predict_subword_tags(ex)]
        return align.resolve_labels(sub, ex.alignment)

    def predict_multitask(self, ex: Example):
        x = self.encode(ex)
        body = x[1:]
        tags = [LABELS[k] for k in viterbi_from_scores(lattice_scores(body, self.crf))[0]]
        ids = self.id_head.predict(body)
        rels = self.rel_head.predict(body)
        a = ex.alignment
        return align.resolve_labels(tags, a), align.resolve_labels(ids, a), align.resolve_labels(rels, a)

    def predict_probability(self, ex: Example) -> float:
        return self.cls.probability(self.encode(ex)[0])


# --- example construction -------------------------------------------------


@dataclass
class Featurizer:
    """Turns sentences into :class:`Example` objects for one vocabulary or embedding file."""

    mode: str = "finetune"
    vocab: SubwordVocabulary | None = None
    external: list | None = None  # [(pieces, matrix)] in corpus order

    def _clean(self, s: str) -> str:
        return clean_sentence(s, self.mode)

    def _next_block(self, index: int):
        if self.external is None:
            raise DataError("no external embedding blocks loaded")
        if index >= len(self.external):
            raise DataError(f"embedding file has no block for sentence {index}")
        return self.external[index]

    def _inputs(self, texts: Sequence[str], index: int):
        if self.external is None:
            subwords, alignment = align.tokenize_and_align(texts, self.vocab)
            ids = [self.vocab.bos_id] + self.vocab.ids(p for p, _ in subwords)
            return np.asarray(ids, dtype=np.int64), alignment
        pieces, mat = self._next_block(index)
        if pieces and pieces[0] in START_MARKERS:
            body_pieces, block = pieces[1:], mat
        else:
            body_pieces = pieces
            block = np.vstack([np.zeros((1, mat.shape[1])), mat])
        try:
            _, alignment = align.match_external(body_pieces, texts)
        except align.AlignmentError as e:
            raise DataError(f"sentence {index}: {e}") from None
        return block, alignment

    def sentence_example(self, sentence: SentenceRecord, index: int, slots=None, rels=None) -> Example:
        texts = align.model_texts(sentence.tokens, self._clean)
        inputs, alignment = self._inputs(texts, index)
        token_tags = [LABEL_INDEX[t.tag] for t in sentence.tokens]
        sub_tags = [LABEL_INDEX[l] for l in align.project_labels(sentence.tags, alignment)]
        ex = Example(
            inputs,
            alignment,
            sub_tags,
            token_tags,
            label=sentence.has_definition,
            sentence=sentence,
            text=sentence.sentence_text,
        )
        if slots is not None:
            ex.tag_ids = align.project_values(slots, alignment)
            ex.relations = align.project_values(rels, alignment)
        return ex

    def window_examples(self, windows: Sequence[ContextWindow], with_ids: bool = False) -> list[Example]:
        out = []
        for w in windows:
            slots = tag_id_slots(w) if with_ids else [None] * len(w.sentences)
            rels = relation_classes(w) if with_ids else [None] * len(w.sentences)
            for s, sl, rl in zip(w.sentences, slots, rels):
                out.append(self.sentence_example(s, len(out), sl, rl))
        if self.external is not None and len(out) != len(self.external):
            raise DataError(f"embedding file has {len(self.external)} blocks for {len(out)} sentences")
        return out

    def text_example(self, text: str, label: bool | None, index: int) -> Example:
        """Task-1 example from a raw sentence string."""
        cleaned = self._clean(text)
        if self.external is None:
            pieces = align.tokenize_subwords(cleaned, self.vocab)
            ids = [self.vocab.bos_id] + self.vocab.ids(p for p, _ in pieces)
            return Example(np.asarray(ids, dtype=np.int64), label=label, text=text)
        pieces, mat = self._next_block(index)
        if pieces and pieces[0] in START_MARKERS:
            block = mat
        else:
            block = np.vstack([np.zeros((1, mat.shape[1])), mat])
        return Example(block, label=label, text=text)

    def text_examples(self, rows: Sequence[tuple[str, bool | None]]) -> list[Example]:
        out = [self.text_example(t, l, i) for i, (t, l) in enumerate(rows)]
        if self.external is not None and len(out) != len(self.external):
            raise DataError(f"embedding file has {len(self.external)} blocks for {len(out)} sentences")
        return out
