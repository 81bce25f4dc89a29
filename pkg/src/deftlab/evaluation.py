"""Token-level precision/recall/F1, macro averages and confusion matrices."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import LABELS, bio_violations


class AlignmentMismatch(ValueError):
    pass


def _div(a: float, b: float) -> float:
    return a / b if b else 0.0


def f1(p: float, r: float) -> float:
    return _div(2 * p * r, p + r)


@dataclass
class EvalReport:
    labels: tuple[str, ...]  # full label set, confusion matrix order
    eval_labels: tuple[str, ...]
    precision: dict[str, float]
    recall: dict[str, float]
    f1: dict[str, float]
    support: dict[str, int]
    confusion: np.ndarray  # rows = gold
    bio_violations: int = 0
    positive: str | None = None  # binary reports: the positive class

    @property
    def normalized(self) -> np.ndarray:
        return normalize_confusion(self.confusion)

    def _macro_labels(self) -> list[str]:
        return [l for l in self.eval_labels if self.support[l] > 0]

    @property
    def macro_precision(self) -> float:
        ls = self._macro_labels()
        return float(np.mean([self.precision[l] for l in ls])) if ls else 0.0

    @property
    def macro_recall(self) -> float:
        ls = self._macro_labels()
        return float(np.mean([self.recall[l] for l in ls])) if ls else 0.0

    @property
    def macro_f1(self) -> float:
        ls = self._macro_labels()
        return float(np.mean([self.f1[l] for l in ls])) if ls else 0.0

    @property
    def accuracy(self) -> float:
        return _div(float(np.trace(self.confusion)), float(self.confusion.sum()))

    def to_tsv(self) -> str:
        lines = ["label\tprecision\trecall\tf1\tsupport"]
        for l in self.eval_labels:
            lines.append(f"{l}\t{self.precision[l]:.6f}\t{self.recall[l]:.6f}\t{self.f1[l]:.6f}\t{self.support[l]}")
        total = sum(self.support[l] for l in self.eval_labels)
        lines.append(f"macro\t{self.macro_precision:.6f}\t{self.macro_recall:.6f}\t{self.macro_f1:.6f}\t{total}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max(len(l) for l in self.eval_labels + ("macro",))
        head = f"{'label':<{width}}  {'prec':>7}  {'recall':>7}  {'f1':>7}  {'support':>7}"
        rows = [head, "-" * len(head)]
        for l in self.eval_labels:
            rows.append(
                f"{l:<{width}}  {self.precision[l]:7.4f}  {self.recall[l]:7.4f}  {self.f1[l]:7.4f}  {self.support[l]:7d}"
            )
        rows.append("-" * len(head))
        total = sum(self.support[l] for l in self.eval_labels)
        rows.append(
            f"{'macro':<{width}}  {self.macro_precision:7.4f}  {self.macro_recall:7.4f}  {self.macro_f1:7.4f}  {total:7d}"
        )
        rows.append(f"accuracy {self.accuracy:.4f}  BIO violations {self.bio_violations}")
        return "\n".join(rows) + "\n"


def confusion_tsv(matrix: np.ndarray, labels: Sequence[str], fmt: str = "{:g}") -> str:
    lines = ["gold\\pred\t" + "\t".join(labels)]
    for l, row in zip(labels, matrix):
        lines.append(l + "\t" + "\t".join(fmt.format(v) for v in row))
    return "\n".join(lines) + "\n"


def normalize_confusion(matrix) -> np.ndarray:
    """Divide every row by its sum; empty rows stay zero."""
    m = np.asarray(matrix, dtype=np.float64)
    sums = m.sum(axis=1, keepdims=True)
    out = np.zeros_like(m)
    np.divide(m, sums, out=out, where=sums > 0)
    return out


def _report(gold: Sequence, pred: Sequence, labels: Sequence, eval_labels: Sequence) -> EvalReport:
    index = {l: i for i, l in enumerate(labels)}
    conf = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for g, p in zip(gold, pred):
        conf[index[g], index[p]] += 1
    tp = np.diag(conf)
    pred_tot = conf.sum(axis=0)
    gold_tot = conf.sum(axis=1)
    prec, rec, f, sup = {}, {}, {}, {}
    for l in eval_labels:
        i = index[l]
        prec[l] = _div(tp[i], pred_tot[i])
        rec[l] = _div(tp[i], gold_tot[i])
        f[l] = f1(prec[l], rec[l])
        sup[l] = int(gold_tot[i])
    return EvalReport(tuple(labels), tuple(eval_labels), prec, rec, f, sup, conf)


def compute_metrics(
    gold: Sequence[Sequence[str]],
    pred: Sequence[Sequence[str]],
    labels: Sequence[str] | None = None,
    all_labels: Sequence[str] = LABELS,
) -> EvalReport:
    """Token-level scores over aligned label sequences.

    ``labels`` selects the labels averaged into the macro scores (default: every
    label except ``O``); the confusion matrix always covers ``all_labels``.
    """
    if len(gold) != len(pred):
        raise AlignmentMismatch(f"{len(gold)} gold sentences but {len(pred)} predicted")
    flat_g, flat_p = [], []
    violations = 0
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise AlignmentMismatch(f"sentence {i}: {len(g)} gold labels but {len(p)} predicted")
        flat_g.extend(g)
        flat_p.extend(p)
        violations += bio_violations(p)
    if labels is None:
        labels = [l for l in all_labels if l != "O"]
    report = _report(flat_g, flat_p, list(all_labels), list(labels))
    report.bio_violations = violations
    return report


def sentence_metrics(gold: Sequence[bool], pred: Sequence[bool]) -> EvalReport:
    """Binary report; ``f1['1']`` is the positive-class F1 and ``macro_f1`` averages both classes."""
    if len(gold) != len(pred):
        raise AlignmentMismatch(f"{len(gold)} gold sentences but {len(pred)} predicted")
    g = ["1" if x else "0" for x in gold]
    p = ["1" if x else "0" for x in pred]
    report = _report(g, p, ["0", "1"], ["0", "1"])
    report.positive = "1"
    return report
