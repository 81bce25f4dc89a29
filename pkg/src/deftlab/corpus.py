"""DEFT corpus files: tokens, sentences, context windows, and prediction files.

A corpus line holds eight tab-separated columns::

    token  source  start_char  end_char  tag  tag_id  root_id  relation

Blank lines separate context windows.  The literal ``0`` marks a missing
tag id, root id or relation.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

BASE_TAGS = (
    "Term",
    "Alias-Term",
    "Referential-Term",
    "Definition",
    "Referential-Definition",
    "Qualifier",
)
LABELS = ("O",) + tuple(f"{p}-{t}" for t in BASE_TAGS for p in ("B", "I"))
LABEL_INDEX = {label: i for i, label in enumerate(LABELS)}

NONE_MARKER = "0"
RELATIONS = ("Direct-defines", "Indirect-defines", "Refers-to", "AKA", "Supplements")

SENTENCE_FINAL = frozenset(".!?")
ATTACH_LEFT = frozenset(".,;:!?)]'")
ATTACH_RIGHT = frozenset("([")

N_COLUMNS = 8


class ParseError(ValueError):
    def __init__(self, message, line_no=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line_no is not None:
            where += f"{line_no}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line_no = line_no
        self.path = path


def base_tag(label: str) -> str | None:
    """``B-Term`` -> ``Term``; ``O`` -> None."""
    if label == "O":
        return None
    return label[2:]


def is_valid_bio(labels: Sequence[str]) -> bool:
    return bio_violations(labels) == 0


def bio_violations(labels: Sequence[str]) -> int:
    """Count I-X labels not preceded by B-X or I-X."""
    bad = 0
    prev = "O"
    for label in labels:
        if label.startswith("I-") and base_tag(prev) != label[2:]:
            bad += 1
        prev = label
    return bad


@dataclass(frozen=True)
class DeftToken:
    text: str
    source: str
    start_char: int
    end_char: int
    tag: str = "O"
    tag_id: int | None = None
    root_id: int | None = None
    relation: str = NONE_MARKER

    def __post_init__(self):
        if not self.text or any(c in self.text for c in "\t\n\r"):
            raise ValueError(f"bad token text {self.text!r}")
        if self.start_char < 0 or self.end_char <= self.start_char:
            raise ValueError(f"bad span [{self.start_char}, {self.end_char}) for {self.text!r}")
        if self.tag not in LABEL_INDEX:
            raise ValueError(f"unknown tag label {self.tag!r}")
        if self.relation != NONE_MARKER and self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")

    def to_line(self) -> str:
        cols = [
            self.text,
            self.source,
            str(self.start_char),
            str(self.end_char),
            self.tag,
            _id_column(self.tag_id),
            _id_column(self.root_id),
            self.relation,
        ]
        return "\t".join(cols)


@dataclass(frozen=True)
class SentenceRecord:
    tokens: tuple[DeftToken, ...]
    sentence_text: str = ""
    has_definition: bool = False

    @classmethod
    def from_tokens(cls, tokens: Iterable[DeftToken]) -> "SentenceRecord":
        tokens = tuple(tokens)
        text, _ = reconstruct_sentence(tokens)
        rec = cls(tokens, text, False)
        return replace(rec, has_definition=derive_sentence_label(rec))

    @property
    def tags(self) -> list[str]:
        return [t.tag for t in self.tokens]

    def with_tags(self, tags: Sequence[str]) -> "SentenceRecord":
        if len(tags) != len(self.tokens):
            raise ValueError(f"expected {len(self.tokens)} tags, got {len(tags)}")
        tokens = tuple(replace(t, tag=g) for t, g in zip(self.tokens, tags))
        return SentenceRecord.from_tokens(tokens)


@dataclass(frozen=True)
class ContextWindow:
    sentences: tuple[SentenceRecord, ...]
    window_id: int = 0

    @property
    def tokens(self) -> list[DeftToken]:
        return [t for s in self.sentences for t in s.tokens]

    def tag_ids(self) -> list[int]:
        """Distinct non-none tag ids in order of first occurrence."""
        seen: list[int] = []
        for tok in self.tokens:
            if tok.tag_id is not None and tok.tag_id not in seen:
                seen.append(tok.tag_id)
        return seen


def _id_column(value: int | None) -> str:
    return NONE_MARKER if value is None else str(value)


def _parse_id(raw: str, what: str, line_no: int, path) -> int | None:
    try:
        value = int(raw)
    except ValueError:
        raise ParseError(f"non-integer {what} {raw!r}", line_no, path) from None
    if value < 0:
        raise ParseError(f"negative {what} {value}", line_no, path)
    return None if value == 0 else value


def parse_line(line: str, line_no: int | None = None, path=None) -> DeftToken:
    cols = line.rstrip("\r\n").split("\t")
    if len(cols) != N_COLUMNS:
        raise ParseError(f"expected {N_COLUMNS} columns, got {len(cols)}", line_no, path)
    text, source, start, end, tag, tag_id, root_id, relation = cols
    try:
        start_char, end_char = int(start), int(end)
    except ValueError:
        raise ParseError(f"non-integer offsets {start!r}, {end!r}", line_no, path) from None
    if tag not in LABEL_INDEX:
        raise ParseError(f"unknown tag label {tag!r}", line_no, path)
    if relation != NONE_MARKER and relation not in RELATIONS:
        raise ParseError(f"unknown relation {relation!r}", line_no, path)
    try:
        return DeftToken(
            text,
            source,
            start_char,
            end_char,
            tag,
            _parse_id(tag_id, "tag id", line_no, path),
            _parse_id(root_id, "root id", line_no, path),
            relation,
        )
    except ValueError as e:
        raise ParseError(str(e), line_no, path) from None


def split_sentences(tokens: Sequence[DeftToken]) -> list[list[DeftToken]]:
    """Break after ``. ! ?`` tokens that precede a capitalized token or the window end."""
    sentences: list[list[DeftToken]] = []
    current: list[DeftToken] = []
    for i, tok in enumerate(tokens):
        current.append(tok)
        if tok.text in SENTENCE_FINAL:
            nxt = tokens[i + 1] if i + 1 < len(tokens) else None
            if nxt is None or nxt.text[:1].isupper():
                sentences.append(current)
                current = []
    if current:
        sentences.append(current)
    return sentences


def _window(tokens: list[DeftToken], window_id: int) -> ContextWindow:
    sents = tuple(SentenceRecord.from_tokens(s) for s in split_sentences(tokens))
    return ContextWindow(sents, window_id)


def parse_deft_lines(lines: Iterable[str], path=None) -> list[ContextWindow]:
    windows: list[ContextWindow] = []
    block: list[DeftToken] = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            if block:
                windows.append(_window(block, len(windows)))
                block = []
            continue
        block.append(parse_line(line, line_no, path))
    if block:
        windows.append(_window(block, len(windows)))
    return windows


def parse_deft_file(path) -> list[ContextWindow]:
    with open(path, encoding="utf-8") as f:
        return parse_deft_lines(f, path=os.fspath(path))


def format_deft(windows: Iterable[ContextWindow]) -> str:
    blocks = []
    for w in windows:
        blocks.append("".join(t.to_line() + "\n" for t in w.tokens))
    return "\n".join(blocks)


def write_deft_file(windows: Iterable[ContextWindow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_deft(windows))


def derive_sentence_label(sentence: SentenceRecord) -> bool:
    return any(base_tag(t.tag) == "Definition" for t in sentence.tokens)


def _attaches_left(text: str) -> bool:
    return text[0] in ATTACH_LEFT


def _attaches_right(text: str) -> bool:
    return text[-1] in ATTACH_RIGHT


def join_texts(texts: Sequence[str]) -> tuple[str, list[tuple[int, int]]]:
    """Space-join ``texts`` with punctuation attachment; return the string and each piece's span."""
    out: list[str] = []
    spans: list[tuple[int, int]] = []
    pos = 0
    for i, text in enumerate(texts):
        if i > 0 and not (_attaches_left(text) or _attaches_right(texts[i - 1])):
            out.append(" ")
            pos += 1
        spans.append((pos, pos + len(text)))
        out.append(text)
        pos += len(text)
    return "".join(out), spans


def reconstruct_sentence(tokens: Sequence[DeftToken]) -> tuple[str, list[tuple[int, int]]]:
    """Rebuild the surface sentence from its tokens.

    Returns the sentence and the ``[start, end)`` span of every token in it.
    """
    if not tokens:
        raise ValueError("cannot reconstruct an empty sentence")
    return join_texts([t.text for t in tokens])


def iter_sentences(windows: Iterable[ContextWindow]):
    for w in windows:
        yield from w.sentences


def windows_from_sentences(sentences: Iterable[SentenceRecord]) -> list[ContextWindow]:
    """One single-sentence window per sentence."""
    return [ContextWindow((s,), i) for i, s in enumerate(sentences)]


def format_task1(rows: Iterable[tuple[str, bool]]) -> str:
    lines = []
    for text, label in rows:
        if "\t" in text or "\n" in text:
            raise ValueError(f"sentence text may not contain tabs or newlines: {text!r}")
        lines.append(f"{text}\t{int(bool(label))}\n")
    return "".join(lines)


def parse_task1_file(path) -> list[tuple[str, bool]]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 2 or cols[1] not in ("0", "1"):
                raise ParseError("expected '<sentence>\\t0|1'", line_no, os.fspath(path))
            rows.append((cols[0], cols[1] == "1"))
    return rows


def sniff_columns(path) -> int:
    """Column count of the first non-blank line (0 for an empty file)."""
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                return len(line.rstrip("\r\n").split("\t"))
    return 0


def write_predictions(windows: Sequence[ContextWindow], task, path) -> None:
    """Write task-1 (``text\\t0|1``) or task-2 (DEFT layout) predictions.

    Task-1 labels are taken from each sentence's ``has_definition`` field, task-2
    labels from the token tags.
    """
    task = str(task)
    if task == "1":
        text = format_task1((s.sentence_text, s.has_definition) for s in iter_sentences(windows))
    elif task in ("2", "multitask"):
        text = format_deft(windows)
    else:
        raise ValueError(f"unknown task {task!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
