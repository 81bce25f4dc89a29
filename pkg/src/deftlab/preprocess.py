"""Text cleaning and class balancing."""
from __future__ import annotations

import re
import unicodedata
from typing import Iterable, Sequence

from .corpus import ATTACH_LEFT, ATTACH_RIGHT, BASE_TAGS, SentenceRecord, base_tag

MODES = ("frozen", "finetune")
URL_TOKEN = "<url>"
EQUATION_TOKEN = "<equation>"

DEFAULT_FACTORS = {
    "Definition": 1,
    "Term": 1,
    "Alias-Term": 4,
    "Qualifier": 4,
    "Referential-Definition": 8,
    "Referential-Term": 16,
    "O": 1,
}

_URL = re.compile(r"(?:https?://|ftp://|www\.)\S*", re.IGNORECASE)
_SIZE_ARTIFACT = re.compile(r"\bsize\s*\d+\s*\{[^{}]*\}")
_OPERATOR = re.compile(r"[=+^\\]")
# a chunk may sit inside an equation run if it is an operand or operator-bearing
_OPERAND = re.compile(r"[(\[{]*(?:[A-Za-z]|\d+(?:[.,]\d+)?)[)\]}]*[.,;:]?|[-*/<>|(){}\[\]]+")
_MATHY = re.compile(r"[\w().\[\]{}=+\-*/^\\<>|,;:]+")
_TRAILING_PUNCT = re.compile(r"[.,;:!?]+$")
_SPACES = re.compile(r"\s+")


def strip_accents(s: str) -> str:
    decomposed = unicodedata.normalize("NFD", s)
    return "".join(c for c in decomposed if not unicodedata.combining(c))


def keep_printable_ascii(s: str) -> str:
    s = re.sub(r"[\t\n\r\f\v]", " ", s)
    return "".join(c for c in s if " " <= c <= "~")


def _is_equation_chunk(chunk: str) -> bool:
    if chunk in (URL_TOKEN, EQUATION_TOKEN):
        return False
    if _OPERATOR.search(chunk):
        return _MATHY.fullmatch(chunk) is not None
    return _OPERAND.fullmatch(chunk) is not None


def replace_equations(s: str, replacement: str) -> str:
    """Replace maximal runs of math-like chunks holding at least one of ``= + ^ \\``."""
    chunks = s.split(" ")
    out: list[str] = []
    i = 0
    while i < len(chunks):
        if not _is_equation_chunk(chunks[i]):
            out.append(chunks[i])
            i += 1
            continue
        j = i
        while j < len(chunks) and _is_equation_chunk(chunks[j]):
            j += 1
        run = chunks[i:j]
        if any(_OPERATOR.search(c) for c in run):
            # sentence punctuation on the last chunk survives
            tail = _TRAILING_PUNCT.search(run[-1])
            piece = replacement + (tail.group(0) if tail else "")
            if piece:
                out.append(piece)
        else:
            out.extend(run)
        i = j
    return " ".join(out)


def attach_punctuation(s: str) -> str:
    left = "".join(re.escape(c) for c in sorted(ATTACH_LEFT))
    right = "".join(re.escape(c) for c in sorted(ATTACH_RIGHT))
    s = re.sub(rf" +(?=[{left}])", "", s)
    return re.sub(rf"(?<=[{right}]) +", "", s)


def clean_sentence(s: str, mode: str = "finetune") -> str:
    """Normalize a sentence for subword tokenization.

    URLs and equations become ``<url>``/``<equation>`` in finetune mode and are
    dropped in frozen mode.  Formatting artifacts (``size 12 { }``), accents,
    characters outside printable ASCII and spaces before punctuation go in both.
    """
    if mode not in MODES:
        raise ValueError(f"unknown cleaning mode {mode!r}")
    url_rep, eq_rep = (URL_TOKEN, EQUATION_TOKEN) if mode == "finetune" else ("", "")
    s = keep_printable_ascii(strip_accents(s))
    s = _SIZE_ARTIFACT.sub(" ", s)
    s = _URL.sub(url_rep, s)
    s = _SPACES.sub(" ", s).strip()
    s = replace_equations(s, eq_rep)
    s = _SPACES.sub(" ", s).strip()
    return attach_punctuation(s)


def balance_task1(records: Sequence[tuple[str, bool]]) -> list[tuple[str, bool]]:
    """Append a second copy of every positive record, preserving order."""
    records = list(records)
    return records + [r for r in records if r[1]]


def load_factor_table(path) -> dict[str, int]:
    """Read ``tag = factor`` lines over the defaults."""
    table = dict(DEFAULT_FACTORS)
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in table:
                raise ValueError(f"{path}:{line_no}: expected '<tag> = <factor>' with a known tag")
            table[key] = int(value)
    check_factor_table(table)
    return table


def check_factor_table(table: dict[str, int]) -> None:
    for tag, factor in table.items():
        if int(factor) != factor or factor < 1:
            raise ValueError(f"factor for {tag} must be an integer >= 1, got {factor}")


def sentence_factor(sentence: SentenceRecord, table: dict[str, int]) -> int:
    present = {base_tag(t.tag) or "O" for t in sentence.tokens}
    return max((table.get(tag, 1) for tag in present), default=1)


def oversample_task2(
    sentences: Iterable[SentenceRecord], table: dict[str, int] | None = None
) -> list[SentenceRecord]:
    """Emit each sentence as many times as the largest factor among its tags, copies contiguous."""
    table = DEFAULT_FACTORS if table is None else table
    check_factor_table(table)
    out: list[SentenceRecord] = []
    for s in sentences:
        out.extend([s] * sentence_factor(s, table))
    return out


def tag_counts(sentences: Iterable[SentenceRecord]) -> dict[str, int]:
    """Number of tokens carrying each base tag."""
    counts = dict.fromkeys(BASE_TAGS, 0)
    for s in sentences:
        for t in s.tokens:
            tag = base_tag(t.tag)
            if tag is not None:
                counts[tag] += 1
    return counts
