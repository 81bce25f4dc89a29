"""Byte-pair subword vocabulary, subword tokenization and word/subword label alignment."""
from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .corpus import DeftToken, base_tag, join_texts
from .preprocess import EQUATION_TOKEN, URL_TOKEN

UNK = "<unk>"
PAD = "<pad>"
BOS = "<s>"
SPECIALS = (PAD, UNK, BOS, URL_TOKEN, EQUATION_TOKEN)
BASE_ALPHABET = tuple(chr(c) for c in range(0x21, 0x7F))
MIN_BASE_SIZE = 256
DEFAULT_VOCAB_SIZE = 4096

Span = tuple[int, int]


class AlignmentError(ValueError):
    pass


class VocabularyError(ValueError):
    pass


@dataclass(frozen=True)
class SubwordVocabulary:
    pieces: tuple[str, ...]

    def __post_init__(self):
        if self.pieces[: len(SPECIALS)] != SPECIALS:
            raise VocabularyError("vocabulary must start with the special pieces")
        if len(set(self.pieces)) != len(self.pieces):
            raise VocabularyError("duplicate pieces in vocabulary")
        missing = [c for c in BASE_ALPHABET if c not in self.index]
        if missing:
            raise VocabularyError(f"vocabulary lacks base characters {missing[:5]}")

    @property
    def index(self) -> dict[str, int]:
        # cached on first use; frozen dataclass needs object.__setattr__
        try:
            return self.__dict__["_index"]
        except KeyError:
            idx = {p: i for i, p in enumerate(self.pieces)}
            object.__setattr__(self, "_index", idx)
            return idx

    def __len__(self):
        return len(self.pieces)

    def id(self, piece: str) -> int:
        return self.index.get(piece, self.index[UNK])

    def ids(self, pieces: Iterable[str]) -> list[int]:
        return [self.id(p) for p in pieces]

    @property
    def bos_id(self) -> int:
        return self.index[BOS]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.pieces).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.writelines(p + "\n" for p in self.pieces)

    @classmethod
    def load(cls, path) -> "SubwordVocabulary":
        with open(path, encoding="utf-8") as f:
            pieces = tuple(line.rstrip("\n") for line in f if line.rstrip("\n"))
        return cls(pieces)


_SPECIAL_RE = "|".join(re.escape(s) for s in sorted(SPECIALS, key=len, reverse=True))
_PRETOKEN = re.compile(rf"{_SPECIAL_RE}|[A-Za-z0-9]+|\S")


def pretokenize(s: str) -> list[tuple[str, Span]]:
    """Specials, alphanumeric runs and single punctuation characters, with spans."""
    return [(m.group(0), m.span()) for m in _PRETOKEN.finditer(s)]


def _merge_pair(word: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    out = []
    i = 0
    while i < len(word):
        if i + 1 < len(word) and word[i] == pair[0] and word[i + 1] == pair[1]:
            out.append(word[i] + word[i + 1])
            i += 2
        else:
            out.append(word[i])
            i += 1
    return tuple(out)


def build_vocabulary(
    corpus: Iterable[str], size: int = DEFAULT_VOCAB_SIZE, min_frequency: int = 2
) -> SubwordVocabulary:
    """Learn byte-pair merges until the vocabulary reaches ``size`` pieces.

    The most frequent adjacent pair is merged first; ties go to the
    lexicographically smallest pair.  Learning also stops when no pair occurs
    ``min_frequency`` times.
    """
    if size < MIN_BASE_SIZE + len(SPECIALS):
        raise VocabularyError(f"vocabulary size must be >= {MIN_BASE_SIZE + len(SPECIALS)}, got {size}")
    words: Counter[tuple[str, ...]] = Counter()
    extra_chars: set[str] = set()
    for line in corpus:
        for piece, _ in pretokenize(line):
            if piece in SPECIALS:
                continue
            words[tuple(piece)] += 1
            extra_chars.update(piece)
    pieces = list(SPECIALS) + list(BASE_ALPHABET)
    pieces += sorted(extra_chars - set(pieces))
    known = set(pieces)

    while len(pieces) < size:
        pairs: Counter[tuple[str, str]] = Counter()
        for word, n in words.items():
            for a, b in zip(word, word[1:]):
                pairs[a, b] += n
        if not pairs:
            break
        best_count = max(pairs.values())
        if best_count < min_frequency:
            break
        best = min(p for p, c in pairs.items() if c == best_count)
        merged: Counter[tuple[str, ...]] = Counter()
        for word, n in words.items():
            merged[_merge_pair(word, best)] += n
        words = merged
        new = best[0] + best[1]
        if new not in known:
            known.add(new)
            pieces.append(new)
    return SubwordVocabulary(tuple(pieces))


def segment_word(word: str, vocab: SubwordVocabulary) -> list[str]:
    """Apply merges by rank: repeatedly join the adjacent pair whose concatenation ranks lowest."""
    if word in vocab.index and (len(word) == 1 or word in SPECIALS):
        return [word]
    parts = list(word)
    index = vocab.index
    while len(parts) > 1:
        best_rank, best_i = None, -1
        for i in range(len(parts) - 1):
            rank = index.get(parts[i] + parts[i + 1])
            if rank is not None and (best_rank is None or rank < best_rank):
                best_rank, best_i = rank, i
        if best_rank is None:
            break
        parts[best_i : best_i + 2] = [parts[best_i] + parts[best_i + 1]]
    return parts


def tokenize_subwords(s: str, vocab: SubwordVocabulary) -> list[tuple[str, Span]]:
    out: list[tuple[str, Span]] = []
    for word, (start, _) in pretokenize(s):
        pos = start
        for piece in segment_word(word, vocab):
            out.append((piece, (pos, pos + len(piece))))
            pos += len(piece)
    return out


@dataclass(frozen=True)
class SubwordAlignment:
    token_ranges: tuple[tuple[int, int], ...]
    subword_spans: tuple[Span, ...]
    token_spans: tuple[Span, ...] = ()

    @property
    def n_tokens(self) -> int:
        return len(self.token_ranges)

    @property
    def n_subwords(self) -> int:
        return len(self.subword_spans)

    def owner(self) -> list[int]:
        """Token index of every subword."""
        out = [0] * self.n_subwords
        for t, (a, b) in enumerate(self.token_ranges):
            for j in range(a, b):
                out[j] = t
        return out


def align_spans(token_spans: Sequence[Span], subwords: Sequence[tuple[str, Span]]) -> SubwordAlignment:
    """Assign each subword to the token whose span contains the subword's start."""
    owners = []
    t = 0
    for piece, (start, end) in subwords:
        while t < len(token_spans) and token_spans[t][1] <= start:
            t += 1
        if t == len(token_spans) or not token_spans[t][0] <= start:
            raise AlignmentError(f"subword {piece!r} at [{start}, {end}) lies outside every token")
        if end > token_spans[t][1]:
            raise AlignmentError(f"subword {piece!r} at [{start}, {end}) crosses a token boundary")
        owners.append(t)
    ranges = []
    j = 0
    for t in range(len(token_spans)):
        a = j
        while j < len(owners) and owners[j] == t:
            j += 1
        if a == j:
            raise AlignmentError(f"token {t} at {token_spans[t]} received no subword")
        ranges.append((a, j))
    return SubwordAlignment(tuple(ranges), tuple(s for _, s in subwords), tuple(token_spans))


def align_tokens(tokens: Sequence[DeftToken], subwords: Sequence[tuple[str, Span]]) -> SubwordAlignment:
    _, spans = join_texts([t.text for t in tokens])
    return align_spans(spans, subwords)


def model_texts(tokens: Sequence[DeftToken], clean=None) -> list[str]:
    """Token texts as fed to the subword tokenizer; tokens cleaned to nothing become ``<unk>``."""
    texts = []
    for t in tokens:
        text = clean(t.text) if clean is not None else t.text
        # inner spaces would split one corpus token into several words
        text = text.replace(" ", "")
        texts.append(text or UNK)
    return texts


def tokenize_and_align(texts: Sequence[str], vocab: SubwordVocabulary):
    """Reconstruct the sentence from ``texts``, split it into subwords and align them."""
    sentence, spans = join_texts(texts)
    subwords = tokenize_subwords(sentence, vocab)
    return subwords, align_spans(spans, subwords)


_MARKERS = ("##", "Ġ", "▁")


def match_external(pieces: Sequence[str], texts: Sequence[str]):
    """Character-match externally produced subword strings against the reconstructed sentence.

    Leading continuation markers (``##``, ``Ġ``, ``▁``) are ignored.  Pieces are
    consumed left to right, skipping whitespace; a piece that does not match the
    text at the current position raises :class:`AlignmentError`.
    """
    sentence, spans = join_texts(texts)
    out = []
    pos = 0
    for piece in pieces:
        surface = piece
        for m in _MARKERS:
            if surface.startswith(m) and len(surface) > len(m):
                surface = surface[len(m):]
        while pos < len(sentence) and sentence[pos] == " ":
            pos += 1
        if not sentence.startswith(surface, pos):
            raise AlignmentError(f"subword {piece!r} does not match the sentence at offset {pos}")
        out.append((piece, (pos, pos + len(surface))))
        pos += len(surface)
    if sentence[pos:].strip():
        raise AlignmentError(f"subwords cover only {pos} of {len(sentence)} characters")
    return out, align_spans(spans, out)


def project_labels(labels: Sequence[str], alignment: SubwordAlignment) -> list[str]:
    """Token BIO labels to subword labels: only the first piece of a B-X token keeps B-X."""
    out: list[str] = []
    for label, (a, b) in zip(labels, alignment.token_ranges, strict=True):
        out.append(label)
        rest = f"I-{base_tag(label)}" if label.startswith("B-") else label
        out.extend([rest] * (b - a - 1))
    return out


def project_values(values: Sequence, alignment: SubwordAlignment) -> list:
    """Copy a per-token value onto every subword of the token."""
    out = []
    for v, (a, b) in zip(values, alignment.token_ranges, strict=True):
        out.extend([v] * (b - a))
    return out


def resolve(labels: Sequence):
    """Strict majority label, else the first label.

    When the first piece says ``B-X``, later ``I-X`` pieces are counted as
    ``B-X``: inside a word they are the continuation of that same span start.
    """
    first = labels[0]
    if isinstance(first, str) and first.startswith("B-"):
        cont = "I-" + first[2:]
        labels = [first] + [first if l == cont else l for l in labels[1:]]
    counts = Counter(labels)
    top = counts.most_common(2)
    if len(top) == 1 or top[0][1] > top[1][1]:
        return top[0][0]
    return labels[0]


def resolve_labels(subword_labels: Sequence, alignment: SubwordAlignment) -> list:
    if len(subword_labels) != alignment.n_subwords:
        raise AlignmentError(f"expected {alignment.n_subwords} subword labels, got {len(subword_labels)}")
    out = []
    for a, b in alignment.token_ranges:
        out.append(resolve(subword_labels[a:b]))
    return out
