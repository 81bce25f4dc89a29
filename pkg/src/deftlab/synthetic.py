"""Seeded generator for small DEFT-layout corpora with every tag type."""
from __future__ import annotations

import random
from importlib import resources

from .corpus import ContextWindow, DeftToken, SentenceRecord, split_sentences

# pool-specific syllables keep subword pieces from being shared across tag types
_SYLLABLES = {
    "term": ["ka", "ko", "ku", "kel", "kor"],
    "alias": ["zu", "zo", "zim", "zan"],
    "def": ["mi", "mo", "mar", "mel", "mun", "mis"],
    "qual": ["qua", "quo", "qil"],
    "refterm": ["vex", "vax", "vin"],
    "refdef": ["jub", "jol", "jen", "jat"],
    "filler": ["te", "ta", "tor", "tis", "tul", "tem"],
}
SYNTHETIC_FILE = "synthetic50.deft"


def _word(rng: random.Random, pool: str) -> str:
    return "".join(rng.choice(_SYLLABLES[pool]) for _ in range(rng.randint(2, 3)))


def _pool(rng: random.Random, pool: str, n: int) -> list[str]:
    words: set[str] = set()
    while len(words) < n:
        words.add(_word(rng, pool))
    return sorted(words)


class _Builder:
    def __init__(self, source: str):
        self.source = source
        self.pos = 0
        self.tokens: list[DeftToken] = []
        self.next_id = 1

    def span(self, words, base=None, rel="0", root=None, capitalize=False):
        tag_id = None
        if base is not None:
            tag_id = self.next_id
            self.next_id += 1
        for i, w in enumerate(words):
            if capitalize and i == 0:
                w = w[:1].upper() + w[1:]
            tag = "O" if base is None else ("B-" if i == 0 else "I-") + base
            self.tokens.append(
                DeftToken(w, self.source, self.pos, self.pos + len(w), tag, tag_id, root, rel if base else "0")
            )
            self.pos += len(w) + 1
        return tag_id

    def words(self, words, capitalize=False):
        self.span(words, capitalize=capitalize)


def generate(n_sentences: int = 50, seed: int = 13, source: str = "synthetic.txt") -> list[ContextWindow]:
    """Windows of 2-3 sentences; each sentence follows one of five templates."""
    rng = random.Random(seed)
    pools = {k: _pool(rng, k, 12) for k in _SYLLABLES}

    def pick(pool, lo, hi):
        return [rng.choice(pools[pool]) for _ in range(rng.randint(lo, hi))]

    b = _Builder(source)
    windows: list[ContextWindow] = []
    window_tokens_start = 0
    sentences_in_window, target = 0, rng.randint(2, 3)
    for _ in range(n_sentences):
        kind = rng.choice(["plain", "alias", "qual", "ref", "filler"])
        if kind == "plain":
            t = b.span(pick("term", 1, 2), "Term", capitalize=True)
            b.words(["is"])
            b.span(pick("def", 3, 5), "Definition", "Direct-defines", t)
        elif kind == "alias":
            t = b.span(pick("term", 1, 2), "Term", capitalize=True)
            b.words([",", "also", "called"])
            b.span(pick("alias", 1, 1), "Alias-Term", "AKA", t)
            b.words([",", "is"])
            b.span(pick("def", 3, 4), "Definition", "Direct-defines", t)
        elif kind == "qual":
            b.words(["in"], capitalize=True)
            b.span(pick("qual", 1, 2), "Qualifier", "Supplements", None)
            b.words([","])
            t = b.span(pick("term", 1, 1), "Term")
            b.words(["means"])
            b.span(pick("def", 2, 4), "Definition", "Direct-defines", t)
        elif kind == "ref":
            b.words(["this"], capitalize=True)
            t = b.span(pick("refterm", 1, 1), "Referential-Term", "Refers-to", None)
            b.words(["denotes"])
            b.span(pick("refdef", 2, 3), "Referential-Definition", "Indirect-defines", t)
        else:
            b.words(pick("filler", 3, 6), capitalize=True)
        b.words(["."])
        sentences_in_window += 1
        if sentences_in_window == target:
            windows.append(_window(b.tokens[window_tokens_start:], len(windows)))
            window_tokens_start = len(b.tokens)
            sentences_in_window, target = 0, rng.randint(2, 3)
            b.next_id = 1
    if window_tokens_start < len(b.tokens):
        windows.append(_window(b.tokens[window_tokens_start:], len(windows)))
    return windows


def _window(tokens: list[DeftToken], window_id: int) -> ContextWindow:
    return ContextWindow(tuple(SentenceRecord.from_tokens(s) for s in split_sentences(tokens)), window_id)


def bundled_path():
    """Path of the packaged 50-sentence corpus."""
    return resources.files("deftlab") / "data" / SYNTHETIC_FILE
