import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deftlab import align
from deftlab.align import (
    BASE_ALPHABET,
    SPECIALS,
    AlignmentError,
    SubwordVocabulary,
    VocabularyError,
    build_vocabulary,
    project_labels,
    resolve,
    resolve_labels,
    segment_word,
    tokenize_and_align,
    tokenize_subwords,
)
from deftlab.corpus import LABELS, DeftToken, join_texts
from deftlab.preprocess import clean_sentence


def counting_oracle(labels):
    """Fold in-word I-X continuations of a leading B-X, then strict majority else first."""
    labels = list(labels)
    first = labels[0]
    if first.startswith("B-"):
        labels = [first] + [first if l == "I-" + first[2:] else l for l in labels[1:]]
    counts = {}
    for l in labels:
        counts[l] = counts.get(l, 0) + 1
    top = max(counts.values())
    winners = [l for l, c in counts.items() if c == top]
    return winners[0] if len(winners) == 1 else labels[0]


@pytest.fixture(scope="module")
def vocab():
    corpus = ["extra pol ate", "extrapolation is the extra step", "the step was polite"] * 3
    return build_vocabulary(corpus, size=400)


def test_majority_and_tie_cases():
    assert resolve(["B-Term", "B-Term", "I-Definition"]) == "B-Term"
    assert resolve(["B-Term", "I-Definition"]) == "B-Term"
    assert resolve(["O", "B-Term"]) == "O"
    # a unique maximum wins even when the first label is not among it
    assert resolve(["O", "I-Term", "I-Term"]) == "I-Term"
    assert resolve(["O", "I-Term", "I-Term", "O"]) == "O"


def test_in_word_continuation_counts_for_the_span_start():
    assert resolve(["B-Term", "I-Term", "I-Term"]) == "B-Term"
    assert resolve(["I-Term", "B-Term", "B-Term"]) == "B-Term"


def test_resolution_fuzz_against_oracle():
    rnd = random.Random(7)
    for _ in range(10_000):
        labels = [rnd.choice(LABELS[:7]) for _ in range(rnd.randint(1, 6))]
        assert resolve(labels) == counting_oracle(labels), labels


@settings(max_examples=200)
@given(st.lists(st.sampled_from(LABELS), min_size=2, max_size=6), st.randoms())
def test_resolution_ignores_order_of_later_labels_under_majority(labels, rnd):
    counts = Counter(labels).most_common(2)
    if len(counts) > 1 and counts[0][1] == counts[1][1]:
        return
    rest = labels[1:]
    rnd.shuffle(rest)
    assert resolve([labels[0]] + rest) == resolve(labels)


def test_vocabulary_layout(vocab):
    assert vocab.pieces[: len(SPECIALS)] == SPECIALS
    assert vocab.pieces[len(SPECIALS) : len(SPECIALS) + len(BASE_ALPHABET)] == BASE_ALPHABET
    assert "extra" in vocab.index


def test_merge_ties_are_lexicographic():
    v = build_vocabulary(["ab", "ab", "cd", "cd"], size=300)
    merges = v.pieces[len(SPECIALS) + len(BASE_ALPHABET) :]
    assert merges == ("ab", "cd")


def test_most_frequent_pair_first():
    v = build_vocabulary(["aaab", "aaab"], size=300)
    assert v.pieces[len(SPECIALS) + len(BASE_ALPHABET)] == "aa"


def test_segmentation_and_unknown(vocab):
    assert segment_word("extrapolate", vocab) == ["extrapol", "ate"]
    assert "".join(segment_word("zyzzyva", vocab)) == "zyzzyva"
    assert vocab.id("é") == vocab.id(align.UNK)


def test_vocabulary_size_floor():
    with pytest.raises(VocabularyError):
        build_vocabulary(["abc"], size=100)


def test_vocabulary_roundtrip(tmp_path, vocab):
    p = tmp_path / "v.txt"
    vocab.save(p)
    again = SubwordVocabulary.load(p)
    assert again == vocab and again.digest() == vocab.digest()


def test_specials_are_single_pieces(vocab):
    pieces = [p for p, _ in tokenize_subwords("see <url> and <equation>.", vocab)]
    assert "<url>" in pieces and "<equation>" in pieces


def test_projection():
    a = align.align_spans([(0, 5), (6, 9)], [("ab", (0, 2)), ("c", (2, 3)), ("de", (3, 5)), ("xyz", (6, 9))])
    assert project_labels(["B-Term", "O"], a) == ["B-Term", "I-Term", "I-Term", "O"]
    assert project_labels(["I-Term", "O"], a)[:3] == ["I-Term"] * 3


def test_subword_crossing_token_boundary_is_rejected():
    with pytest.raises(AlignmentError):
        align.align_spans([(0, 2), (2, 4)], [("abcd", (0, 4))])


def test_external_matching_strips_markers():
    texts = ["Words", "like", "this", "."]
    pieces, a = align.match_external(["Wor", "##ds", "Ġlike", "▁this", "."], texts)
    assert a.token_ranges == ((0, 2), (2, 3), (3, 4), (4, 5))
    with pytest.raises(AlignmentError):
        align.match_external(["Word"], texts)


_WORD = st.text(alphabet=st.sampled_from("abcdefgXYZ019.,;:()'é-"), min_size=1, max_size=8)


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.tuples(_WORD, st.sampled_from(LABELS)), min_size=1, max_size=12))
def test_alignment_tiles_and_roundtrips(vocab, pairs):
    texts = align.model_texts(
        [DeftToken(w, "s", 0, 1) for w, _ in pairs], lambda t: clean_sentence(t, "finetune")
    )
    subwords, a = tokenize_and_align(texts, vocab)
    sentence, spans = join_texts(texts)
    assert a.n_tokens == len(texts)
    # every token receives at least one subword and the pieces tile its span exactly
    for (lo, hi), (start, end) in zip(a.token_ranges, spans):
        assert hi > lo
        pieces = a.subword_spans[lo:hi]
        assert pieces[0][0] == start and pieces[-1][1] == end
        assert all(p[1] == q[0] for p, q in zip(pieces, pieces[1:]))
    assert a.token_ranges[-1][1] == len(subwords)
    labels = [l for _, l in pairs]
    assert resolve_labels(project_labels(labels, a), a) == labels
