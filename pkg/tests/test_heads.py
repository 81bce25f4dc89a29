import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deftlab.corpus import ContextWindow, DeftToken, SentenceRecord
from deftlab.heads import (
    ID_NONE,
    REL_CLASSES,
    REL_NONE,
    LossWeights,
    SentenceClassifierHead,
    TokenClassifierHead,
    assign_tag_ids,
    cross_entropy,
    decide,
    multitask_loss,
    relation_classes,
    tag_id_slots,
)


def _fd(f, arr, idx, eps=1e-6):
    old = arr[idx]
    arr[idx] = old + eps
    up = f()
    arr[idx] = old - eps
    down = f()
    arr[idx] = old
    return (up - down) / (2 * eps)


def test_threshold():
    assert decide(0.5) and not decide(0.4999)


def test_sentence_head_gradients():
    rng = np.random.default_rng(0)
    head = SentenceClassifierHead(5, rng, hidden=7)
    head.params["cls.b1"][:] = rng.normal(size=7) * 0.1
    pooled = rng.normal(size=5)
    grads = {}
    loss, d_pooled = head.loss_and_backward(pooled, True, grads)
    assert loss == pytest.approx(-np.log(head.probability(pooled)), abs=1e-12)
    f = lambda: head.loss_and_backward(pooled, True, {})[0]  # noqa: E731
    for name, idx in (("cls.W1", (2, 3)), ("cls.b1", (4,)), ("cls.W2", (1, 0)), ("cls.b2", (0,))):
        assert grads[name][idx] == pytest.approx(_fd(f, head.params[name], idx), rel=1e-5, abs=1e-10)
    for i in range(5):
        assert d_pooled[i] == pytest.approx(_fd(f, pooled, (i,)), rel=1e-5, abs=1e-10)


def test_token_head_gradients():
    rng = np.random.default_rng(1)
    head = TokenClassifierHead(4, 6, rng, "ids")
    x = rng.normal(size=(3, 4))
    gold = [0, 5, 2]
    grads = {}
    loss, dx = head.loss_and_backward(x, gold, grads, weight=0.5)
    assert loss == pytest.approx(cross_entropy(head.logits(x), gold))
    f = lambda: 0.5 * head.loss_and_backward(x, gold, None)[0]  # noqa: E731
    assert grads["ids.W"][1, 5] == pytest.approx(_fd(f, head.params["ids.W"], (1, 5)), rel=1e-5)
    assert dx[2, 3] == pytest.approx(_fd(f, x, (2, 3)), rel=1e-5)


def test_multitask_loss_combines_terms():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(4, 11)), rng.normal(size=(4, 6))
    ya, yb = [0, 10, 3, 3], [5, 0, 1, 2]
    w = LossWeights(0.5, 0.25, 2.0)
    expected = 0.5 * 3.0 + 0.25 * cross_entropy(a, ya) + 2.0 * cross_entropy(b, yb)
    assert multitask_loss(3.0, a, ya, b, yb, w) == pytest.approx(expected, abs=1e-12)
    assert multitask_loss(3.0, a, ya, b, yb, LossWeights(1, 0, 0)) == 3.0
    with pytest.raises(ValueError):
        LossWeights(-1, 0, 0)


def _window():
    rows = [("Cell", "B-Term", 7, None, "0"), ("is", "O", None, None, "0"), ("unit", "B-Definition", 3, 7, "Direct-defines"), (".", "O", None, None, "0")]
    toks = [DeftToken(t, "s", i * 6, i * 6 + len(t), tag, tid, root, rel) for i, (t, tag, tid, root, rel) in enumerate(rows)]
    return ContextWindow((SentenceRecord.from_tokens(toks),))


def test_tag_id_slots_and_relations():
    w = _window()
    assert tag_id_slots(w) == [[0, ID_NONE, 1, ID_NONE]]
    rels = relation_classes(w)
    assert rels == [[REL_NONE, REL_NONE, REL_CLASSES.index("Direct-defines"), REL_NONE]]


def test_assign_tag_ids_renumbers_by_first_occurrence():
    w = _window()
    assert assign_tag_ids(w, [[4, ID_NONE, 2, 4]]) == [[1, None, 2, 1]]
    assert assign_tag_ids(w, [[0, ID_NONE, 1, ID_NONE]], ids=[7, 3]) == [[7, None, 3, None]]
    with pytest.raises(ValueError):
        assign_tag_ids(w, [[11, 0, 0, 0]])


@settings(max_examples=100)
@given(st.lists(st.integers(0, ID_NONE), min_size=4, max_size=4))
def test_assigned_ids_are_consistent(cats):
    out = assign_tag_ids(_window(), [cats])[0]
    for c, v in zip(cats, out):
        assert (v is None) == (c == ID_NONE)
    # equal categories get equal ids and different categories different ids
    pairs = {(c, v) for c, v in zip(cats, out) if v is not None}
    assert len({c for c, _ in pairs}) == len({v for _, v in pairs}) == len(pairs)
