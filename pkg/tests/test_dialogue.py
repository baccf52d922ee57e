import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roleflow.dialogue import (
    FEEDBACK_ELIDED,
    REASONING_ELIDED,
    ContextOverflow,
    DialogueHistory,
    Exchange,
    HistoryError,
    append_exchange,
    estimate_tokens,
    question_with_context,
    render_encoding,
)


def ex(t, feedback="reply", reasoning="why", request="ask"):
    return Exchange(t, reasoning, "researcher", f"{request} {t}", f"{feedback} {t}")


def history(n, **kw):
    h = DialogueHistory("Q?")
    for t in range(1, n + 1):
        h = append_exchange(h, ex(t, **kw))
    return h


@pytest.mark.parametrize("text, n", [("", 0), ("one", 2), ("a b c d e f g h i j", 13), ("x " * 3, 4)])
def test_estimate_tokens(text, n):
    assert estimate_tokens(text) == n


def test_append_and_order():
    h = append_exchange(DialogueHistory("Q"), ex(1))
    assert len(h) == 1
    with pytest.raises(HistoryError):
        append_exchange(h, ex(3))
    h5 = history(5)
    assert [e.turn_index for e in h5.exchanges] == [1, 2, 3, 4, 5]


def test_history_rejects_gaps_and_blank_roles():
    with pytest.raises(HistoryError):
        DialogueHistory("Q", exchanges=(ex(2),))
    with pytest.raises(HistoryError):
        Exchange(1, "r", " ", "req", "fb")


def test_empty_history_rendering():
    enc = render_encoding(DialogueHistory("Q"), 8192)
    assert "Q" in enc.rendered and enc.token_estimate > 0 and enc.elided_turns == ()


def test_two_exchanges_in_order():
    text = render_encoding(history(2), 8192).rendered
    first = text.index("<query>researcher: ask 1</query><reply>reply 1</reply>")
    second = text.index("<query>researcher: ask 2</query><reply>reply 2</reply>")
    assert first < second


def test_oldest_feedback_elided_first():
    h = history(3, feedback="long " * 200)
    full = render_encoding(h, 10_000)
    enc = render_encoding(h, full.token_estimate - 100)
    assert enc.token_estimate <= full.token_estimate - 100
    assert enc.rendered.count(FEEDBACK_ELIDED) == 1
    assert "Q?" in enc.rendered
    # the newest exchange is kept verbatim
    assert "<reply>" + "long " * 200 + " 3</reply>" in enc.rendered
    assert enc.elided_turns == (1,)


def test_reasoning_elided_after_feedback():
    h = history(3, reasoning="think " * 200)
    enc = render_encoding(h, render_encoding(h, 10_000).token_estimate - 50)
    assert enc.rendered.count(FEEDBACK_ELIDED) == 2
    assert enc.rendered.count(REASONING_ELIDED) >= 1


def test_newest_exchange_cut_last():
    h = history(1, feedback="word " * 500)
    enc = render_encoding(h, 300)
    assert enc.token_estimate <= 300
    assert "[truncated]" in enc.rendered


def test_overflow_when_question_too_long():
    h = DialogueHistory("word " * 1000)
    with pytest.raises(ContextOverflow):
        render_encoding(h, 100)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 300), st.integers(0, 300), st.integers(1, 40)), min_size=0, max_size=6),
    st.integers(150, 3000),
)
def test_budget_invariant(sizes, budget):
    h = DialogueHistory("What?")
    for t, (nf, nr, nq) in enumerate(sizes, start=1):
        h = append_exchange(h, Exchange(t, "r " * nr, "verifier", "q " * nq, "f " * nf))
    try:
        enc = render_encoding(h, budget)
    except ContextOverflow:
        return
    assert enc.token_estimate <= budget
    assert enc.token_estimate == estimate_tokens(enc.rendered)
    assert enc.rendered.startswith("Question: What?")


def test_render_is_deterministic():
    h = history(4, feedback="x " * 100)
    assert render_encoding(h, 400) == render_encoding(h, 400)


def test_question_with_context():
    assert question_with_context("Q", None) == "Q"
    assert question_with_context("Q", "doc") == "Q\n\nContext:\ndoc"
