import math
from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from roleflow.metrics import (
    best_cosine,
    cosine_similarity,
    cosine_vectors,
    exact_match,
    percent,
    token_f1,
)


@pytest.mark.parametrize("pred, refs, em", [
    ("no", ["No"], 1),
    ("Newport, Monmouthshire, Wales", ["Newport, Wales"], 0),
    ("American", ["American"], 1),
    ("The American.", ["american"], 1),
])
def test_exact_match(pred, refs, em):
    assert exact_match(pred, refs) == em


def test_token_f1():
    assert token_f1("No", ["no"]) == 1.0
    assert token_f1("cat", ["dog"]) == 0.0
    assert token_f1("Newport, Monmouthshire, Wales", ["Newport, Wales"]) == pytest.approx(0.8)


@given(st.text(), st.lists(st.text(), min_size=1, max_size=3))
def test_em_implies_f1(pred, refs):
    if exact_match(pred, refs):
        assert token_f1(pred, refs) == 1.0


def test_cosine_vectors_hand_example():
    assert cosine_vectors((1, 2, 0), (0, 1, 1)) == pytest.approx(2 / (math.sqrt(5) * math.sqrt(2)))
    assert cosine_vectors((1, 2, 0), (0, 1, 1)) == pytest.approx(0.6325, abs=5e-5)
    with pytest.raises(ValueError):
        cosine_vectors((1, 2), (1, 2, 3))


def test_cosine_similarity_tf():
    assert cosine_similarity("river castle", "river castle") == pytest.approx(1.0)
    assert cosine_similarity("river castle", "orbit harbor") == 0.0
    assert cosine_similarity("x b b", "b c") == pytest.approx(2 / math.sqrt(10))
    assert best_cosine("river", ["orbit", "river"]) == pytest.approx(1.0)


def test_cosine_pluggable_vectorizer():
    def lengths(text):
        return [len(text), 1.0]

    assert cosine_similarity("abc", "abc", vectorizer=lengths) == pytest.approx(1.0)


def test_percent_rounding():
    assert percent([1, 1, 0]) == Decimal("66.67")
    assert percent([0.8]) == Decimal("80.00")
    assert percent([0.000125]) == Decimal("0.01")
    assert percent([]) is None
