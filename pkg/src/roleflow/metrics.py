"""Benchmark metrics: exact match, token F1 and cosine similarity."""

from __future__ import annotations

import math
from collections import Counter
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import Callable, Optional, Sequence

from .reward import precision_reward, segment, standardize

Vectorizer = Callable[[str], Sequence[float]]


class MetricKind(str, Enum):
    EM_F1 = "em_f1"
    COSINE = "cosine"


def exact_match(pred: str, refs: Sequence[str]) -> int:
    if not refs:
        raise ValueError("at least one reference is required")
    p = standardize(pred)
    return int(any(p == standardize(r) for r in refs))


def token_f1(pred: str, refs: Sequence[str]) -> float:
    return precision_reward(pred, refs)


def cosine_vectors(u: Sequence[float], v: Sequence[float]) -> float:
    if len(u) != len(v):
        raise ValueError(f"dimension mismatch: {len(u)} vs {len(v)}")
    nu = math.sqrt(math.fsum(x * x for x in u))
    nv = math.sqrt(math.fsum(x * x for x in v))
    if nu == 0 and nv == 0:
        return 1.0
    if nu == 0 or nv == 0:
        return 0.0
    return math.fsum(a * b for a, b in zip(u, v)) / (nu * nv)


def cosine_counts(a: Counter, b: Counter) -> float:
    vocab = sorted(set(a) | set(b))
    return cosine_vectors([a[t] for t in vocab], [b[t] for t in vocab])


def cosine_similarity(pred: str, ref: str, vectorizer: Optional[Vectorizer] = None) -> float:
    """Cosine between term-frequency bags of standardized tokens, or external vectors."""
    if vectorizer is None:
        sim = cosine_counts(segment(standardize(pred)), segment(standardize(ref)))
        return min(sim, 1.0)
    return cosine_vectors(list(vectorizer(pred)), list(vectorizer(ref)))


def best_cosine(pred: str, refs: Sequence[str], vectorizer: Optional[Vectorizer] = None) -> float:
    if not refs:
        raise ValueError("at least one reference is required")
    return max(cosine_similarity(pred, r, vectorizer) for r in refs)


def percent(values: Sequence[float]) -> Optional[Decimal]:
    """Arithmetic mean scaled to percent, rounded half-up to 2 decimals."""
    if not values:
        return None
    mean = Decimal(repr(math.fsum(values))) / Decimal(len(values))
    return (mean * 100).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
