"""Input validation helpers for the numerical APIs."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np


def check_rewards(rewards: Sequence[float]) -> np.ndarray:
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1:
        raise ValueError(f"rewards must be one-dimensional, got shape {r.shape}")
    if r.size == 0:
        raise ValueError("rewards must be non-empty")
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    return r


def _as_seq(x, name: str) -> list[np.ndarray]:
    out = []
    for i, row in enumerate(x):
        a = np.asarray(row, dtype=float)
        if a.ndim != 1:
            raise ValueError(f"{name}[{i}] must be a flat sequence of log-probs")
        if not np.all(np.isfinite(a)):
            raise ValueError(f"{name}[{i}] contains non-finite values")
        if np.any(a > 0):
            raise ValueError(f"{name}[{i}] contains positive log-probabilities")
        out.append(a)
    return out


def check_logprob_batch(current, previous, base, n: Optional[int] = None):
    """Validate three parallel per-trajectory log-prob sequences of matching lengths."""
    cur, prev, bas = _as_seq(current, "logp_current"), _as_seq(previous, "logp_previous"), _as_seq(base, "logp_base")
    if not (len(cur) == len(prev) == len(bas)):
        raise ValueError("current/previous/base must hold the same number of trajectories")
    if n is not None and len(cur) != n:
        raise ValueError(f"expected {n} trajectories, got {len(cur)}")
    for i, (c, p, b) in enumerate(zip(cur, prev, bas)):
        if not (len(c) == len(p) == len(b)):
            raise ValueError(f"trajectory {i}: log-prob sequences differ in length ({len(c)}, {len(p)}, {len(b)})")
    return cur, prev, bas


def check_nonempty_text(value: str, name: str) -> str:
    if not isinstance(value, str) or not value.strip():
        raise ValueError(f"{name} must be a non-empty string")
    return value
