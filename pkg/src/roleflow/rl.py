"""Group-normalized advantages and the clipped, KL-regularized surrogate objective."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .validation import check_logprob_batch, check_rewards

KL_REDUCTIONS = ("per_trajectory", "pooled")


@dataclass(frozen=True)
class GrpoConfig:
    eps_stab: float = 1e-8
    eps_clip: float = 0.2
    kl_coeff: float = 0.001
    learning_rate: float = 1e-6
    group_size: int = 8
    # "per_trajectory": token-mean KL inside each trajectory, then batch mean.
    # "pooled": one mean over every token in the batch.
    kl_reduction: str = "per_trajectory"

    def __post_init__(self):
        if self.eps_stab <= 0:
            raise ValueError("eps_stab must be positive")
        if not 0 < self.eps_clip < 1:
            raise ValueError("eps_clip must lie in (0, 1)")
        if self.kl_coeff < 0:
            raise ValueError("kl_coeff must be non-negative")
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        if self.kl_reduction not in KL_REDUCTIONS:
            raise ValueError(f"kl_reduction must be one of {KL_REDUCTIONS}")


@dataclass
class RLBatch:
    """M trajectories with rewards and per-token log-probs under three policies."""

    rewards: Sequence[float]
    logp_current: Sequence[Sequence[float]]
    logp_previous: Sequence[Sequence[float]]
    logp_base: Sequence[Sequence[float]]

    def __post_init__(self):
        self.rewards = check_rewards(self.rewards)
        self.logp_current, self.logp_previous, self.logp_base = check_logprob_batch(
            self.logp_current, self.logp_previous, self.logp_base, n=len(self.rewards)
        )

    @property
    def size(self) -> int:
        return len(self.rewards)

    @property
    def lengths(self) -> list[int]:
        return [len(x) for x in self.logp_current]


@dataclass
class ObjectiveTerms:
    objective: float
    surrogate: float
    kl: float
    advantages: np.ndarray
    per_trajectory_surrogate: np.ndarray
    per_trajectory_kl: np.ndarray
    clip_fraction: float = 0.0


def normalize_advantages(rewards: Sequence[float], eps_stab: float = 1e-8) -> np.ndarray:
    r = check_rewards(rewards)
    if np.all(r == r[0]):
        return np.zeros_like(r)
    centered = r - r.mean()
    var = np.mean(centered ** 2)  # population variance (1/M)
    return centered / np.sqrt(var + eps_stab)


def clip_ratio(ratio, eps_clip: float):
    return np.clip(ratio, 1.0 - eps_clip, 1.0 + eps_clip)


def clipped_term(ratio, advantage, eps_clip: float = 0.2):
    """min(ratio * A, clip(ratio, 1-eps, 1+eps) * A); works on scalars or arrays."""
    if np.any(np.asarray(ratio) <= 0):
        raise ValueError("ratio must be positive")
    out = np.minimum(ratio * advantage, clip_ratio(ratio, eps_clip) * advantage)
    return float(out) if np.ndim(out) == 0 else out


def kl_estimate(logp_base, logp_current):
    """Per-token exp(d) - d - 1 with d = logp_base - logp_current; always >= 0."""
    d = np.asarray(logp_base, dtype=float) - np.asarray(logp_current, dtype=float)
    return np.maximum(np.expm1(d) - d, 0.0)


def agrpo_objective(batch: RLBatch, config: GrpoConfig = GrpoConfig(),
                    advantages: Optional[Sequence[float]] = None) -> ObjectiveTerms:
    """Token-averaged clipped surrogate minus the KL penalty, averaged over the batch.

    Advantages are normalized from ``batch.rewards`` unless given explicitly.
    """
    adv = normalize_advantages(batch.rewards, config.eps_stab) if advantages is None else np.asarray(advantages, float)
    if adv.shape != (batch.size,):
        raise ValueError("advantages must have one entry per trajectory")
    surr = np.empty(batch.size)
    kls = np.empty(batch.size)
    clipped = 0
    kl_tokens = []
    for i, (cur, prev, base) in enumerate(zip(batch.logp_current, batch.logp_previous, batch.logp_base)):
        ratio = np.exp(cur - prev)
        surr[i] = np.mean(clipped_term(ratio, adv[i], config.eps_clip)) if len(cur) else 0.0
        k = kl_estimate(base, cur)
        kls[i] = np.mean(k) if len(cur) else 0.0
        kl_tokens.append(k)
        clipped += int(np.sum(np.abs(ratio - 1.0) > config.eps_clip))
    surrogate = float(np.mean(surr))
    if config.kl_reduction == "per_trajectory":
        kl = float(np.mean(kls))
    else:
        pooled = np.concatenate(kl_tokens) if kl_tokens else np.zeros(0)
        kl = float(np.mean(pooled)) if pooled.size else 0.0
    total_tokens = sum(batch.lengths)
    return ObjectiveTerms(
        objective=surrogate - config.kl_coeff * kl,
        surrogate=surrogate,
        kl=kl,
        advantages=adv,
        per_trajectory_surrogate=surr,
        per_trajectory_kl=kls,
        clip_fraction=clipped / total_tokens if total_tokens else 0.0,
    )


@dataclass
class ExportRow:
    episode_id: str
    reward: float
    advantage: float
    turn_logprobs: list[list[float]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {"episode_id": self.episode_id, "reward": self.reward,
             "advantage": self.advantage, "turn_logprobs": self.turn_logprobs},
            ensure_ascii=False,
        )


def grouped_advantages(rewards: Sequence[float], groups: Sequence[str], eps_stab: float = 1e-8) -> np.ndarray:
    """Normalize rewards within each group label (GRPO rollout groups)."""
    rewards = np.asarray(rewards, dtype=float)
    out = np.zeros_like(rewards)
    order: dict[str, list[int]] = {}
    for i, g in enumerate(groups):
        order.setdefault(g, []).append(i)
    for idx in order.values():
        out[idx] = normalize_advantages(rewards[idx], eps_stab)
    return out


def write_export(rows: Iterable[ExportRow], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(row.to_json() + "\n")
            n += 1
    return n


def read_export(path) -> list[ExportRow]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                rows.append(ExportRow(d["episode_id"], d["reward"], d["advantage"], d["turn_logprobs"]))
    return rows
