"""Desk-scale A-GRPO training of a tabular softmax role-selection policy.

Each question type has one rewarded sequence of roles. An episode samples one
role per turn, is turned into a synthetic :class:`Trajectory`, and is scored
with the same gated reward used for real episodes. The answer carries one
gold fact per correctly chosen role, so the precision reward gives partial
credit; the reserved ``MALFORMED`` action emits an unparseable turn and closes
the format gate.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from .dialogue import Exchange
from .orchestration import Termination, Trajectory
from .protocol import Continue, Finalize, ParsedTurn, ToolCall, serialize_policy_turn
from .reward import RewardConfig, score_trajectory
from .rl import GrpoConfig, RLBatch, agrpo_objective, normalize_advantages

ROLE_NAMES = ("researcher", "planner", "math solver", "clarifier", "critiquer", "assistant")
MALFORMED = "<malformed>"


def role_names(n_roles: int) -> tuple[str, ...]:
    names = ROLE_NAMES[: n_roles - 1]
    if len(names) < n_roles - 1:
        names += tuple(f"specialist {i}" for i in range(len(names), n_roles - 1))
    return names + (MALFORMED,)


def make_toy_environment(seed: int = 0, n_types: int = 3, horizon: int = 2, n_roles: int = 6):
    """Question types ``X`` and their rewarded role sequences ``y``.

    Targets never use the malformed action.
    """
    rng = np.random.default_rng(seed)
    X = np.arange(n_types).reshape(-1, 1)
    y = np.stack([rng.choice(n_roles - 1, size=horizon, replace=True) for _ in range(n_types)])
    return X, y


def synthetic_trajectory(qtype: int, actions, target, names) -> tuple[Trajectory, list[str]]:
    horizon = len(target)
    question = f"toy question type {qtype}"
    traj = Trajectory(question=question)
    answer_tokens = []
    for t, a in enumerate(actions, start=1):
        role = names[a]
        if role == MALFORMED:
            emission = f"<think>turn {t}</think>"
            role = "unknown"
        else:
            emission = serialize_policy_turn(ParsedTurn(f"turn {t}", Continue(ToolCall(f"step {t} for {question}", role))))
        traj.exchanges.append(Exchange(t, f"turn {t}", role, f"step {t} for {question}", f"reply {t}", emission=emission))
        answer_tokens.append(f"fact{qtype}x{t}" if a == target[t - 1] else f"miss{t}")
    answer = " ".join(answer_tokens)
    traj.final_answer = answer
    traj.final_emission = serialize_policy_turn(ParsedTurn("assemble", Finalize(answer)))
    traj.terminal_turn = horizon + 1
    traj.termination = Termination.POLICY_FINALIZE
    gold = " ".join(f"fact{qtype}x{t}" for t in range(1, horizon + 1))
    return traj, [gold]


@lru_cache(maxsize=65536)
def _episode_reward(qtype: int, actions: tuple, target: tuple, names: tuple, reward_cfg: RewardConfig) -> float:
    traj, refs = synthetic_trajectory(qtype, actions, target, names)
    return score_trajectory(traj, refs, reward_cfg).r_total


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def objective_and_grad(logits, states, actions, advantages, logp_prev, logp_base, config: GrpoConfig):
    """A-GRPO objective for the tabular policy and its analytic gradient.

    ``states``/``actions``/``logp_prev``/``logp_base`` are (M, L) arrays of
    per-turn choices; the returned gradient has the shape of ``logits``.
    """
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    cur = logp_all[states, actions]
    M, L = cur.shape
    batch = RLBatch(np.zeros(M), list(cur), list(logp_prev), list(logp_base))
    terms = agrpo_objective(batch, config, advantages=advantages)

    A = np.asarray(advantages, float)[:, None]
    ratio = np.exp(cur - logp_prev)
    unclipped = ratio * A
    clipped = np.clip(ratio, 1 - config.eps_clip, 1 + config.eps_clip) * A
    d_surr = np.where(unclipped <= clipped, ratio * A, 0.0)
    d_kl = 1.0 - np.exp(logp_base - cur)
    if config.kl_reduction == "per_trajectory":
        w = np.full((M, L), 1.0 / (M * L))
    else:
        w = np.full((M, L), 1.0 / cur.size)
    coef = d_surr / (M * L) - config.kl_coeff * d_kl * w

    grad = np.zeros_like(logits)
    flat_s, flat_a, flat_c = states.ravel(), actions.ravel(), coef.ravel()
    np.add.at(grad, (flat_s, flat_a), flat_c)
    np.add.at(grad, flat_s, -flat_c[:, None] * probs[flat_s])
    return terms.objective, grad


class ToyRolePolicy(BaseEstimator):
    """Tabular softmax policy over roles, trained with the A-GRPO objective.

    ``fit(X, y)`` takes question-type ids ``X`` (shape (n, 1)) and their
    rewarded role sequences ``y`` (shape (n, horizon)). The targets are only
    visible to the reward function; the policy learns from rewards alone.
    """

    def __init__(self, n_roles=6, n_iterations=500, group_size=8, learning_rate=1e-3, inner_steps=1,
                 eps_clip=0.2, kl_coeff=0.001, eps_stab=1e-8, kl_reduction="per_trajectory", random_state=0):
        self.n_roles = n_roles
        self.n_iterations = n_iterations
        self.group_size = group_size
        self.learning_rate = learning_rate
        self.inner_steps = inner_steps
        self.eps_clip = eps_clip
        self.kl_coeff = kl_coeff
        self.eps_stab = eps_stab
        self.kl_reduction = kl_reduction
        self.random_state = random_state

    def _grpo_config(self) -> GrpoConfig:
        return GrpoConfig(eps_stab=self.eps_stab, eps_clip=self.eps_clip, kl_coeff=self.kl_coeff,
                          learning_rate=self.learning_rate, group_size=self.group_size,
                          kl_reduction=self.kl_reduction)

    def _validate(self, X, y=None):
        X = np.asarray(X)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[1] != 1:
            raise ValueError("X must hold one question-type id per row")
        X = X[:, 0].astype(int)
        if y is None:
            return X
        y = np.asarray(y, dtype=int)
        if y.ndim != 2 or y.shape[0] != X.shape[0]:
            raise ValueError("y must have shape (n_samples, horizon)")
        if y.min() < 0 or y.max() >= self.n_roles:
            raise ValueError("role ids in y out of range")
        return X, y

    def _states(self, qtypes, horizon):
        return qtypes[:, None] * horizon + np.arange(horizon)[None, :]

    def sample(self, qtypes, rng):
        logp = log_softmax(self.logits_)
        states = self._states(np.asarray(qtypes), self.horizon_)
        u = rng.random(states.shape)
        cdf = np.cumsum(np.exp(logp[states]), axis=-1)
        actions = (u[..., None] > cdf).sum(axis=-1)
        return states, np.minimum(actions, self.n_roles - 1)

    def rewards_for(self, qtypes, actions) -> np.ndarray:
        names = role_names(self.n_roles)
        return np.array([
            _episode_reward(int(q), tuple(int(a) for a in acts), tuple(int(t) for t in self.targets_[q]),
                            names, self.reward_config_)
            for q, acts in zip(qtypes, actions)
        ])

    def fit(self, X, y):
        X, y = self._validate(X, y)
        config = self._grpo_config()
        rng = check_random_state(self.random_state)
        n_types = int(X.max()) + 1
        self.horizon_ = y.shape[1]
        self.targets_ = {int(q): tuple(row) for q, row in zip(X, y)}
        self.reward_config_ = RewardConfig()
        self.logits_ = np.zeros((n_types * self.horizon_, self.n_roles))
        base_logp = log_softmax(self.logits_)
        qtypes = np.repeat(X, self.group_size)
        curve = []
        self.objective_curve_ = []
        for _ in range(self.n_iterations):
            states, actions = self.sample(qtypes, rng)
            rewards = self.rewards_for(qtypes, actions)
            curve.append(float(rewards.mean()))
            adv = np.concatenate([
                normalize_advantages(rewards[qtypes == q], config.eps_stab) for q in X
            ])
            order = np.concatenate([np.flatnonzero(qtypes == q) for q in X])
            states, actions, rewards = states[order], actions[order], rewards[order]
            logp_prev = log_softmax(self.logits_)[states, actions]
            logp_base = base_logp[states, actions]
            for _ in range(self.inner_steps):
                obj, grad = objective_and_grad(self.logits_, states, actions, adv, logp_prev, logp_base, config)
                if not np.isfinite(obj) or not np.all(np.isfinite(grad)):
                    raise FloatingPointError("A-GRPO objective diverged")
                self.logits_ = self.logits_ + self.learning_rate * grad
            self.objective_curve_.append(float(obj))
        self.learning_curve_ = curve
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "logits_")
        X = self._validate(X)
        probs = np.exp(log_softmax(self.logits_))
        return probs[self._states(X, self.horizon_)]

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=-1)

    def score(self, X, y=None):
        """Mean gated reward of the greedy role sequences."""
        X = self._validate(X)
        return float(self.rewards_for(X, self.predict(X)).mean())


def train_toy_policy(seed: int = 0, iterations: int = 500, config: GrpoConfig = GrpoConfig(),
                     learning_rate: float | None = None, **kwargs) -> list[float]:
    """Train on a seeded synthetic environment; returns mean batch reward per iteration.

    ``learning_rate`` defaults to ``config.learning_rate`` scaled up by 1e3 for
    the tabular toy scale.
    """
    X, y = make_toy_environment(seed, **kwargs)
    lr = config.learning_rate * 1e3 if learning_rate is None else learning_rate
    est = ToyRolePolicy(n_iterations=iterations, group_size=config.group_size, learning_rate=lr,
                        eps_clip=config.eps_clip, kl_coeff=config.kl_coeff, eps_stab=config.eps_stab,
                        kl_reduction=config.kl_reduction, random_state=seed)
    est.fit(X, y)
    return est.learning_curve_
