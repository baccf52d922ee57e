"""Layered reward: capped format reward, segment-F1 precision, gated aggregation."""

from __future__ import annotations

import math
import unicodedata
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .orchestration import Termination
from .protocol import (
    ANSWER_CLOSE,
    ANSWER_OPEN,
    Continue,
    Finalize,
    ProtocolError,
    check_think_budget,
    encapsulate_exchange,
    parse_policy_turn,
    split_exchange,
)

ARTICLES = frozenset({"a", "an", "the"})
# relative slack for the gate check; sums of float weights like 1/6 land a few ulps off
GATE_RTOL = 1e-9


@dataclass(frozen=True)
class RewardConfig:
    kappa: float = 1.0
    alpha_total: float = 0.5
    beta: float = 1 / 6
    gamma: float = 1 / 6
    delta: float = 1 / 6

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if min(self.alpha_total, self.beta, self.gamma, self.delta) < 0:
            raise ValueError("format weights must be non-negative")
        total = self.alpha_total + self.beta + self.gamma + self.delta
        if not math.isclose(total, self.kappa, rel_tol=GATE_RTOL, abs_tol=1e-12):
            raise ValueError(f"alpha_total+beta+gamma+delta must equal kappa ({total} != {self.kappa})")


@dataclass
class RewardBreakdown:
    lambda_per_turn: list[int] = field(default_factory=list)
    b_m: int = 0
    b_v: int = 0
    i_c: int = 0
    r_fmt: float = 0.0
    r_prec: float = 0.0
    r_total: float = 0.0
    gate_open: bool = False
    first_think_within_budget: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RewardBreakdown":
        return cls(**d)


def standardize(text: str) -> str:
    """Lowercase, drop Unicode punctuation and English articles, collapse whitespace."""
    low = text.lower()
    stripped = "".join(ch for ch in low if not unicodedata.category(ch).startswith("P"))
    return " ".join(tok for tok in stripped.split() if tok not in ARTICLES)


def segment(text: str) -> Counter:
    return Counter(text.split())


def segment_f1(pred: str, ref: str) -> float:
    p = segment(standardize(pred))
    r = segment(standardize(ref))
    np_, nr = sum(p.values()), sum(r.values())
    if np_ == 0 and nr == 0:
        return 1.0
    if np_ == 0 or nr == 0:
        return 0.0
    common = sum((p & r).values())
    return 2 * common / (np_ + nr)


def precision_reward(pred: str, refs: Sequence[str]) -> float:
    if isinstance(refs, str):
        raise TypeError("refs must be a sequence of reference strings")
    if not refs:
        raise ValueError("at least one reference is required")
    return max(segment_f1(pred, r) for r in refs)


def _parses_to(emission: str, kind) -> bool:
    try:
        return isinstance(parse_policy_turn(emission).action, kind)
    except ProtocolError:
        return False


def turn_indicator(exchange) -> int:
    """1 iff the turn had non-empty reasoning and a parseable Continue with role and request."""
    try:
        turn = parse_policy_turn(exchange.emission)
    except ProtocolError:
        return 0
    if not isinstance(turn.action, Continue):
        return 0
    call = turn.action.call
    return int(bool(turn.reasoning.strip()) and bool(call.agent_role.strip()) and bool(call.prompt.strip()))


def boundary_valid(exchanges) -> int:
    for ex in exchanges:
        request = f"{ex.role}: {ex.request}"
        try:
            if split_exchange(encapsulate_exchange(request, ex.feedback)) != (request, ex.feedback):
                return 0
        except ProtocolError:
            return 0
    return 1


def terminal_valid(final_emission: str) -> int:
    if final_emission.count(ANSWER_OPEN) != 1 or final_emission.count(ANSWER_CLOSE) != 1:
        return 0
    return int(_parses_to(final_emission, Finalize))


def format_indicators(trajectory) -> tuple[list[int], int, int, int]:
    T = trajectory.terminal_turn
    by_turn = {ex.turn_index: ex for ex in trajectory.exchanges}
    lambdas = [turn_indicator(by_turn[t]) if t in by_turn else 0 for t in range(1, T)]
    b_m = boundary_valid(trajectory.exchanges)
    b_v = terminal_valid(trajectory.final_emission)
    i_c = int(
        trajectory.termination is not Termination.MALFORMED_ABORT
        and bool(trajectory.final_answer.strip())
        and all(_parses_to(ex.emission, Continue) for ex in trajectory.exchanges)
    )
    return lambdas, b_m, b_v, i_c


def weighted_format_sum(lambdas: Sequence[int], b_m: int, b_v: int, i_c: int, T: int, config: RewardConfig) -> float:
    if T <= 1:
        intermediate = config.alpha_total  # no intermediate turns: granted in full
    else:
        intermediate = config.alpha_total / (T - 1) * sum(lambdas)
    return intermediate + config.beta * b_m + config.gamma * b_v + config.delta * i_c


def cap_format(raw_sum: float, config: RewardConfig) -> tuple[float, bool]:
    """Clamp at kappa; the gate is open iff the unclamped sum reaches kappa."""
    gate = raw_sum >= config.kappa * (1 - GATE_RTOL)
    return (config.kappa if gate else raw_sum), gate


def format_reward(trajectory, config: RewardConfig = RewardConfig()) -> RewardBreakdown:
    lambdas, b_m, b_v, i_c = format_indicators(trajectory)
    raw = weighted_format_sum(lambdas, b_m, b_v, i_c, trajectory.terminal_turn, config)
    r_fmt, gate = cap_format(raw, config)
    return RewardBreakdown(lambdas, b_m, b_v, i_c, r_fmt=r_fmt, gate_open=gate)


def aggregate_reward(r_fmt: float, r_prec: float, config: RewardConfig = RewardConfig()) -> float:
    k = config.kappa
    if r_fmt >= k:
        return -k + k + r_prec
    return -k + r_fmt


def score_trajectory(trajectory, refs: Sequence[str], config: RewardConfig = RewardConfig()) -> RewardBreakdown:
    """Full reward breakdown for a finished trajectory against its references."""
    rb = format_reward(trajectory, config)
    if trajectory.termination is Termination.MALFORMED_ABORT:
        rb.r_prec = 0.0
    else:
        rb.r_prec = precision_reward(trajectory.final_answer, refs)
    rb.r_total = aggregate_reward(rb.r_fmt, rb.r_prec, config)
    first = trajectory.exchanges[0].emission if trajectory.exchanges else trajectory.final_emission
    try:
        rb.first_think_within_budget = check_think_budget(parse_policy_turn(first).reasoning, True).within_budget
    except ProtocolError:
        pass
    return rb
