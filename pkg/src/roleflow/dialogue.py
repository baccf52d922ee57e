"""Collaborative history and its text encoding for the coordinator context."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .protocol import THINK_CLOSE, THINK_OPEN, encapsulate_exchange, wrap_response

FEEDBACK_ELIDED = "[feedback elided]"
REASONING_ELIDED = "[reasoning elided]"
REQUEST_ELIDED = "[request elided]"
TRUNCATED_MARK = " [truncated]"

# (category, example roles, stage)
ROLE_TAXONOMY = (
    ("Information Gathering", ("researcher", "domain expert"), "early"),
    ("Planning", ("planner", "strategist"), "early"),
    ("Domain Solving", ("math solver", "coder", "psychologist"), "middle"),
    ("Verification", ("verifier", "clarifier"), "late"),
    ("Critique", ("critiquer",), "late"),
    ("Synthesis", ("assistant",), "terminal"),
)


def default_repertoire_hint() -> str:
    lines = ["Agent roles are free-form strings. Roles seen to work well:"]
    for category, roles, stage in ROLE_TAXONOMY:
        lines.append(f"- {category} ({stage}): {', '.join(roles)}")
    return "\n".join(lines)


class HistoryError(ValueError):
    pass


class ContextOverflow(ValueError):
    """The parts of the context that are never elided already exceed the budget."""


def estimate_tokens(text: str) -> int:
    """Whitespace words times 1.3, rounded up (integer arithmetic, no float drift)."""
    words = len(text.split())
    return (13 * words + 9) // 10


@dataclass(frozen=True)
class Exchange:
    turn_index: int
    reasoning: str
    role: str
    request: str
    feedback: str
    emission: str = ""  # raw policy text that produced this exchange
    tool_name: str = "prompt_dynamic"

    def __post_init__(self):
        if self.turn_index < 1:
            raise HistoryError(f"turn_index must be >= 1, got {self.turn_index}")
        if not self.role.strip() or not self.request.strip():
            raise HistoryError("role and request must be non-empty")

    def to_dict(self) -> dict:
        return {
            "turn_index": self.turn_index,
            "reasoning": self.reasoning,
            "role": self.role,
            "request": self.request,
            "feedback": self.feedback,
            "emission": self.emission,
            "tool_name": self.tool_name,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Exchange":
        return cls(**d)


@dataclass(frozen=True)
class DialogueHistory:
    question: str
    repertoire_hint: str = field(default_factory=default_repertoire_hint)
    exchanges: tuple[Exchange, ...] = ()

    def __post_init__(self):
        for i, ex in enumerate(self.exchanges, start=1):
            if ex.turn_index != i:
                raise HistoryError(f"turn indices must be contiguous from 1; position {i} has {ex.turn_index}")

    def __len__(self) -> int:
        return len(self.exchanges)


def append_exchange(history: DialogueHistory, exchange: Exchange) -> DialogueHistory:
    expected = len(history.exchanges) + 1
    if exchange.turn_index != expected:
        raise HistoryError(f"index gap: expected turn {expected}, got {exchange.turn_index}")
    return replace(history, exchanges=history.exchanges + (exchange,))


@dataclass(frozen=True)
class HistoryEncoding:
    rendered: str
    token_estimate: int
    elided_turns: tuple[int, ...] = ()


def render_header(question: str, repertoire_hint: str) -> str:
    return f"Question: {question}\n\n{repertoire_hint}\n"


def render_contribution(turn_index: int, reasoning: str, role: str, request: str, feedback: str) -> str:
    """The text one exchange adds to the encoding."""
    pair = encapsulate_exchange(f"{role}: {request}", feedback)
    return f"\nTurn {turn_index}\n{THINK_OPEN}{reasoning}{THINK_CLOSE}\n{wrap_response(pair)}\n"


def _render(history: DialogueHistory, parts: list[list[str]]) -> str:
    out = [render_header(history.question, history.repertoire_hint)]
    for ex, (reasoning, request, feedback) in zip(history.exchanges, parts):
        out.append(render_contribution(ex.turn_index, reasoning, ex.role, request, feedback))
    return "".join(out)


def _truncate_words(text: str, keep: int) -> str:
    words = text.split()
    if len(words) <= keep:
        return text
    return " ".join(words[:max(keep, 0)]) + TRUNCATED_MARK


def render_encoding(history: DialogueHistory, budget: int) -> HistoryEncoding:
    """Render the history deterministically, eliding old content when over budget.

    Elision order: feedback bodies oldest-first, then reasoning bodies
    oldest-first, then request bodies oldest-first (all excluding the newest
    exchange); finally the newest exchange's feedback and reasoning are cut
    down word-wise. The question and repertoire hint are never touched.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    parts = [[ex.reasoning, ex.request, ex.feedback] for ex in history.exchanges]
    text = _render(history, parts)
    if estimate_tokens(text) <= budget:
        return HistoryEncoding(text, estimate_tokens(text))

    elided: set[int] = set()
    older = range(len(parts) - 1)
    # slot index within parts[i] and its marker, in elision order
    for slot, marker in ((2, FEEDBACK_ELIDED), (0, REASONING_ELIDED), (1, REQUEST_ELIDED)):
        for i in older:
            if parts[i][slot] == marker:
                continue
            parts[i][slot] = marker
            elided.add(history.exchanges[i].turn_index)
            text = _render(history, parts)
            if estimate_tokens(text) <= budget:
                return HistoryEncoding(text, estimate_tokens(text), tuple(sorted(elided)))

    if parts:
        last = parts[-1]
        for slot in (2, 0):
            over = estimate_tokens(text) - budget
            if over <= 0:
                break
            words = len(last[slot].split())
            # each removed word frees at least one token of estimate; loop until it fits
            keep = max(words - over, 0)
            while True:
                last[slot] = _truncate_words(
                    history.exchanges[-1].feedback if slot == 2 else history.exchanges[-1].reasoning, keep
                )
                text = _render(history, parts)
                if estimate_tokens(text) <= budget or keep == 0:
                    break
                keep = max(keep - max(1, (estimate_tokens(text) - budget)), 0)
            elided.add(history.exchanges[-1].turn_index)

    tokens = estimate_tokens(text)
    if tokens > budget:
        raise ContextOverflow(f"context needs {tokens} tokens after full elision; budget is {budget}")
    return HistoryEncoding(text, tokens, tuple(sorted(elided)))


def contribution_of(exchange: Exchange) -> str:
    return render_contribution(
        exchange.turn_index, exchange.reasoning, exchange.role, exchange.request, exchange.feedback
    )


def question_with_context(question: str, context: Optional[str]) -> str:
    if not context:
        return question
    return f"{question}\n\nContext:\n{context}"
