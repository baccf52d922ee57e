"""Tagged turn grammar spoken by the coordinator policy.

A policy emission is one ``<think>`` block followed by exactly one action
block: either ``<interaction_prompt>`` carrying a JSON tool payload, or
``<answer>`` carrying the final answer. Tags are flat, case-sensitive, and a
block ends at the first matching close tag.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional, Union

THINK_OPEN, THINK_CLOSE = "<think>", "</think>"
PROMPT_OPEN, PROMPT_CLOSE = "<interaction_prompt>", "</interaction_prompt>"
RESPONSE_OPEN, RESPONSE_CLOSE = "<interaction_response>", "</interaction_response>"
ANSWER_OPEN, ANSWER_CLOSE = "<answer>", "</answer>"
QUERY_OPEN, QUERY_CLOSE = "<query>", "</query>"
REPLY_OPEN, REPLY_CLOSE = "<reply>", "</reply>"

ALL_TAGS = (
    THINK_OPEN, THINK_CLOSE,
    PROMPT_OPEN, PROMPT_CLOSE,
    RESPONSE_OPEN, RESPONSE_CLOSE,
    ANSWER_OPEN, ANSWER_CLOSE,
    QUERY_OPEN, QUERY_CLOSE,
    REPLY_OPEN, REPLY_CLOSE,
)

DYNAMIC_PROMPT_TOOL = "prompt_dynamic"
KNOWN_TOOLS = frozenset({DYNAMIC_PROMPT_TOOL})

FIRST_TURN_THINK_LIMIT = 80


class ErrorKind(str, Enum):
    MISSING_THINK = "MissingThink"
    MISSING_ACTION = "MissingAction"
    MALFORMED_TOOL_PAYLOAD = "MalformedToolPayload"
    UNBALANCED_TAGS = "UnbalancedTags"
    BOTH_ACTIONS = "BothActions"


class ProtocolError(ValueError):
    """A policy emission that does not follow the turn grammar.

    ``span`` is a ``(start, end)`` pair of character offsets into the raw text
    pointing at the offending region.
    """

    def __init__(self, kind: ErrorKind, span: tuple[int, int], detail: str = ""):
        self.kind = ErrorKind(kind)
        self.span = span
        self.detail = detail
        msg = f"{self.kind.value} at {span[0]}:{span[1]}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


@dataclass(frozen=True)
class ToolCall:
    prompt: str
    agent_role: str
    name: str = DYNAMIC_PROMPT_TOOL

    @property
    def is_known_tool(self) -> bool:
        return self.name in KNOWN_TOOLS

    def to_payload(self) -> dict:
        return {"name": self.name, "arguments": {"prompt": self.prompt, "agent_role": self.agent_role}}


@dataclass(frozen=True)
class Continue:
    call: ToolCall


@dataclass(frozen=True)
class Finalize:
    answer: str


Action = Union[Continue, Finalize]


@dataclass(frozen=True)
class ParsedTurn:
    reasoning: str
    action: Action

    @property
    def is_final(self) -> bool:
        return isinstance(self.action, Finalize)


def _block(raw: str, open_tag: str, close_tag: str, start: int = 0) -> Optional[tuple[int, int, int]]:
    """Locate the first ``open_tag ... close_tag`` block at or after ``start``.

    Returns ``(open_index, body_end, block_end)`` or None when the open tag is
    absent. Raises UnbalancedTags when the open tag has no closing partner.
    """
    i = raw.find(open_tag, start)
    if i < 0:
        return None
    body = i + len(open_tag)
    j = raw.find(close_tag, body)
    if j < 0:
        raise ProtocolError(ErrorKind.UNBALANCED_TAGS, (i, len(raw)), f"no {close_tag}")
    return i, j, j + len(close_tag)


def parse_tool_payload(text: str, span: tuple[int, int] = (0, 0)) -> ToolCall:
    def bad(detail: str) -> ProtocolError:
        return ProtocolError(ErrorKind.MALFORMED_TOOL_PAYLOAD, span, detail)

    try:
        obj = json.loads(text)
    except (ValueError, RecursionError) as exc:
        raise bad(f"invalid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise bad("payload is not an object")
    name = obj.get("name")
    args = obj.get("arguments")
    if not isinstance(name, str):
        raise bad("name must be a string")
    if not isinstance(args, dict):
        raise bad("arguments must be an object")
    prompt, role = args.get("prompt"), args.get("agent_role")
    if not isinstance(prompt, str) or not isinstance(role, str):
        raise bad("arguments.prompt and arguments.agent_role must be strings")
    if not prompt.strip():
        raise bad("empty prompt")
    if not role.strip():
        raise bad("empty agent_role")
    return ToolCall(prompt=prompt, agent_role=role, name=name)


def parse_policy_turn(raw: str) -> ParsedTurn:
    """Parse one complete policy emission.

    >>> parse_policy_turn("<think>done</think><answer>No</answer>").action
    Finalize(answer='No')
    """
    if not isinstance(raw, str):
        raise TypeError(f"expected str, got {type(raw).__name__}")
    think = _block(raw, THINK_OPEN, THINK_CLOSE)
    if think is None:
        raise ProtocolError(ErrorKind.MISSING_THINK, (0, len(raw)))
    t_open, t_body_end, t_end = think
    reasoning = raw[t_open + len(THINK_OPEN):t_body_end]

    p_at = raw.find(PROMPT_OPEN, t_end)
    a_at = raw.find(ANSWER_OPEN, t_end)
    if p_at >= 0 and a_at >= 0:
        raise ProtocolError(ErrorKind.BOTH_ACTIONS, (min(p_at, a_at), len(raw)))
    if p_at < 0 and a_at < 0:
        raise ProtocolError(ErrorKind.MISSING_ACTION, (t_end, len(raw)))

    if p_at >= 0:
        i, body_end, _ = _block(raw, PROMPT_OPEN, PROMPT_CLOSE, t_end)
        body_start = i + len(PROMPT_OPEN)
        call = parse_tool_payload(raw[body_start:body_end], (body_start, body_end))
        return ParsedTurn(reasoning, Continue(call))

    i, body_end, _ = _block(raw, ANSWER_OPEN, ANSWER_CLOSE, t_end)
    answer = raw[i + len(ANSWER_OPEN):body_end]
    if not answer.strip():
        raise ProtocolError(ErrorKind.MISSING_ACTION, (i, body_end), "empty answer")
    return ParsedTurn(reasoning, Finalize(answer))


def contains_tag(text: str) -> bool:
    return any(tag in text for tag in ALL_TAGS)


def _reject_tags(field: str, text: str) -> None:
    if contains_tag(text):
        raise ValueError(f"{field} contains a literal protocol tag")


def serialize_policy_turn(turn: ParsedTurn) -> str:
    _reject_tags("reasoning", turn.reasoning)
    head = THINK_OPEN + turn.reasoning + THINK_CLOSE
    action = turn.action
    if isinstance(action, Finalize):
        if not action.answer.strip():
            raise ValueError("Finalize answer must be non-empty")
        _reject_tags("answer", action.answer)
        return head + ANSWER_OPEN + action.answer + ANSWER_CLOSE
    call = action.call
    if not call.prompt.strip() or not call.agent_role.strip():
        raise ValueError("tool call needs a non-empty prompt and agent_role")
    payload = json.dumps(call.to_payload(), ensure_ascii=False, separators=(",", ":"))
    _reject_tags("tool payload", payload)
    return head + PROMPT_OPEN + payload + PROMPT_CLOSE


def encapsulate_exchange(request: str, reply: str) -> str:
    return QUERY_OPEN + request + QUERY_CLOSE + REPLY_OPEN + reply + REPLY_CLOSE


def split_exchange(text: str) -> tuple[str, str]:
    """Inverse of :func:`encapsulate_exchange`; the whole text must be one pair."""
    q = _block(text, QUERY_OPEN, QUERY_CLOSE)
    if q is None or q[0] != 0:
        raise ProtocolError(ErrorKind.UNBALANCED_TAGS, (0, len(text)), "expected leading <query>")
    r = _block(text, REPLY_OPEN, REPLY_CLOSE, q[2])
    if r is None or r[0] != q[2] or r[2] != len(text):
        raise ProtocolError(ErrorKind.UNBALANCED_TAGS, (q[2], len(text)), "expected trailing <reply> block")
    return text[len(QUERY_OPEN):q[1]], text[r[0] + len(REPLY_OPEN):r[1]]


def wrap_response(feedback: str) -> str:
    return RESPONSE_OPEN + feedback + RESPONSE_CLOSE


class ThinkBudget(NamedTuple):
    words: int
    within_budget: bool


def check_think_budget(reasoning: str, is_first_turn: bool) -> ThinkBudget:
    # advisory only, never rejects the turn
    words = len(reasoning.split())
    return ThinkBudget(words, (not is_first_turn) or words <= FIRST_TURN_THINK_LIMIT)
