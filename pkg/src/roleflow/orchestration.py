"""Coordinator/executor episode loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .backends import BackendHandle, ChatMessage, SamplingParams, complete, executor_system_prompt
from .dialogue import (
    ROLE_TAXONOMY,
    ContextOverflow,
    DialogueHistory,
    Exchange,
    append_exchange,
    default_repertoire_hint,
    estimate_tokens,
    render_encoding,
)
from .protocol import Finalize, ProtocolError, parse_policy_turn

log = logging.getLogger(__name__)

POLICY_SYSTEM_PROMPT = """\
You coordinate a team of language-model agents to answer the question below.
Each of your replies is exactly one step:

<think>your reasoning about the question and the responses so far</think>
followed by either
<interaction_prompt>{"name": "prompt_dynamic", "arguments": {"prompt": "<request>", "agent_role": "<role>"}}</interaction_prompt>
to ask an agent with a role of your choosing, or
<answer>the final answer</answer>
when you are done.

On the first step keep the <think> block under 80 words and only restate what the question needs.
Agent replies are shown inside <interaction_response> blocks. Make every request build on the previous ones."""

ASSEMBLY_INSTRUCTION = (
    "The interaction budget is used up. Using the full history above, reply now with one "
    "<think> block followed by one <answer> block containing only the final answer."
)

CORRECTIVE_INSTRUCTION = (
    "Your previous reply could not be parsed ({kind}). Reply again with one <think> block "
    "followed by exactly one <interaction_prompt> or <answer> block."
)

EXECUTOR_PARAMS = SamplingParams(temperature=0.0, max_tokens=1024)


class Termination(str, Enum):
    POLICY_FINALIZE = "PolicyFinalize"
    TURN_CAP_ASSEMBLY = "TurnCapAssembly"
    MALFORMED_ABORT = "MalformedAbort"


class EmptyFeedback(RuntimeError):
    pass


class MalformedAbort(RuntimeError):
    pass


class EpisodeError(RuntimeError):
    """A backend failure during an episode, tagged with the turn it happened in."""

    def __init__(self, turn: int, cause: BaseException):
        self.turn = turn
        self.cause = cause
        super().__init__(f"turn {turn}: {type(cause).__name__}: {cause}")


@dataclass(frozen=True)
class EpisodeConfig:
    max_turns: int = 5
    token_budget: int = 8192
    on_malformed: str = "retry_once"
    seed: int = 0
    policy_temperature: float = 0.0
    policy_max_tokens: int = 1024

    def __post_init__(self):
        if self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")
        if self.token_budget < 1:
            raise ValueError("token_budget must be >= 1")
        if self.on_malformed not in ("retry_once", "force_finalize"):
            raise ValueError(f"on_malformed must be retry_once or force_finalize, got {self.on_malformed!r}")


@dataclass
class Trajectory:
    question: str
    exchanges: list[Exchange] = field(default_factory=list)
    final_answer: str = ""
    terminal_turn: int = 0
    termination: Termination = Termination.POLICY_FINALIZE
    final_emission: str = ""
    # one list per policy call, in call order (assembly included); None if unavailable
    per_turn_token_logprobs: Optional[list[list[float]]] = None
    policy_tokens: list[int] = field(default_factory=lambda: [0, 0])
    executor_tokens: list[int] = field(default_factory=lambda: [0, 0])
    malformed_attempts: int = 0
    max_context_tokens: int = 0
    policy_calls: int = 0
    notes: list[str] = field(default_factory=list)

    def log_probability(self) -> float:
        """Sum of per-turn sums of token log-probs (additive decomposition)."""
        if self.per_turn_token_logprobs is None:
            raise ValueError("no log-probabilities recorded")
        return sum(sum(turn) for turn in self.per_turn_token_logprobs)

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "exchanges": [e.to_dict() for e in self.exchanges],
            "final_answer": self.final_answer,
            "terminal_turn": self.terminal_turn,
            "termination": self.termination.value,
            "final_emission": self.final_emission,
            "per_turn_token_logprobs": self.per_turn_token_logprobs,
            "policy_tokens": list(self.policy_tokens),
            "executor_tokens": list(self.executor_tokens),
            "malformed_attempts": self.malformed_attempts,
            "max_context_tokens": self.max_context_tokens,
            "policy_calls": self.policy_calls,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        d = dict(d)
        d["exchanges"] = [Exchange.from_dict(e) for e in d.get("exchanges", [])]
        d["termination"] = Termination(d["termination"])
        return cls(**d)


def classify_role(role: str) -> str:
    """Map a free-form role string onto its taxonomy category."""
    if not role or not role.strip():
        raise ValueError("role must be non-empty")
    low = role.lower()
    keywords = {
        "Information Gathering": ("researcher", "domain expert"),
        "Planning": ("planner", "strategist"),
        "Domain Solving": ("solver", "coder", "psychologist"),
        "Verification": ("verifier", "clarifier"),
        "Critique": ("critiquer", "critic"),
        "Synthesis": ("assistant",),
    }
    for category, _, _ in ROLE_TAXONOMY:
        if any(k in low for k in keywords[category]):
            return category
    return "Domain Solving"


def executor_messages(role: str, request: str, history: DialogueHistory) -> list[ChatMessage]:
    msgs = [ChatMessage("system", executor_system_prompt(role))]
    for ex in history.exchanges:
        msgs.append(ChatMessage("user", ex.request))
        msgs.append(ChatMessage("assistant", ex.feedback))
    msgs.append(ChatMessage("user", request))
    return msgs


def route_request(role: str, request: str, history: DialogueHistory, executor: BackendHandle):
    """Send a role-tagged request to the executor; returns the CompletionResult."""
    if not role.strip() or not request.strip():
        raise ValueError("role and request must be non-empty")
    result = complete(executor, executor_messages(role, request, history), EXECUTOR_PARAMS)
    if not result.content.strip():
        raise EmptyFeedback(f"executor returned an empty completion for role {role!r}")
    return result


class _Episode:
    def __init__(self, question: str, policy: BackendHandle, executor: BackendHandle,
                 config: EpisodeConfig, repertoire_hint: Optional[str]):
        self.policy = policy
        self.executor = executor
        self.config = config
        self.history = DialogueHistory(
            question, repertoire_hint if repertoire_hint is not None else default_repertoire_hint()
        )
        self.traj = Trajectory(question=question, per_turn_token_logprobs=[])
        self.params = SamplingParams(config.policy_temperature, config.policy_max_tokens, logprobs=True, seed=config.seed)
        self.system_budget = estimate_tokens(POLICY_SYSTEM_PROMPT)

    def _policy_messages(self, instruction: Optional[str] = None, extra: int = 0) -> list[ChatMessage]:
        reserve = self.system_budget + (estimate_tokens(instruction) if instruction else 0) + extra
        budget = self.config.token_budget - reserve
        if budget <= 0:
            raise ContextOverflow(f"no room for the history: {reserve} tokens reserved of {self.config.token_budget}")
        enc = render_encoding(self.history, budget)
        user = enc.rendered if instruction is None else enc.rendered + "\n" + instruction
        msgs = [ChatMessage("system", POLICY_SYSTEM_PROMPT), ChatMessage("user", user)]
        return msgs

    def _retry_messages(self, instruction: Optional[str], raw: str, corrective: str) -> list[ChatMessage]:
        # the retry echoes the bad emission; keep the whole call inside the budget
        try:
            head = self._policy_messages(instruction, estimate_tokens(raw) + estimate_tokens(corrective))
        except ContextOverflow:
            # echo does not fit: send the corrective note without it
            system, user = self._policy_messages(instruction, estimate_tokens(corrective))
            return [system, ChatMessage("user", user.content + "\n" + corrective)]
        return head + [ChatMessage("assistant", raw), ChatMessage("user", corrective)]

    def _call_policy(self, messages: list[ChatMessage], turn: int) -> str:
        ctx = sum(estimate_tokens(m.content) for m in messages)
        self.traj.max_context_tokens = max(self.traj.max_context_tokens, ctx)
        try:
            result = complete(self.policy, messages, self.params)
        except Exception as exc:
            raise EpisodeError(turn, exc) from exc
        self.traj.policy_calls += 1
        self.traj.policy_tokens[0] += result.prompt_tokens
        self.traj.policy_tokens[1] += result.completion_tokens
        lps = result.logprob_values
        if lps is None:
            self.traj.per_turn_token_logprobs = None
        elif self.traj.per_turn_token_logprobs is not None:
            self.traj.per_turn_token_logprobs.append(lps)
        return result.content

    def _emit(self, turn: int, instruction: Optional[str] = None):
        """Obtain a parseable emission, applying the malformed-output policy.

        Returns (raw, parsed) or (raw, None) when the emission stays malformed.
        """
        messages = self._policy_messages(instruction)
        raw = self._call_policy(messages, turn)
        try:
            return raw, parse_policy_turn(raw)
        except ProtocolError as err:
            self.traj.malformed_attempts += 1
            log.info("turn %d: malformed policy output: %s", turn, err)
            if self.config.on_malformed != "retry_once":
                return raw, None
            retry = self._retry_messages(instruction, raw, CORRECTIVE_INSTRUCTION.format(kind=err.kind.value))
            raw = self._call_policy(retry, turn)
            try:
                return raw, parse_policy_turn(raw)
            except ProtocolError as err2:
                self.traj.malformed_attempts += 1
                log.info("turn %d: malformed again: %s", turn, err2)
                return raw, None

    def _abort(self, turn: int, raw: str) -> Trajectory:
        self.traj.termination = Termination.MALFORMED_ABORT
        self.traj.terminal_turn = turn
        self.traj.final_emission = raw
        self.traj.final_answer = ""
        return self.traj

    def _finish(self, turn: int, raw: str, answer: str, how: Termination) -> Trajectory:
        self.traj.termination = how
        self.traj.terminal_turn = turn
        self.traj.final_emission = raw
        self.traj.final_answer = answer
        return self.traj

    def assemble(self, turn: int) -> Trajectory:
        raw, parsed = self._emit(turn, ASSEMBLY_INSTRUCTION)
        if parsed is None or not isinstance(parsed.action, Finalize):
            return self._abort(turn, raw)
        self.traj.notes.append(f"final assembly counted within turn {turn}")
        return self._finish(turn, raw, parsed.action.answer, Termination.TURN_CAP_ASSEMBLY)

    def run(self) -> Trajectory:
        cap = self.config.max_turns
        for turn in range(1, cap):
            raw, parsed = self._emit(turn)
            if parsed is None:
                if self.config.on_malformed == "force_finalize":
                    return self.assemble(turn)
                return self._abort(turn, raw)
            if isinstance(parsed.action, Finalize):
                return self._finish(turn, raw, parsed.action.answer, Termination.POLICY_FINALIZE)
            call = parsed.action.call
            if not call.is_known_tool:
                self.traj.notes.append(f"turn {turn}: unknown tool name {call.name!r}")
            try:
                result = route_request(call.agent_role, call.prompt, self.history, self.executor)
            except Exception as exc:
                raise EpisodeError(turn, exc) from exc
            self.traj.executor_tokens[0] += result.prompt_tokens
            self.traj.executor_tokens[1] += result.completion_tokens
            ex = Exchange(turn, parsed.reasoning, call.agent_role, call.prompt, result.content,
                          emission=raw, tool_name=call.name)
            self.history = append_exchange(self.history, ex)
            self.traj.exchanges.append(ex)
        return self.assemble(cap)


def run_episode(question: str, policy: BackendHandle, executor: BackendHandle,
                config: EpisodeConfig = EpisodeConfig(), repertoire_hint: Optional[str] = None) -> Trajectory:
    """Run one coordinator episode to completion.

    Turns 1..max_turns-1 are ordinary policy steps; if none of them
    finalizes, turn max_turns is a forced final assembly over the full
    history. Backend failures propagate as :class:`EpisodeError`.
    """
    return _Episode(question, policy, executor, config, repertoire_hint).run()


def assemble_final(question: str, history: DialogueHistory, policy: BackendHandle,
                   config: EpisodeConfig = EpisodeConfig()) -> str:
    """One policy call demanding an answer conditioned on the full history."""
    ep = _Episode(question, policy, policy, config, history.repertoire_hint)
    ep.history = history
    traj = ep.assemble(len(history) + 1)
    if traj.termination is Termination.MALFORMED_ABORT:
        raise MalformedAbort("final assembly did not produce an answer block")
    return traj.final_answer


def render_transcript(traj: Trajectory) -> str:
    lines = [f"Question: {traj.question}"]
    for ex in traj.exchanges:
        lines.append(f"[{ex.turn_index}] {ex.role}: {ex.request}")
        lines.append(f"    -> {ex.feedback}")
    lines.append(f"[{traj.terminal_turn}] {traj.termination.value}: {traj.final_answer}")
    return "\n".join(lines)


def episode_policy_messages(history: DialogueHistory, config: EpisodeConfig) -> Sequence[ChatMessage]:
    """The messages the policy sees for the next ordinary turn (for inspection/tests)."""
    ep = _Episode(history.question, None, None, config, history.repertoire_hint)  # type: ignore[arg-type]
    ep.history = history
    return ep._policy_messages()
