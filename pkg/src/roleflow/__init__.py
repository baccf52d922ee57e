"""Coordinator/executor multi-agent runtime with a layered reward and A-GRPO objective."""

from .backends import (
    CassetteBackend,
    ChatMessage,
    CompletionResult,
    HttpChatBackend,
    SamplingParams,
    executor_system_prompt,
    fingerprint,
)
from .dialogue import DialogueHistory, Exchange, append_exchange, render_encoding
from .metrics import cosine_similarity, exact_match, token_f1
from .orchestration import EpisodeConfig, Termination, Trajectory, classify_role, run_episode
from .protocol import ParsedTurn, ProtocolError, ToolCall, parse_policy_turn, serialize_policy_turn
from .reward import RewardConfig, aggregate_reward, format_reward, precision_reward, score_trajectory
from .rl import GrpoConfig, RLBatch, agrpo_objective, normalize_advantages
from .toy import ToyRolePolicy, train_toy_policy

__version__ = "0.1.0"

__all__ = [
    "CassetteBackend", "ChatMessage", "CompletionResult", "HttpChatBackend", "SamplingParams",
    "executor_system_prompt", "fingerprint",
    "DialogueHistory", "Exchange", "append_exchange", "render_encoding",
    "cosine_similarity", "exact_match", "token_f1",
    "EpisodeConfig", "Termination", "Trajectory", "classify_role", "run_episode",
    "ParsedTurn", "ProtocolError", "ToolCall", "parse_policy_turn", "serialize_policy_turn",
    "RewardConfig", "aggregate_reward", "format_reward", "precision_reward", "score_trajectory",
    "GrpoConfig", "RLBatch", "agrpo_objective", "normalize_advantages",
    "ToyRolePolicy", "train_toy_policy",
]
