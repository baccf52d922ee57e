"""Scripted replay fixtures: three worked multi-hop cases and a synthetic suite.

Each fixture is a dataset record plus two scripts (policy emissions and
executor replies) that can be written out as non-strict cassettes under
``<dir>/<record id>/{policy,executor}.jsonl``.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional
from urllib.parse import quote

from .backends import Cassette, CassetteEntry
from .protocol import Continue, Finalize, ParsedTurn, ToolCall, serialize_policy_turn


@dataclass
class Fixture:
    id: str
    question: str
    answers: list[str]
    policy: list[str]
    executor: list[str]
    metric: str = "em_f1"
    policy_logprobs: Optional[list[list[float]]] = None
    context: Optional[str] = None

    def record(self) -> dict:
        d = {"id": self.id, "question": self.question, "answers": self.answers, "metric": self.metric}
        if self.context:
            d["context"] = self.context
        return d


def ask(reasoning: str, role: str, request: str) -> str:
    return serialize_policy_turn(ParsedTurn(reasoning, Continue(ToolCall(request, role))))


def answer(reasoning: str, text: str) -> str:
    return serialize_policy_turn(ParsedTurn(reasoning, Finalize(text)))


def same_country_directors() -> Fixture:
    q = ("Do both Beauty and Bullets and In the Name of the King 3: The Last Mission films "
         "have the directors from the same country?")
    return Fixture(
        id="2wiki-3",
        question=q,
        answers=["No"],
        policy=[
            ask("Need the director of each film and each director's country.", "researcher", q),
            answer("Derrick Ku is from China and Uwe Boll from Germany, so the countries differ.", "No"),
        ],
        executor=[
            "Beauty and Bullets was directed by Derrick Ku (China). In the Name of the King 3 was "
            "directed by Uwe Boll (Germany). China and Germany differ, so the directors do not share a country.",
        ],
    )


def director_birthplace() -> Fixture:
    return Fixture(
        id="2wiki-case1",
        question="Where was the director of film A Zed & Two Noughts born?",
        answers=["Newport, Wales"],
        policy=[
            ask("First find who directed the film.", "researcher",
                "Who was the director of the film 'A Zed & Two Noughts'?"),
            ask("The director is Peter Greenaway; next hop is his birthplace.", "clarifier",
                "Where was Peter Greenaway born?"),
            answer("Greenaway was born in Newport, Monmouthshire, Wales.", "Newport, Monmouthshire, Wales"),
        ],
        executor=[
            "The film was directed by Peter Greenaway.",
            "Peter Greenaway was born in Newport, Monmouthshire, Wales, UK (5 April 1942).",
        ],
    )


def performer_nationality() -> Fixture:
    song = "You're My One And Only Love"
    return Fixture(
        id="2wiki-case2",
        question=f"What nationality is the performer of song {song}?",
        answers=["American"],
        policy=[
            ask("Identify the performer before naming a nationality.", "researcher",
                f"What nationality is the performer of song '{song}'?"),
            ask("The reply says American; confirm which artist is meant.", "clarifier",
                f"Verify the nationality of the artist for the song '{song}'."),
            answer("The performer is Jimmy Brown, born in Chicago, so American.", "American"),
        ],
        executor=[
            "The performer is American.",
            "The primary artist is Jimmy Brown (jazz vocalist), born in Chicago, Illinois, USA. Nationality: American.",
        ],
    )


def case_studies() -> list[Fixture]:
    return [same_country_directors(), director_birthplace(), performer_nationality()]


def record_dir(root: str | Path, record_id: str) -> Path:
    return Path(root) / quote(record_id, safe="")


def write_fixtures(fixtures: list[Fixture], root: str | Path, dataset_name: str = "dataset.jsonl") -> Path:
    """Write the dataset file and per-record cassettes; returns the dataset path."""
    root = Path(root)
    cassettes = root / "cassettes"
    root.mkdir(parents=True, exist_ok=True)
    dataset = root / dataset_name
    with open(dataset, "w", encoding="utf-8") as fh:
        for fx in fixtures:
            fh.write(json.dumps(fx.record(), ensure_ascii=False) + "\n")
            d = record_dir(cassettes, fx.id)
            d.mkdir(parents=True, exist_ok=True)
            lps = fx.policy_logprobs or [None] * len(fx.policy)
            Cassette([CassetteEntry(c, token_logprobs=[(f"t{i}", v) for i, v in enumerate(lp)] if lp else None)
                      for c, lp in zip(fx.policy, lps)]).dump(d / "policy.jsonl")
            Cassette([CassetteEntry(c) for c in fx.executor]).dump(d / "executor.jsonl")
    return dataset


# --- synthetic suite --------------------------------------------------------

WORDS = ("river", "castle", "violin", "orbit", "harbor", "copper", "meadow", "lantern",
         "glacier", "falcon", "ember", "quartz", "willow", "canyon", "saffron", "tundra")
ROLES = ("researcher", "planner", "math solver", "verifier", "clarifier", "critiquer", "domain expert")


@dataclass
class _Plan:
    kind: str
    n_turns: int = 0
    extra: dict = field(default_factory=dict)


def synthetic_fixture(i: int, rng: random.Random, max_turns: int = 5) -> Fixture:
    """One scripted episode drawn from a mix of behaviours.

    Kinds: finalize after k turns, never finalize (turn cap), malformed then
    recover, malformed twice (abort), summarization record with cosine metric.
    """
    gold = " ".join(rng.sample(WORDS, rng.randint(1, 3)))
    question = f"Synthetic question {i}: which words name item {i}?"
    kind = rng.choice(["finalize", "finalize", "cap", "recover", "abort", "cosine", "partial"])
    policy: list[str] = []
    executor: list[str] = []
    metric = "em_f1"
    n = rng.randint(0, max_turns - 1)
    if kind == "cap":
        n = max_turns - 1
    for t in range(1, n + 1):
        role = rng.choice(ROLES)
        if kind == "recover" and t == 1:
            policy.append("<think>forgot the action block</think>")
        policy.append(ask(f"step {t} toward item {i}", role, f"Tell me fact {t} about item {i}."))
        executor.append(f"Fact {t} about item {i}: " + " ".join(rng.sample(WORDS, 4)) + ".")
    if kind == "abort":
        policy.append("<think>still thinking")
        policy.append("<think>x</think><interaction_prompt>{not json}</interaction_prompt>")
        return Fixture(f"syn-{i:03d}", question, [gold], policy, executor)
    if kind == "cosine":
        metric = "cosine"
        final = " ".join(rng.sample(WORDS, 5))
    elif kind == "partial":
        final = gold + " " + rng.choice(WORDS)
    else:
        final = gold
    if kind == "recover" and n == 0:
        policy.append("<think>forgot the answer block</think>")
    policy.append(answer(f"done with item {i}", final))
    logprobs = [[round(-rng.random() * 2, 6) for _ in range(rng.randint(1, 6))] for _ in policy]
    return Fixture(f"syn-{i:03d}", question, [gold], policy, executor, metric=metric, policy_logprobs=logprobs)


def synthetic_suite(n: int = 50, seed: int = 0, max_turns: int = 5) -> list[Fixture]:
    rng = random.Random(seed)
    return [synthetic_fixture(i, rng, max_turns) for i in range(n)]
