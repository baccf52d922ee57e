import json

import httpx
import pytest

from roleflow.backends import (
    CassetteBackend,
    CassetteExhausted,
    CassetteMismatch,
    ChatMessage,
    CompletionResult,
    HttpChatBackend,
    RecordingBackend,
    SamplingParams,
    TransportError,
    WireFormatError,
    complete,
    executor_system_prompt,
    fingerprint,
    parse_chat_response,
    record_or_replay,
)

MSGS = [ChatMessage("system", "s"), ChatMessage("user", "hello")]


def ok_body(content="fine", logprobs=None):
    choice = {"message": {"role": "assistant", "content": content}}
    if logprobs is not None:
        choice["logprobs"] = {"content": [{"token": t, "logprob": lp} for t, lp in logprobs]}
    return {"choices": [choice], "usage": {"prompt_tokens": 5, "completion_tokens": 2}}


def http_backend(handler, **kw):
    sleeps = []
    backend = HttpChatBackend("http://test/v1", "m", transport=httpx.MockTransport(handler),
                              sleep=sleeps.append, **kw)
    return backend, sleeps


def test_retry_on_429_then_success():
    calls = []

    def handler(request):
        calls.append(json.loads(request.content))
        if len(calls) == 1:
            return httpx.Response(429)
        return httpx.Response(200, json=ok_body("hi"))

    backend, sleeps = http_backend(handler)
    res = backend.complete(MSGS, SamplingParams(seed=7))
    assert res.content == "hi" and res.prompt_tokens == 5
    assert len(calls) == 2 and sleeps == [0.5]
    assert calls[0]["seed"] == 7 and calls[0]["temperature"] == 0.0
    assert calls[0]["messages"][1] == {"role": "user", "content": "hello"}


def test_gives_up_after_max_attempts():
    backend, sleeps = http_backend(lambda r: httpx.Response(503), max_attempts=3)
    with pytest.raises(TransportError):
        backend.complete(MSGS)
    assert sleeps == [0.5, 1.0]


def test_client_error_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400, text="bad")

    backend, _ = http_backend(handler)
    with pytest.raises(TransportError):
        backend.complete(MSGS)
    assert len(calls) == 1


def test_api_key_from_env(monkeypatch):
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json=ok_body())

    monkeypatch.setenv("ORCH_EXEC_API_KEY", "sk-test")
    backend, _ = http_backend(handler, api_key_env="ORCH_EXEC_API_KEY")
    backend.complete(MSGS)
    assert seen["auth"] == "Bearer sk-test"


def test_parse_chat_response():
    res = parse_chat_response(json.dumps(ok_body("x", [("a", -0.1), ("b", -0.2), ("c", -0.3)])))
    assert res.completion_tokens == 3 and res.logprob_values == [-0.1, -0.2, -0.3]
    with pytest.raises(WireFormatError):
        parse_chat_response(b"{}")
    with pytest.raises(WireFormatError):
        parse_chat_response(b"not json")


def test_completion_result_invariant():
    with pytest.raises(ValueError):
        CompletionResult("x", 1, 2, (("a", -1.0),))


def test_message_checks():
    with pytest.raises(ValueError):
        ChatMessage("tool", "x")
    with pytest.raises(ValueError):
        complete(CassetteBackend.scripted(["x"]), [])
    with pytest.raises(ValueError):
        complete(CassetteBackend.scripted(["x"]), [ChatMessage("user", "a"), ChatMessage("system", "b")])


def test_executor_prompt():
    assert executor_system_prompt("researcher").startswith("You are researcher. Please read the provided content")
    assert "You are Math Solver." in executor_system_prompt("Math Solver")
    with pytest.raises(ValueError):
        executor_system_prompt("")


def test_fingerprint():
    assert fingerprint(MSGS) == fingerprint(list(MSGS))
    assert fingerprint(MSGS) != fingerprint([ChatMessage("system", "s"), ChatMessage("user", "hellp")])
    assert fingerprint(MSGS) != fingerprint(MSGS[::-1])
    assert fingerprint([ChatMessage("user", "ab")]) != fingerprint([ChatMessage("user", "a"), ChatMessage("user", "b")])


def test_scripted_cassette_plays_in_order():
    backend = CassetteBackend.scripted(["one", "two"])
    assert backend.complete(MSGS).content == "one"
    assert backend.complete(MSGS).content == "two"
    with pytest.raises(CassetteExhausted):
        backend.complete(MSGS)


def test_record_then_replay(tmp_path):
    def handler(request):
        return httpx.Response(200, json=ok_body("live", [("l", -0.5), ("v", -0.25)]))

    live, _ = http_backend(handler)
    path = tmp_path / "c.jsonl"
    rec = record_or_replay(live, path)
    assert isinstance(rec, RecordingBackend)
    first = rec.complete(MSGS)

    replay = record_or_replay(None, path, strict=True)
    assert isinstance(replay, CassetteBackend)
    assert replay.complete(MSGS) == first


def test_strict_replay_mismatch(tmp_path):
    path = tmp_path / "c.jsonl"
    RecordingBackend(CassetteBackend.scripted(["x"]), path).complete(MSGS)
    replay = CassetteBackend.from_file(path, strict=True)
    with pytest.raises(CassetteMismatch):
        replay.complete([ChatMessage("user", "different")])


def test_record_or_replay_needs_something(tmp_path):
    with pytest.raises(FileNotFoundError):
        record_or_replay(None, tmp_path / "missing.jsonl")
