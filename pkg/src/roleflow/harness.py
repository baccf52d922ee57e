"""Dataset ingestion, batch runner, trajectory persistence, scoring and reports."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from .backends import BackendHandle, CassetteBackend, HttpChatBackend, RecordingBackend
from .config import BackendSettings, RunConfig
from .dialogue import ContextOverflow, question_with_context
from .fixtures import record_dir
from .metrics import MetricKind, best_cosine, exact_match, percent, token_f1
from .orchestration import EpisodeError, Termination, Trajectory, run_episode
from .reward import RewardBreakdown, RewardConfig, score_trajectory

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TRAJECTORY_FILE = "trajectories.jsonl"
TIMING_FILE = "timings.jsonl"
REPORT_FILE = "report.csv"
REPORT_COLUMNS = ("dataset", "n", "em_percent", "f1_percent", "cosine_percent")

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


class DatasetError(ValueError):
    pass


class ScoreError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    question: str
    answers: tuple[str, ...]
    metric: MetricKind = MetricKind.EM_F1
    context: Optional[str] = None


def _record_from_json(obj, where: str) -> DatasetRecord:
    if not isinstance(obj, dict):
        raise DatasetError(f"{where}: record must be a JSON object")
    rid, question, answers = obj.get("id"), obj.get("question"), obj.get("answers")
    if not isinstance(rid, str) or not rid:
        raise DatasetError(f"{where}: 'id' must be a non-empty string")
    if not isinstance(question, str) or not question.strip():
        raise DatasetError(f"{where}: 'question' must be a non-empty string")
    if not isinstance(answers, list) or not answers:
        raise DatasetError(f"{where}: 'answers' must be a non-empty list")
    if not all(isinstance(a, str) for a in answers):
        raise DatasetError(f"{where}: every answer must be a string")
    try:
        metric = MetricKind(obj.get("metric", "em_f1"))
    except ValueError:
        raise DatasetError(f"{where}: 'metric' must be 'em_f1' or 'cosine'") from None
    context = obj.get("context")
    if context is not None and not isinstance(context, str):
        raise DatasetError(f"{where}: 'context' must be a string")
    return DatasetRecord(rid, question, tuple(answers), metric, context)


def load_dataset(path: str | os.PathLike) -> list[DatasetRecord]:
    records, seen = [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except ValueError as exc:
                raise DatasetError(f"{where}: invalid JSON: {exc}") from None
            rec = _record_from_json(obj, where)
            if rec.id in seen:
                raise DatasetError(f"{where}: duplicate id {rec.id!r} (first seen on line {seen[rec.id]})")
            seen[rec.id] = lineno
            records.append(rec)
    return records


# --- per-record scoring -----------------------------------------------------


def record_metrics(answer: str, rec_answers: Sequence[str], metric: MetricKind) -> dict:
    if metric is MetricKind.COSINE:
        return {"cosine": best_cosine(answer, rec_answers)}
    return {"em": exact_match(answer, rec_answers), "f1": token_f1(answer, rec_answers)}


def failed_metrics(metric: MetricKind) -> dict:
    if metric is MetricKind.COSINE:
        return {"cosine": 0.0}
    return {"em": 0, "f1": 0.0}


def score_record(traj: Optional[Trajectory], rec: DatasetRecord, reward_cfg: RewardConfig):
    if traj is None:
        return None, failed_metrics(rec.metric)
    rb = score_trajectory(traj, rec.answers, reward_cfg)
    if traj.termination is Termination.MALFORMED_ABORT:
        return rb, failed_metrics(rec.metric)
    return rb, record_metrics(traj.final_answer, rec.answers, rec.metric)


def build_record(rec: DatasetRecord, dataset: str, traj: Optional[Trajectory], reward_cfg: RewardConfig,
                 error: Optional[dict] = None) -> dict:
    rb, metrics = score_record(traj, rec, reward_cfg)
    tokens = None
    if traj is not None:
        tokens = {
            "policy_prompt": traj.policy_tokens[0], "policy_completion": traj.policy_tokens[1],
            "executor_prompt": traj.executor_tokens[0], "executor_completion": traj.executor_tokens[1],
        }
    return {
        "schema_version": SCHEMA_VERSION,
        "id": rec.id,
        "dataset": dataset,
        "question": rec.question,
        "answers": list(rec.answers),
        "metric": rec.metric.value,
        "trajectory": traj.to_dict() if traj is not None else None,
        "reward": rb.to_dict() if rb is not None else None,
        "metrics": metrics,
        "tokens": tokens,
        "error": error,
    }


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, ensure_ascii=False, sort_keys=True)


# --- reports ----------------------------------------------------------------


@dataclass
class AggregateReport:
    dataset: str
    n: int = 0
    em_percent: Optional[object] = None
    f1_percent: Optional[object] = None
    cosine_percent: Optional[object] = None
    failures: int = 0
    mean_reward: Optional[float] = None

    def row(self) -> dict:
        fmt = lambda v: "" if v is None else str(v)  # noqa: E731
        return {"dataset": self.dataset, "n": str(self.n), "em_percent": fmt(self.em_percent),
                "f1_percent": fmt(self.f1_percent), "cosine_percent": fmt(self.cosine_percent)}


def aggregate(records: Iterable[dict], dataset: str) -> AggregateReport:
    ems, f1s, coss, rewards = [], [], [], []
    n = failures = 0
    for r in records:
        n += 1
        m = r["metrics"]
        if "em" in m:
            ems.append(m["em"])
            f1s.append(m["f1"])
        if "cosine" in m:
            coss.append(m["cosine"])
        if r.get("reward") is not None:
            rewards.append(r["reward"]["r_total"])
        if is_failure(r):
            failures += 1
    mean_reward = sum(rewards) / len(rewards) if rewards else None
    return AggregateReport(dataset, n, percent(ems), percent(f1s), percent(coss), failures, mean_reward)


def is_failure(rec: dict) -> bool:
    if rec.get("error") is not None:
        return True
    traj = rec.get("trajectory")
    return traj is not None and traj["termination"] == Termination.MALFORMED_ABORT.value


def write_report_csv(reports: Sequence[AggregateReport], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for rep in reports:
            w.writerow(rep.row())


def read_records(path: str | os.PathLike) -> list[dict]:
    """Read a trajectory file; a truncated final line (interrupted write) is dropped."""
    path = Path(path)
    if not path.exists():
        return []
    out = []
    lines = path.read_text(encoding="utf-8").splitlines()
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except ValueError:
            if i == len(lines) - 1:
                log.warning("%s: dropping truncated last line", path)
                continue
            raise ScoreError(f"{path}:{i + 1}: invalid JSON") from None
        if rec.get("schema_version") != SCHEMA_VERSION:
            raise ScoreError(f"{path}:{i + 1}: schema_version {rec.get('schema_version')!r} != {SCHEMA_VERSION}")
        out.append(rec)
    return out


# --- runner -----------------------------------------------------------------

BackendFactory = Callable[[DatasetRecord], tuple[BackendHandle, BackendHandle]]


def _http(settings: BackendSettings) -> HttpChatBackend:
    if not settings.base_url:
        raise ValueError("live backend needs base_url (or use --cassette-dir to replay)")
    return HttpChatBackend(settings.base_url, settings.model, settings.api_key_env,
                           max_attempts=settings.max_attempts, backoff_base=settings.backoff_base,
                           timeout=settings.timeout)


def default_backend_factory(config: RunConfig) -> BackendFactory:
    """Live backends, cassette replay, or live-with-recording, per the run config."""
    replay = config.cassette_dir is not None and not config.record
    if replay or config.policy.kind == "cassette":
        if config.cassette_dir is None:
            raise ValueError("cassette backends need a cassette directory")

        def factory(rec: DatasetRecord):
            d = record_dir(config.cassette_dir, rec.id)
            return (CassetteBackend.from_file(d / "policy.jsonl", strict=config.replay_strict),
                    CassetteBackend.from_file(d / "executor.jsonl", strict=config.replay_strict))
        return factory

    policy, executor = _http(config.policy), _http(config.executor)
    if not config.record:
        return lambda rec: (policy, executor)

    def recording(rec: DatasetRecord):
        d = record_dir(config.cassette_dir, rec.id)
        return RecordingBackend(policy, d / "policy.jsonl"), RecordingBackend(executor, d / "executor.jsonl")
    return recording


def episode_seed(seed: int, record_id: str) -> int:
    h = hashlib.sha256(f"{seed}:{record_id}".encode("utf-8")).digest()
    return int.from_bytes(h[:4], "big") & 0x7FFFFFFF


def run_record(rec: DatasetRecord, dataset: str, config: RunConfig, factory: BackendFactory) -> dict:
    episode_cfg = dataclasses.replace(config.episode, seed=episode_seed(config.episode.seed, rec.id))
    question = question_with_context(rec.question, rec.context)
    traj, error = None, None
    try:
        policy, executor = factory(rec)
        traj = run_episode(question, policy, executor, episode_cfg)
    except EpisodeError as exc:
        error = {"kind": type(exc.cause).__name__, "message": str(exc.cause), "turn": exc.turn}
    except (ContextOverflow, OSError, ValueError) as exc:
        error = {"kind": type(exc).__name__, "message": str(exc), "turn": None}
    if error is not None:
        log.warning("record %s failed: %s", rec.id, error["message"])
    return build_record(rec, dataset, traj, config.reward, error)


@dataclass
class RunResult:
    records: list[dict]
    report: AggregateReport
    out_dir: Optional[Path]

    @property
    def exit_code(self) -> int:
        return EXIT_PARTIAL if any(is_failure(r) for r in self.records) else EXIT_OK


def run_benchmark(records: Sequence[DatasetRecord], config: RunConfig, dataset: str = "dataset",
                  out_dir: Optional[str | os.PathLike] = None,
                  backend_factory: Optional[BackendFactory] = None) -> RunResult:
    """Run every record with at most ``config.parallel`` concurrent episodes.

    Records are appended to ``trajectories.jsonl`` as they finish; ids already
    present are skipped, so an interrupted run resumes where it stopped. When
    the batch completes the file is rewritten in dataset order.
    """
    factory = backend_factory or default_backend_factory(config)
    out = Path(out_dir) if out_dir is not None else None
    done: dict[str, dict] = {}
    lock = threading.Lock()
    traj_path = timing_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        traj_path, timing_path = out / TRAJECTORY_FILE, out / TIMING_FILE
        wanted = {r.id for r in records}
        done = {r["id"]: r for r in read_records(traj_path) if r["id"] in wanted}
        _rewrite(traj_path, list(done.values()))
    todo = [r for r in records if r.id not in done]
    if done:
        log.info("resuming: %d of %d records already present", len(done), len(records))

    def work(rec: DatasetRecord) -> None:
        start = time.perf_counter()
        result = run_record(rec, dataset, config, factory)
        elapsed = time.perf_counter() - start
        with lock:
            done[rec.id] = result
            if traj_path is not None:
                with open(traj_path, "a", encoding="utf-8") as fh:
                    fh.write(dumps_record(result) + "\n")
                with open(timing_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"id": rec.id, "duration_s": elapsed}) + "\n")

    if config.parallel == 1:
        for rec in todo:
            work(rec)
    else:
        with ThreadPoolExecutor(max_workers=config.parallel) as pool:
            for fut in [pool.submit(work, rec) for rec in todo]:
                fut.result()

    ordered = [done[r.id] for r in records]
    report = aggregate(ordered, dataset)
    if out is not None:
        _rewrite(traj_path, ordered)
        write_report_csv([report], out / REPORT_FILE)
    return RunResult(ordered, report, out)


def _rewrite(path: Path, records: Sequence[dict]) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(dumps_record(r) + "\n")
    os.replace(tmp, path)


# --- offline rescoring --------------------------------------------------------


@dataclass
class ScoreResult:
    report: AggregateReport
    records: list[dict]
    mismatches: list[str]


def rescore_record(stored: dict, rec: DatasetRecord, reward_cfg: RewardConfig) -> dict:
    traj = Trajectory.from_dict(stored["trajectory"]) if stored.get("trajectory") is not None else None
    rebuilt = build_record(rec, stored.get("dataset", ""), traj, reward_cfg, stored.get("error"))
    return rebuilt


def score_trajectories(traj_path: str | os.PathLike, dataset_path: str | os.PathLike,
                       reward_cfg: RewardConfig = RewardConfig(), dataset: Optional[str] = None) -> ScoreResult:
    """Recompute rewards and metrics from stored trajectories, without any backend."""
    stored = read_records(traj_path)
    by_id = {r.id: r for r in load_dataset(dataset_path)}
    name = dataset or Path(dataset_path).stem
    rescored, mismatches = [], []
    for s in stored:
        rec = by_id.get(s["id"])
        if rec is None:
            raise ScoreError(f"trajectory id {s['id']!r} is not in {dataset_path}")
        new = rescore_record(s, rec, reward_cfg)
        for key in ("reward", "metrics"):
            if new[key] != s.get(key):
                mismatches.append(f"{s['id']}: stored {key} differs from recomputed value")
        rescored.append(new)
    return ScoreResult(aggregate(rescored, name), rescored, mismatches)


def report_from_file(traj_path: str | os.PathLike, dataset: Optional[str] = None) -> AggregateReport:
    stored = read_records(traj_path)
    name = dataset or (stored[0]["dataset"] if stored else Path(traj_path).parent.name)
    return aggregate(stored, name)


def reward_breakdown(stored: dict) -> Optional[RewardBreakdown]:
    return RewardBreakdown.from_dict(stored["reward"]) if stored.get("reward") else None
