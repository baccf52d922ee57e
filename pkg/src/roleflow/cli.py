"""Command-line entry point: run, replay, score, report, train-toy, grpo-export."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import harness
from .config import ConfigError, load_config
from .orchestration import Trajectory
from .rl import ExportRow, grouped_advantages, write_export
from .toy import train_toy_policy

log = logging.getLogger("roleflow")


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML/JSON run configuration")
    p.add_argument("--dataset", required=True, help="dataset JSONL")
    p.add_argument("--out", help="output directory (default: config out_dir)")
    p.add_argument("--parallel", type=int, help="concurrent episodes")
    p.add_argument("--cassette-dir", help="per-record cassette directory")
    p.add_argument("--replay-strict", action="store_true", help="require request fingerprints to match")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roleflow", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run episodes against live backends (optionally recording)")
    _add_run_args(run)
    run.add_argument("--record", action="store_true", help="record live calls into --cassette-dir")

    replay = sub.add_parser("replay", help="re-run a dataset purely from cassettes")
    _add_run_args(replay)

    score = sub.add_parser("score", help="recompute rewards/metrics from stored trajectories")
    score.add_argument("--config")
    score.add_argument("--dataset", required=True)
    score.add_argument("--out", required=True, help="run directory holding trajectories.jsonl")

    report = sub.add_parser("report", help="write report.csv from stored trajectory metrics")
    report.add_argument("--out", required=True)

    toy = sub.add_parser("train-toy", help="train the tabular toy policy with A-GRPO")
    toy.add_argument("--config")
    toy.add_argument("--seed", type=int, default=0)
    toy.add_argument("--iterations", type=int, default=500)
    toy.add_argument("--learning-rate", type=float, help="default: grpo.learning_rate x 1e3")
    toy.add_argument("--out", help="write the learning curve as JSON here")

    export = sub.add_parser("grpo-export", help="export rewards, advantages and log-probs as JSONL")
    export.add_argument("--config")
    export.add_argument("--out", required=True, help="run directory holding trajectories.jsonl")
    export.add_argument("--export", help="destination (default: <out>/rl_export.jsonl)")
    export.add_argument("--group-by", choices=("question", "batch"), default="question")
    return parser


def _run_config(args, *, replay: bool):
    cfg = load_config(args.config)
    changes = {}
    if args.parallel is not None:
        changes["parallel"] = args.parallel
    if args.out:
        changes["out_dir"] = args.out
    if args.cassette_dir:
        changes["cassette_dir"] = args.cassette_dir
    if args.replay_strict:
        changes["replay_strict"] = True
    if getattr(args, "record", False):
        if not args.cassette_dir and not cfg.cassette_dir:
            raise ConfigError("--record needs --cassette-dir")
        changes["record"] = True
    if args.seed is not None:
        changes["episode"] = dataclasses.replace(cfg.episode, seed=args.seed)
    cfg = dataclasses.replace(cfg, **changes)
    if replay:
        if not cfg.cassette_dir:
            raise ConfigError("replay needs --cassette-dir")
        cfg = dataclasses.replace(cfg, record=False)
    return cfg


def cmd_run(args, replay: bool = False) -> int:
    cfg = _run_config(args, replay=replay)
    records = harness.load_dataset(args.dataset)
    result = harness.run_benchmark(records, cfg, dataset=Path(args.dataset).stem, out_dir=cfg.out_dir)
    rep = result.report
    print(f"{rep.dataset}: n={rep.n} EM={rep.em_percent} F1={rep.f1_percent} "
          f"Cos={rep.cosine_percent} failures={rep.failures} -> {cfg.out_dir}")
    return result.exit_code


def cmd_score(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    res = harness.score_trajectories(out / harness.TRAJECTORY_FILE, args.dataset, cfg.reward)
    harness.write_report_csv([res.report], out / "score_report.csv")
    rep = res.report
    print(f"{rep.dataset}: n={rep.n} EM={rep.em_percent} F1={rep.f1_percent} Cos={rep.cosine_percent}")
    for m in res.mismatches:
        print(f"MISMATCH {m}", file=sys.stderr)
    return harness.EXIT_FATAL if res.mismatches else harness.EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    rep = harness.report_from_file(out / harness.TRAJECTORY_FILE)
    harness.write_report_csv([rep], out / harness.REPORT_FILE)
    print((out / harness.REPORT_FILE).read_text(encoding="utf-8"), end="")
    return harness.EXIT_OK


def cmd_train_toy(args) -> int:
    cfg = load_config(args.config)
    curve = train_toy_policy(args.seed, args.iterations, cfg.grpo, learning_rate=args.learning_rate)
    tail = curve[-min(20, len(curve)):]
    print(f"iterations={len(curve)} first={curve[0]:.4f} final={curve[-1]:.4f} "
          f"mean_last_{len(tail)}={sum(tail) / len(tail):.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps({"learning_curve": curve}), encoding="utf-8")
    return harness.EXIT_OK


def cmd_grpo_export(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    stored = [r for r in harness.read_records(out / harness.TRAJECTORY_FILE) if r.get("reward") is not None]
    rewards = [r["reward"]["r_total"] for r in stored]
    groups = [r["question"] if args.group_by == "question" else "batch" for r in stored]
    adv = grouped_advantages(rewards, groups, cfg.grpo.eps_stab) if stored else []
    rows = []
    for r, a in zip(stored, adv):
        traj = Trajectory.from_dict(r["trajectory"])
        rows.append(ExportRow(r["id"], r["reward"]["r_total"], float(a), traj.per_turn_token_logprobs or []))
    dest = Path(args.export) if args.export else out / "rl_export.jsonl"
    n = write_export(rows, dest)
    print(f"wrote {n} rows to {dest}")
    return harness.EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "replay":
            return cmd_run(args, replay=True)
        if args.command == "score":
            return cmd_score(args)
        if args.command == "report":
            return cmd_report(args)
        if args.command == "train-toy":
            return cmd_train_toy(args)
        if args.command == "grpo-export":
            return cmd_grpo_export(args)
    except (ConfigError, harness.DatasetError, harness.ScoreError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return harness.EXIT_FATAL
    return harness.EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
