import json
from decimal import Decimal

import pytest

from roleflow import harness
from roleflow.config import RunConfig
from roleflow.fixtures import same_country_directors, write_fixtures
from roleflow.harness import (
    DatasetError,
    ScoreError,
    load_dataset,
    read_records,
    run_benchmark,
    score_trajectories,
)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_load_valid(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [
        json.dumps({"id": str(i), "question": f"q{i}", "answers": ["a"]}) for i in range(3)
    ])
    recs = load_dataset(p)
    assert [r.id for r in recs] == ["0", "1", "2"]


@pytest.mark.parametrize("line, needle", [
    ('{"id": "x", "question": "q", "answers": []}', "answers"),
    ('{"id": "x", "question": " ", "answers": ["a"]}', "question"),
    ('{"id": "x", "question": "q", "answers": ["a"], "metric": "bleu"}', "metric"),
    ("not json", "invalid JSON"),
])
def test_load_errors_name_the_line(tmp_path, line, needle):
    p = write_lines(tmp_path / "d.jsonl", ['{"id": "ok", "question": "q", "answers": ["a"]}', line])
    with pytest.raises(DatasetError, match=r":2: .*" + needle):
        load_dataset(p)


def test_duplicate_ids_fatal(tmp_path):
    line = '{"id": "x", "question": "q", "answers": ["a"]}'
    with pytest.raises(DatasetError, match="duplicate"):
        load_dataset(write_lines(tmp_path / "d.jsonl", [line, line]))


def run(fixture_dir, out, parallel=1, **kw):
    records = load_dataset(fixture_dir / "dataset.jsonl")
    cfg = RunConfig(cassette_dir=str(fixture_dir / "cassettes"), parallel=parallel, **kw)
    return run_benchmark(records, cfg, dataset="fx", out_dir=out)


def test_single_case_report(tmp_path):
    write_fixtures([same_country_directors()], tmp_path)
    res = run(tmp_path, tmp_path / "out")
    assert res.report.em_percent == Decimal("100.00") and res.report.f1_percent == Decimal("100.00")
    assert res.exit_code == harness.EXIT_OK
    csv = (tmp_path / "out" / "report.csv").read_text()
    assert csv == "dataset,n,em_percent,f1_percent,cosine_percent\nfx,1,100.00,100.00,\n"


def test_records_and_failures(fixture_dir, tmp_path):
    res = run(fixture_dir, tmp_path / "out")
    stored = read_records(tmp_path / "out" / harness.TRAJECTORY_FILE)
    assert [r["id"] for r in stored] == [r["id"] for r in res.records]
    assert all(r["schema_version"] == 1 for r in stored)
    aborted = [r for r in stored if r["trajectory"] and r["trajectory"]["termination"] == "MalformedAbort"]
    for r in aborted:
        assert r["metrics"] in ({"em": 0, "f1": 0.0}, {"cosine": 0.0})
    assert res.exit_code == (harness.EXIT_PARTIAL if aborted else harness.EXIT_OK)


def test_parallel_matches_serial(fixture_dir, tmp_path):
    run(fixture_dir, tmp_path / "p1", parallel=1)
    run(fixture_dir, tmp_path / "p8", parallel=8)
    for name in (harness.TRAJECTORY_FILE, harness.REPORT_FILE):
        assert (tmp_path / "p1" / name).read_bytes() == (tmp_path / "p8" / name).read_bytes()


def test_resume_skips_done_records(fixture_dir, tmp_path):
    out = tmp_path / "out"
    full = run(fixture_dir, out)
    full_bytes = (out / harness.TRAJECTORY_FILE).read_bytes()
    lines = full_bytes.decode().splitlines()
    # simulate a crash: keep half the records plus a torn write
    (out / harness.TRAJECTORY_FILE).write_text("\n".join(lines[:5]) + "\n" + lines[5][:40], encoding="utf-8")
    again = run(fixture_dir, out)
    assert (out / harness.TRAJECTORY_FILE).read_bytes() == full_bytes
    assert again.report == full.report


def test_error_record_when_cassette_missing(tmp_path):
    write_fixtures([same_country_directors()], tmp_path)
    (tmp_path / "cassettes" / "2wiki-3" / "executor.jsonl").write_text("", encoding="utf-8")
    res = run(tmp_path, tmp_path / "out")
    rec = res.records[0]
    assert rec["error"]["kind"] == "CassetteExhausted" and rec["error"]["turn"] == 1
    assert res.exit_code == harness.EXIT_PARTIAL


def test_score_reproduces_stored_values(fixture_dir, tmp_path):
    res = run(fixture_dir, tmp_path / "out")
    sc = score_trajectories(tmp_path / "out" / harness.TRAJECTORY_FILE, fixture_dir / "dataset.jsonl",
                            dataset="fx")
    assert sc.mismatches == []
    assert sc.report == res.report


def test_score_detects_edited_answer_block(tmp_path):
    write_fixtures([same_country_directors()], tmp_path)
    run(tmp_path, tmp_path / "out")
    path = tmp_path / "out" / harness.TRAJECTORY_FILE
    rec = json.loads(path.read_text())
    rec["trajectory"]["final_emission"] = rec["trajectory"]["final_emission"].replace("</answer>", "")
    path.write_text(json.dumps(rec) + "\n")
    sc = score_trajectories(path, tmp_path / "dataset.jsonl")
    assert sc.records[0]["reward"]["b_v"] == 0
    assert sc.mismatches


def test_score_unknown_id(tmp_path):
    write_fixtures([same_country_directors()], tmp_path)
    run(tmp_path, tmp_path / "out")
    other = write_lines(tmp_path / "other.jsonl", ['{"id": "zz", "question": "q", "answers": ["a"]}'])
    with pytest.raises(ScoreError):
        score_trajectories(tmp_path / "out" / harness.TRAJECTORY_FILE, other)


def test_empty_dataset(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    res = run_benchmark(load_dataset(p), RunConfig(cassette_dir=str(tmp_path)), out_dir=tmp_path / "out")
    assert res.report.n == 0 and res.report.em_percent is None
    assert res.exit_code == harness.EXIT_OK


def test_schema_version_checked(tmp_path):
    p = write_lines(tmp_path / "t.jsonl", ['{"schema_version": 2, "id": "x"}'])
    with pytest.raises(ScoreError):
        read_records(p)


def test_episode_seed_is_stable():
    assert harness.episode_seed(0, "a") == harness.episode_seed(0, "a")
    assert harness.episode_seed(0, "a") != harness.episode_seed(1, "a")
