import json

import pandas as pd
import pytest
from fastapi.testclient import TestClient

import app.app as cli
import app.main as api
from app.cache import InvariantViolation, read_event_log
from app.trace import AccessKind, read_trace, write_trace

from conftest import make_stream

SMALL = {
    "generator": {"name": "many-to-few", "n_instr_lines": 512, "n_data_lines": 64,
                  "cores": 2, "instructions_per_core": 600, "rng_seed": 2},
    "hierarchy": {"private": {"capacity_bytes": 4096, "associativity": 4},
                  "llc": {"capacity_bytes": 49152}},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(SMALL, indent=2))
    return path


@pytest.fixture
def trace_file(tmp_path, config_file):
    path = tmp_path / "small.trace"
    assert cli.main(["gen", "--config", str(config_file), "--trace", str(path),
                     "--out", str(tmp_path)]) == 0
    return path


# ============================================================
# CLI
# ============================================================
def test_gen_writes_trace_and_manifest(trace_file):
    manifest = json.loads(trace_file.with_name("small.trace.manifest.json").read_text())
    assert manifest["records"] == len(read_trace(trace_file))
    assert manifest["generator"] == "many-to-few"
    assert len(manifest["sha256"]) == 64


def test_gen_seed_flag_changes_trace(tmp_path, config_file):
    a, b = tmp_path / "a.trace", tmp_path / "b.trace"
    cli.main(["gen", "--config", str(config_file), "--trace", str(a), "--out", str(tmp_path)])
    cli.main(["gen", "--config", str(config_file), "--trace", str(b), "--out", str(tmp_path), "--seed", "99"])
    assert a.read_bytes() != b.read_bytes()


def test_gen_without_generator_is_config_error(tmp_path):
    assert cli.main(["gen", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_run_writes_report_and_dumps(tmp_path, trace_file):
    out = tmp_path / "out"
    code = cli.main(["run", "--trace", str(trace_file), "--out", str(out),
                     "--dump-events", "--dump-pairtable"])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["records"] == len(read_trace(trace_file))
    assert len(read_event_log(out / "events.log")) == report["records"]
    # no pairwise block, so no pair table to dump
    assert not (out / "pairtable.txt").exists()


def test_run_csv_with_pairwise(tmp_path, trace_file):
    cfg = tmp_path / "pw.json"
    cfg.write_text(json.dumps({"garibaldi": {"enabled": True}, "out_dir": str(tmp_path / "pw")}))
    assert cli.main(["run", "--config", str(cfg), "--trace", str(trace_file), "--emit", "csv",
                     "--dump-pairtable"]) == 0
    frame = pd.read_csv(tmp_path / "pw" / "report.csv")
    assert bool(frame.loc[0, "pairwise"])
    assert (tmp_path / "pw" / "pairtable.txt").read_text().startswith("# config_digest ")


def test_run_missing_trace_is_io_error(tmp_path):
    assert cli.main(["run", "--trace", str(tmp_path / "nope.trace"), "--out", str(tmp_path)]) == cli.EXIT_IO


def test_run_corrupt_trace_is_io_error(tmp_path):
    path = tmp_path / "bad.trace"
    path.write_bytes(b"JUNKJUNKJUNKJUNK")
    assert cli.main(["run", "--trace", str(path), "--out", str(tmp_path)]) == cli.EXIT_IO


@pytest.mark.parametrize("body", [b"#PLLC one 1 1\n", b"#PLLC 1 1 1\n0 0 0 1000 2\xc3\xa9\n"])
def test_run_malformed_text_trace_is_io_error(tmp_path, body):
    path = tmp_path / "bad.txt"
    path.write_bytes(body)
    assert cli.main(["run", "--trace", str(path), "--out", str(tmp_path)]) == cli.EXIT_IO


def test_bad_config_is_config_error(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"policy": "fifo"}')
    assert cli.main(["run", "--config", str(cfg)]) == cli.EXIT_CONFIG


def test_invariant_violation_exit_code(tmp_path, trace_file, monkeypatch):
    def broken(cfg):
        raise InvariantViolation("llc set 0 holds a line twice")

    monkeypatch.setattr(cli, "simulate", broken)
    assert cli.main(["run", "--trace", str(trace_file), "--out", str(tmp_path)]) == cli.EXIT_INVARIANT


def test_sweep_writes_csv(tmp_path, config_file):
    out = tmp_path / "sweep"
    assert cli.main(["sweep", "--config", str(config_file), "--out", str(out),
                     "--axis", "k", "--values", "1,0"]) == 0
    frame = pd.read_csv(out / "sweep-k.csv")
    assert frame["value"].tolist() == [0, 1]


def test_sweep_bad_axis(tmp_path, config_file):
    assert cli.main(["sweep", "--config", str(config_file), "--out", str(tmp_path),
                     "--axis", "ways", "--values", "4"]) == cli.EXIT_CONFIG


def test_analyze_trace(tmp_path, trace_file):
    out = tmp_path / "an"
    assert cli.main(["analyze", "--trace", str(trace_file), "--out", str(out)]) == 0
    result = json.loads((out / "analysis.json").read_text())
    assert set(result) == {"config_digest", "reuse", "pattern", "belady"}
    assert result["belady"]["misses"] <= result["belady"]["llc_accesses"]


def test_analyze_event_log(tmp_path, trace_file):
    run_out = tmp_path / "run"
    cli.main(["run", "--trace", str(trace_file), "--out", str(run_out), "--dump-events"])
    out = tmp_path / "an"
    assert cli.main(["analyze", "--events", str(run_out / "events.log"), "--out", str(out),
                     "--analyses", "conditional,stalls"]) == 0
    result = json.loads((out / "analysis.json").read_text())
    report = json.loads((run_out / "report.json").read_text())
    assert result["stalls"]["total_cycles"] == report["stalls"]["total_cycles"]


def test_analyze_unknown_analysis(tmp_path, trace_file):
    assert cli.main(["analyze", "--trace", str(trace_file), "--out", str(tmp_path),
                     "--analyses", "magic"]) == cli.EXIT_CONFIG


# ============================================================
# HTTP
# ============================================================
@pytest.fixture
def client(tmp_path, monkeypatch):
    monkeypatch.setattr(api, "TRACE_DIR", tmp_path / "traces")
    return TestClient(api.app)


def upload(client, path, name=None):
    with open(path, "rb") as fh:
        return client.post("/traces", files={"file": (name or path.name, fh, "application/octet-stream")})


def test_policies(client):
    body = client.get("/policies").json()
    assert "mockingjay" in body["policies"]


def test_upload_then_run(client, trace_file):
    res = upload(client, trace_file)
    assert res.status_code == 200
    assert res.json()["cores"] == 2

    res = client.post("/run", params={"trace": "small.trace"}, json={"policy": "drrip"})
    assert res.status_code == 200
    assert res.json()["policy"] == "drrip"


def test_upload_rejects_corrupt_trace(client, tmp_path):
    path = tmp_path / "cut.trace"
    write_trace(path, make_stream([(0, AccessKind.LOAD, 0, 64)] * 2))
    path.write_bytes(path.read_bytes()[:-3])
    assert upload(client, path).status_code == 422
    assert not (tmp_path / "traces" / "cut.trace").exists()


def test_upload_rejects_suffix(client, tmp_path):
    path = tmp_path / "notes.pdf"
    path.write_bytes(b"%PDF")
    assert upload(client, path).status_code == 400


def test_run_with_generator_and_bad_policy(client):
    assert client.post("/run", json=SMALL).status_code == 200
    res = client.post("/run", json={**SMALL, "policy": "fifo"})
    assert res.status_code == 400
    assert "policy" in res.json()["detail"]


def test_run_needs_a_source(client):
    assert client.post("/run", json={}).status_code == 400
    assert client.post("/run", params={"trace": "missing.trace"}, json={}).status_code == 400


def test_sweep_endpoint(client):
    res = client.post("/sweep", json={"axis": "k", "values": [1, 0], "config": SMALL})
    assert res.status_code == 200
    assert [row["value"] for row in res.json()["rows"]] == [0, 1]
    assert client.post("/sweep", json={"axis": "ways", "values": [1], "config": SMALL}).status_code == 400
