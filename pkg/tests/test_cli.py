import json
import os

import pytest

from flowgnn.cli import main
from flowgnn.netgraph import read_dataset


def run(argv):
    return main(argv)


def gen_args(out, samples=3, seed=11, extra=()):
    return [
        "generate",
        "--topology", "power-law",
        "--nodes", "6..8",
        "--flows", "4",
        "--samples", str(samples),
        "--capacity", "4000",
        "--duration", "80",
        "--seed", str(seed),
        "--out", str(out),
        *extra,
    ]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "train.jsonl"
    assert run(gen_args(path, samples=5)) == 0
    return path


def train_args(dataset, out, cell="gru", epochs=2, extra=()):
    return [
        "train",
        "--dataset", str(dataset),
        "--cell", cell,
        "--task", "delay",
        "--hidden", "6",
        "--iterations", "2",
        "--epochs", str(epochs),
        "--batch", "2",
        "--patience", "50",
        "--seed", "3",
        "--out", str(out),
        *extra,
    ]


def test_generate_writes_dataset_and_manifest(tmp_path):
    out = tmp_path / "d.jsonl"
    assert run(gen_args(out)) == 0
    samples = read_dataset(out)
    assert len(samples) == 3
    assert all(s.labels is not None for s in samples)
    manifest = json.loads((tmp_path / "d.jsonl.manifest.json").read_text())
    assert manifest["command"] == "generate"
    assert manifest["resolved"]["seed"] == 11
    assert str(out) in manifest["output_hashes"]


def test_generate_deterministic_per_seed(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert run(gen_args(a)) == 0
    assert run(gen_args(b)) == 0
    assert a.read_bytes() == b.read_bytes()


def test_generate_missing_seed_draws_and_records_entropy(tmp_path):
    out = tmp_path / "d.jsonl"
    argv = gen_args(out)
    argv.remove("--seed")
    argv.remove("11")
    assert run(argv) == 0
    manifest = json.loads((tmp_path / "d.jsonl.manifest.json").read_text())
    assert isinstance(manifest["resolved"]["seed"], int)


def test_generate_workers_match_serial_output(tmp_path):
    serial, parallel = tmp_path / "s.jsonl", tmp_path / "p.jsonl"
    assert run(gen_args(serial)) == 0
    assert run(gen_args(parallel, extra=("--workers", "3"))) == 0
    assert serial.read_bytes() == parallel.read_bytes()


def test_generate_flag_validation(tmp_path):
    # power-law without --nodes is a config error (exit 2)
    argv = gen_args(tmp_path / "d.jsonl")
    argv.remove("--nodes")
    argv.remove("6..8")
    assert run(argv) == 2


def test_generate_fifty_samples_count(tmp_path):
    out = tmp_path / "fifty.jsonl"
    assert run(gen_args(out, samples=50, extra=("--workers", "2"))) == 0
    assert len(read_dataset(out)) == 50


def test_replay_from_manifest_is_bitwise_identical(tmp_path):
    out = tmp_path / "d.jsonl"
    assert run(gen_args(out)) == 0
    first = out.read_bytes()
    out.unlink()
    assert run(["--from-manifest", str(tmp_path / "d.jsonl.manifest.json")]) == 0
    assert out.read_bytes() == first


def test_train_produces_artifacts(dataset, tmp_path):
    out = tmp_path / "run"
    assert run(train_args(dataset, out)) == 0
    for name in ("manifest.json", "checkpoint.json", "state.json", "metrics.csv"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["inputs"]["dataset_sha256"]
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "epoch,split,task,value"
    assert any(line.startswith("summary,val,delay_mape,") for line in lines)


def test_train_runs_share_dataset_hash_across_cells(dataset, tmp_path):
    hashes = set()
    for cell in ("rnn", "gru", "lstm"):
        out = tmp_path / cell
        assert run(train_args(dataset, out, cell=cell)) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        hashes.add(manifest["inputs"]["dataset_sha256"])
    assert len(hashes) == 1


def test_train_replay_bitwise_identical(dataset, tmp_path):
    out = tmp_path / "run"
    assert run(train_args(dataset, out)) == 0
    first = {name: (out / name).read_bytes() for name in ("checkpoint.json", "metrics.csv")}
    assert run(["--from-manifest", str(out / "manifest.json")]) == 0
    for name, blob in first.items():
        assert (out / name).read_bytes() == blob


def test_resume_continues_series_with_same_run_hash(dataset, tmp_path):
    out1 = tmp_path / "r1"
    assert run(train_args(dataset, out1, epochs=2)) == 0
    hash1 = json.loads((out1 / "manifest.json").read_text())["resolved"]["run_hash"]
    out2 = tmp_path / "r2"
    assert run(
        train_args(dataset, out2, epochs=2, extra=("--resume", str(out1 / "state.json")))
    ) == 0
    manifest2 = json.loads((out2 / "manifest.json").read_text())
    assert manifest2["resolved"]["run_hash"] == hash1
    lines = (out2 / "metrics.csv").read_text().splitlines()[1:]
    train_epochs = [int(l.split(",")[0]) for l in lines if l.split(",")[1] == "train" and l.split(",")[0] != "summary"]
    assert train_epochs == [0, 1, 2, 3]


def test_resume_rejects_mismatched_config(dataset, tmp_path):
    out1 = tmp_path / "r1"
    assert run(train_args(dataset, out1, epochs=1)) == 0
    out2 = tmp_path / "r2"
    rc = run(
        train_args(dataset, out2, cell="rnn", epochs=1, extra=("--resume", str(out1 / "state.json")))
    )
    assert rc == 2


def test_train_missing_dataset_is_data_error(tmp_path):
    rc = run(train_args(tmp_path / "absent.jsonl", tmp_path / "run"))
    assert rc == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_nan_abort_exits_4(dataset, tmp_path):
    import json as _json

    poisoned = tmp_path / "poisoned.jsonl"
    lines = []
    for line in open(dataset, encoding="utf-8"):
        record = _json.loads(line)
        for lab in record["labels"].values():
            lab["delay_s"] = float("inf")
        lines.append(_json.dumps(record, separators=(",", ":")))
    poisoned.write_text("\n".join(lines) + "\n")
    rc = run(train_args(poisoned, tmp_path / "run"))
    assert rc == 4


def test_evaluate_checkpoint(dataset, tmp_path):
    run_dir = tmp_path / "run"
    assert run(train_args(dataset, run_dir)) == 0
    out = tmp_path / "eval"
    rc = run(
        [
            "evaluate",
            "--checkpoint", str(run_dir / "checkpoint.json"),
            "--dataset", str(dataset),
            "--task", "delay",
            "--out", str(out),
        ]
    )
    assert rc == 0
    assert (out / "metrics.csv").exists()
    assert (out / "manifest.json").exists()


def test_report_emits_tables_and_charts(dataset, tmp_path):
    runs = []
    for cell in ("rnn", "gru"):
        out = tmp_path / cell
        assert run(train_args(dataset, out, cell=cell)) == 0
        runs.append(str(out))
    report_dir = tmp_path / "report"
    assert run(["report", "--runs", *runs, "--out", str(report_dir)]) == 0
    names = sorted(os.listdir(report_dir))
    assert "loss_curves.svg" in names
    assert "final_metrics.svg" in names
    assert any(n.startswith("comparison_") and n.endswith(".csv") for n in names)
    table = next(n for n in names if n.startswith("comparison_delay_mape"))
    header = (report_dir / table).read_text().splitlines()[0]
    assert header.split(",")[1:] == ["gru", "rnn"]  # cell kinds as columns


def test_report_deterministic_bytes(dataset, tmp_path):
    out = tmp_path / "run"
    assert run(train_args(dataset, out)) == 0
    r1, r2 = tmp_path / "rep1", tmp_path / "rep2"
    assert run(["report", "--runs", str(out), "--out", str(r1)]) == 0
    assert run(["report", "--runs", str(out), "--out", str(r2)]) == 0
    for name in ("loss_curves.svg", "final_metrics.svg"):
        assert (r1 / name).read_bytes() == (r2 / name).read_bytes()


def test_env_var_overrides_output_directory(dataset, tmp_path, monkeypatch):
    monkeypatch.setenv("FLOWGNN_OUT_DIR", str(tmp_path))
    assert run(gen_args("envout.jsonl", samples=1)) == 0
    assert (tmp_path / "envout.jsonl").exists()


def test_unknown_command_exits_2():
    with pytest.raises(SystemExit) as err:
        run(["frobnicate"])
    assert err.value.code == 2
