import json
from pathlib import Path

import numpy as np
import pytest

from lma import codec, evaluate
from lma.cli import load_config_file, main
from lma.model import Dense, GlobalAvgPool, ModelGraph, save_model
from lma.verdict import VerdictConfig
from lma.wasm.instrument import InstrumentationPolicy, instrument

from conftest import ROOT


def threshold_graph() -> ModelGraph:
    """Mean-intensity probe: dark memory scores Benign, bright scores Corrupted."""
    return ModelGraph(layers=[
        GlobalAvgPool(),
        Dense(1, 2, weight=np.array([[0.0], [100.0]], np.float32),
              bias=np.array([1.0, 0.0], np.float32)),
    ])


def constant_graph(corrupted_logit: float) -> ModelGraph:
    return ModelGraph(layers=[
        GlobalAvgPool(),
        Dense(1, 2, weight=np.zeros((2, 1), np.float32),
              bias=np.array([0.0, corrupted_logit], np.float32)),
    ])


def write_execution(out_dir: Path, name: str, memories, label: str, corruption):
    session = name.encode().ljust(16, b"\x00")[:16]
    frames = []
    entries = []
    for seq, memory in enumerate(memories):
        frames.append(codec.frame_record(codec.record_from_memory(memory, session, seq, 0)))
        entries.append({
            "snapshot_file": "snapshots/%s.lmas" % name,
            "record_index": seq,
            "label": label,
            "source_program": "micro",
            "input_id": name,
            "base_input": name.split("#")[0],
            "corruption": corruption,
            "split": "test",
        })
    (out_dir / "snapshots").mkdir(parents=True, exist_ok=True)
    (out_dir / "snapshots" / ("%s.lmas" % name)).write_bytes(b"".join(frames))
    return entries


DARK = b"\x00" * 65536
BRIGHT = b"\xff" * 65536
SMEAR = {"mode": "overflow_smear", "offset": 0, "length": 65536, "fill_byte": 255}


@pytest.fixture()
def micro_manifest(tmp_path):
    entries = []
    entries += write_execution(tmp_path, "a", [DARK] * 3, "Benign", None)          # TN
    entries += write_execution(tmp_path, "b#c0", [BRIGHT] * 3, "Corrupted", SMEAR)  # TP
    entries += write_execution(tmp_path, "c#c0", [DARK] * 3, "Corrupted", SMEAR)    # FN
    entries += write_execution(tmp_path, "d", [BRIGHT] * 3, "Benign", None)         # FP
    manifest = {"entries": entries, "seed": 0, "created": "1970-01-01T00:00:00Z",
                "module": "micro.wasm",
                "split_fractions": {"train": 0, "val": 0, "test": 1}, "skipped": []}
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    return manifest, tmp_path


def test_micro_manifest_matches_hand_computation(micro_manifest):
    manifest, root = micro_manifest
    metrics = evaluate.evaluate(manifest, root, threshold_graph())
    v = metrics["verdict_level"]
    assert (v["tp"], v["fp"], v["tn"], v["fn"]) == (1, 1, 1, 1)
    assert v["accuracy"] == pytest.approx(0.5)
    assert v["precision"] == pytest.approx(0.5)
    assert v["recall"] == pytest.approx(0.5)
    assert v["f1"] == pytest.approx(0.5)
    s = metrics["snapshot_level"]
    assert (s["tp"], s["fp"], s["tn"], s["fn"]) == (3, 3, 3, 3)
    per = metrics["verdict_level_per_program"]["micro"]
    assert per["accuracy"] == pytest.approx(0.5)


def test_always_corrupted_classifier_on_balanced_split(micro_manifest):
    manifest, root = micro_manifest
    metrics = evaluate.evaluate(manifest, root, constant_graph(10.0))
    assert metrics["verdict_level"]["accuracy"] == pytest.approx(0.5)
    assert metrics["verdict_level"]["recall"] == pytest.approx(1.0)
    assert metrics["snapshot_level"]["accuracy"] == pytest.approx(0.5)
    assert metrics["snapshot_level"]["recall"] == pytest.approx(1.0)


def test_f1_collapses_when_no_positives_predicted(micro_manifest):
    manifest, root = micro_manifest
    metrics = evaluate.evaluate(manifest, root, constant_graph(-10.0))
    assert metrics["verdict_level"]["f1"] == 0.0
    assert metrics["verdict_level"]["accuracy"] == pytest.approx(0.5)
    assert metrics["snapshot_level"]["f1"] == 0.0


def test_perfect_classifier_scores_100(tmp_path):
    entries = []
    entries += write_execution(tmp_path, "p1", [DARK] * 4, "Benign", None)
    entries += write_execution(tmp_path, "p1#c0", [BRIGHT] * 4, "Corrupted", SMEAR)
    entries += write_execution(tmp_path, "p2", [DARK] * 4, "Benign", None)
    entries += write_execution(tmp_path, "p2#c0", [BRIGHT] * 4, "Corrupted", SMEAR)
    manifest = {"entries": entries}
    metrics = evaluate.evaluate(manifest, tmp_path, threshold_graph())
    assert metrics["verdict_level"]["accuracy"] == pytest.approx(1.0)
    assert metrics["verdict_level"]["f1"] == pytest.approx(1.0)
    assert metrics["snapshot_level"]["accuracy"] == pytest.approx(1.0)


def test_empty_split_rejected(micro_manifest):
    manifest, root = micro_manifest
    with pytest.raises(evaluate.EmptySplit):
        evaluate.evaluate(manifest, root, threshold_graph(), split="val")


# ---- command line -----------------------------------------------------------

@pytest.fixture()
def cli_env(tmp_path, framepack_path):
    module = tmp_path / "fp.wasm"
    module.write_bytes(framepack_path.read_bytes())
    benign_model = tmp_path / "benign.lmaw"
    benign_model.write_bytes(save_model(constant_graph(-10.0)))
    alarm_model = tmp_path / "alarm.lmaw"
    alarm_model.write_bytes(save_model(constant_graph(10.0)))
    return tmp_path, module, benign_model, alarm_model


def test_cli_instrument_attest_verify_roundtrip(cli_env, capsys):
    tmp, module, benign_model, alarm_model = cli_env
    instrumented = tmp / "fp.lma.wasm"
    report = tmp / "report.json"
    assert main(["instrument", "--policy", "import", "--in", str(module),
                 "--out", str(instrumented), "--report", str(report)]) == 0
    rep = json.loads(report.read_text())
    assert rep["policy"] == "import"
    assert rep["sites_instrumented"] == 2  # one static site per host-call helper
    assert instrumented.exists()
    capsys.readouterr()

    stdin = tmp / "input.bin"
    stdin.write_bytes(b"\x01\x02\x03\x04")
    stream = tmp / "run.lmas"
    assert main(["attest", "--module", str(instrumented),
                 "--sink", "file:%s" % stream, "--stdin", str(stdin),
                 "--session-id", "ab" * 16]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["exit_code"] == 0
    assert summary["snapshots_emitted"] == 9  # fd_read + 7 frames + final marker

    out = tmp / "verdicts.json"
    code = main(["verify", "--source", "file:%s" % stream,
                 "--model", str(benign_model), "--report", str(out)])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["sessions"][0]["verdict"] == "Benign"

    code = main(["verify", "--source", "file:%s" % stream,
                 "--model", str(alarm_model), "--report", str(out)])
    assert code == 2
    assert json.loads(out.read_text())["sessions"][0]["verdict"] == "Malicious"
    events = [json.loads(line) for line in capsys.readouterr().out.splitlines() if line]
    assert events[0]["event"] == "malicious"


def test_cli_verify_invalid_session_exit_code(cli_env, capsys):
    tmp, module, benign_model, _ = cli_env
    instrumented = tmp / "fp.lma.wasm"
    main(["instrument", "--policy", "import", "--in", str(module),
          "--out", str(instrumented)])
    stream = tmp / "run.lmas"
    main(["attest", "--module", str(instrumented), "--sink", "file:%s" % stream])
    records = codec.read_records(stream)
    gap = tmp / "gap.lmas"
    gap.write_bytes(b"".join(
        codec.frame_record(r) for r in records if r.seq_no != 1))
    capsys.readouterr()
    assert main(["verify", "--source", "file:%s" % gap,
                 "--model", str(benign_model)]) == 3


def test_cli_classify_and_render(cli_env, capsys):
    tmp, module, benign_model, _ = cli_env
    instrumented = tmp / "fp.lma.wasm"
    main(["instrument", "--policy", "import", "--in", str(module),
          "--out", str(instrumented)])
    stream = tmp / "run.lmas"
    main(["attest", "--module", str(instrumented), "--sink", "file:%s" % stream])
    capsys.readouterr()

    assert main(["classify", "--model", str(benign_model),
                 "--snapshot", str(stream)]) == 0
    lines = [json.loads(l) for l in capsys.readouterr().out.splitlines() if l]
    assert all(row["label"] == "Benign" for row in lines)
    assert [row["seq"] for row in lines] == list(range(len(lines)))

    pgm = tmp / "snap.pgm"
    assert main(["render", "--snapshot", str(stream), "--index", "2",
                 "--out", str(pgm)]) == 0
    data = pgm.read_bytes()
    assert data.startswith(b"P5\n128 128\n255\n")
    assert len(data) == len(b"P5\n128 128\n255\n") + 128 * 128


def test_cli_dataset_and_eval(cli_env, capsys, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    tmp, module, benign_model, alarm_model = cli_env
    instrumented = tmp / "fp.lma.wasm"
    main(["instrument", "--policy", "import", "--in", str(module),
          "--out", str(instrumented)])
    corpus = tmp / "corpus"
    corpus.mkdir()
    for k, seed in enumerate(sorted((ROOT / "fixtures" / "corpus_seeds").glob("*.bin"))[:3]):
        (corpus / seed.name).write_bytes(seed.read_bytes())
    assert main(["mutate", "--corpus", str(corpus), "--rounds", "1",
                 "--seed", "5"]) == 0
    data = tmp / "data"
    assert main(["dataset", "--module", str(instrumented), "--corpus", str(corpus),
                 "--out", str(data), "--seed", "9",
                 "--split-fractions", "0.0,0.0,1.0"]) == 0
    capsys.readouterr()
    assert main(["eval", "--manifest", str(data / "manifest.json"),
                 "--model", str(alarm_model)]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["verdict_level"]["recall"] == pytest.approx(1.0)
    assert metrics["verdict_level"]["accuracy"] == pytest.approx(0.5)


def test_cli_config_file(cli_env, tmp_path):
    tmp, module, benign_model, _ = cli_env
    instrumented = tmp / "fp.lma.wasm"
    main(["instrument", "--policy", "import", "--in", str(module),
          "--out", str(instrumented)])
    stream = tmp / "run.lmas"
    main(["attest", "--module", str(instrumented), "--sink", "file:%s" % stream])
    cfg = tmp_path / "verify.cfg"
    cfg.write_text("# defaults for the verifier\nmin_snapshots = 99\n")
    # config forces more snapshots than the stream holds -> Invalid -> exit 3
    assert main(["verify", "--source", "file:%s" % stream,
                 "--model", str(benign_model), "--config", str(cfg)]) == 3


def test_config_file_parsing(tmp_path):
    cfg = tmp_path / "a.cfg"
    cfg.write_text("window = 4\nthreshold=2\nname = hello\nflag = true\n# note\n")
    values = load_config_file(cfg)
    assert values == {"window": 4, "threshold": 2, "name": "hello", "flag": True}


def test_cli_operational_error_exit_code(tmp_path, capsys):
    assert main(["verify", "--source", "file:%s" % (tmp_path / "nope.lmas"),
                 "--model", str(tmp_path / "nope.lmaw")]) == 1
    assert "error" in capsys.readouterr().err
