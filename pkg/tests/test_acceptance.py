"""Acceptance criteria, one test per criterion.

The terminal summary prints one PASS/FAIL line for each.  The detection and
cross-implementation criteria depend on the committed golden fixtures under
fixtures/golden/ (produced once by scripts/make_golden.py via the trainer).
"""

import json

import numpy as np
import pytest

from lma import codec, dataset, evaluate
from lma.attester import AttesterConfig, execute, run_attested
from lma.bench import run_ablation
from lma.engine import forward_logits, infer, softmax
from lma.image import to_image
from lma.model import load_model_file, random_small_resnet
from lma.verdict import VerdictAggregator, VerdictConfig
from lma.verifier import verify_file
from lma.wasm.instrument import InstrumentationPolicy, instrument
from lma.wasm.module import parse_module
from lma.wasm.validate import validate

from conftest import GOLDEN, v8_validates
from test_engine import conv2d_reference, maxpool_reference
from test_verdict import brute_force_verdict

POLICIES = list(InstrumentationPolicy)


# 1 ---------------------------------------------------------------------------

def test_instrumentation_validity_and_transparency(corpus_modules):
    assert len(corpus_modules) >= 10
    # corpus diversity requirements
    diversity = {name: parse_module(raw) for name, raw in corpus_modules.items()}
    assert any(not m.imports for m in diversity.values())
    assert any(m.start is not None for m in diversity.values())
    assert any(m.elems for m in diversity.values())

    for name, raw in corpus_modules.items():
        mod = parse_module(raw)
        entry = "_start" if any(e.name == "_start" for e in mod.exports) else None
        baseline = execute(raw, entry=entry)
        for policy in POLICIES:
            out, report = instrument(raw, policy)
            validate(parse_module(out))
            assert v8_validates(out), (name, policy.value)
            assert report.instrumented_size_bytes >= report.original_size_bytes
            shadow = execute(out, entry=entry)  # no-op hook wired by default
            assert shadow.exit_code == baseline.exit_code, (name, policy.value)
            assert shadow.trap == baseline.trap, (name, policy.value)
            assert shadow.stdout == baseline.stdout, (name, policy.value)
            assert shadow.memory == baseline.memory, (name, policy.value)


# 2 ---------------------------------------------------------------------------

def test_codec_roundtrip_10k_and_errors():
    rng = np.random.default_rng(0xC0DEC)
    page = codec.PAGE_SIZE
    for i in range(10_000):
        n = int(rng.integers(0, 131073))
        mode = i % 4
        if mode == 0:  # dense random
            buf = rng.integers(0, 256, n, dtype=np.uint8).tobytes()
        elif mode == 1:  # sparse clusters on zeros
            arr = np.zeros(n, dtype=np.uint8)
            for _ in range(int(rng.integers(0, 8))):
                if n == 0:
                    break
                at = int(rng.integers(0, n))
                run = int(rng.integers(1, 400))
                arr[at : at + run] = rng.integers(1, 256)
            buf = arr.tobytes()
        elif mode == 2:  # periodic pattern
            buf = (bytes(range(256)) * (n // 256 + 1))[:n]
        else:  # random with zero holes
            arr = rng.integers(0, 256, n, dtype=np.uint8)
            arr[arr < 90] = 0
            buf = arr.tobytes()
        assert codec.rle_decode(codec.rle_encode(buf), n) == buf
        if i % 10 == 0:  # framing round-trip on the page-padded capture
            padded = buf + b"\x00" * (-n % page)
            record = codec.record_from_memory(padded, b"\x5a" * 16, i, i % 3)
            frame = codec.frame_record(record)
            parsed, used = codec.parse_record(frame)
            assert used == len(frame) and parsed == record
            assert parsed.decode_memory() == padded

    # malformed inputs raise exactly the specified errors
    with pytest.raises(codec.MalformedToken):
        codec.rle_decode(bytes([0x00, 0x00]), 0)
    with pytest.raises(codec.MalformedToken):
        codec.rle_decode(bytes([0x07, 0x01, 0x00]), 1)
    with pytest.raises(codec.TruncatedStream):
        codec.rle_decode(bytes([0x01, 0x10, 0xAA]), 16)
    with pytest.raises(codec.LengthMismatch):
        codec.rle_decode(codec.rle_encode(b"\x00" * page), page - 1)
    frame = bytearray(codec.frame_record(codec.record_from_memory(
        b"\x00" * page, b"\x01" * 16, 0, 0)))
    frame[-6] ^= 1
    with pytest.raises(codec.ChecksumMismatch):
        codec.parse_record(bytes(frame))
    with pytest.raises(codec.BadMagic):
        codec.parse_record(b"WHAT" + bytes(frame[4:]))
    with pytest.raises(codec.Truncated):
        codec.parse_record(bytes(frame[:20]))

    # sparse-page compression: 10 pages, <= 1% nonzero, < 5% of raw size
    memory = bytearray(10 * page)
    for k in range(100):
        base = 512 + k * 6500
        memory[base : base + 64] = bytes([0x41 + (k % 26)]) * 64
    assert sum(1 for b in memory if b) <= len(memory) // 100
    assert len(codec.rle_encode(bytes(memory))) < 0.05 * len(memory)


# 3 ---------------------------------------------------------------------------

def test_attestation_count_ordering(kernel_paths, tmp_path):
    assert len(kernel_paths) >= 5
    counts = {}
    for path in kernel_paths:
        raw = path.read_bytes()
        per_policy = {}
        for policy in POLICIES:
            out, _ = instrument(raw, policy)
            module = tmp_path / ("%s.%s.wasm" % (path.stem, policy.value))
            module.write_bytes(out)
            summary = run_attested(AttesterConfig(
                module_path=str(module), session_id=b"\x00" * 16))
            assert summary.trap is None
            per_policy[policy.value] = summary.snapshots_emitted
        counts[path.stem] = per_policy
        assert per_policy["import"] <= per_policy["local"] <= per_policy["memory"], counts
        assert per_policy["import"] >= 1
    # the corpus-wide averages mirror the coarse->fine growth pattern
    avg = {p.value: sum(c[p.value] for c in counts.values()) / len(counts)
           for p in POLICIES}
    assert avg["import"] < avg["local"] < avg["memory"]


# 4 ---------------------------------------------------------------------------

def test_overhead_ablation_shape(kernel_paths):
    report = run_ablation(
        kernel_paths, ["import", "local", "memory"], reps=5,
        graph=random_small_resnet(seed=1),
    )
    assert report["excluded"] == []
    g = report["geo_mean"]
    assert g["import"] <= g["local"] <= g["memory"], g
    assert g["import"] <= 1.5, g
    a = report["avg_attestations"]
    assert a["import"] <= a["local"] <= a["memory"]


# 5 ---------------------------------------------------------------------------

def test_inference_engine_correctness():
    from lma.model import Conv2d, Dense, MaxPool2d, ModelGraph, ResidualAdd
    from lma.engine import conv2d, maxpool2d

    rng = np.random.default_rng(5)
    for _ in range(25):
        cin, cout = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        size, k = int(rng.integers(2, 9)), int(rng.integers(1, 4))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        if size + 2 * pad < k:
            continue
        x = rng.normal(size=(cin, size, size)).astype(np.float32)
        layer = Conv2d(cin, cout, k, stride, pad,
                       weight=rng.normal(size=(cout, cin, k, k)).astype(np.float32),
                       bias=rng.normal(size=cout).astype(np.float32))
        assert np.abs(conv2d(x, layer)
                      - conv2d_reference(x, layer.weight, layer.bias, stride, pad)).max() < 1e-5
        if size >= 2:
            assert np.abs(maxpool2d(x, MaxPool2d(2, 2))
                          - maxpool_reference(x, 2, 2)).max() < 1e-6

    for _ in range(100):
        logits = rng.normal(size=2).astype(np.float32) * 10
        assert abs(float(softmax(logits).sum()) - 1.0) < 1e-6

    # residual correctness through the full default graph
    graph = random_small_resnet(seed=3)
    image = to_image(rng.integers(0, 256, 65536, dtype=np.uint8).tobytes(), 128)
    a = forward_logits(graph, image.pixels)
    b = forward_logits(graph, image.pixels)
    assert np.array_equal(a, b)

    # cross-implementation oracle: committed golden weights + golden logits
    golden_model = GOLDEN / "golden.lmaw"
    golden_logits = GOLDEN / "golden_logits.json"
    oracle_images = GOLDEN / "oracle_images.bin"
    assert golden_model.exists() and golden_logits.exists() and oracle_images.exists(), \
        "golden fixtures missing; run scripts/make_golden.py"
    g = load_model_file(golden_model)
    expected = np.array(json.loads(golden_logits.read_text()), dtype=np.float64)
    raw = oracle_images.read_bytes()
    side = 128
    n = len(raw) // (side * side)
    assert n == expected.shape[0] == 100
    worst = 0.0
    for i in range(n):
        pixels = np.frombuffer(raw, np.uint8, side * side, i * side * side)
        image = pixels.reshape(side, side).astype(np.float32) / np.float32(255)
        got = forward_logits(g, image)
        worst = max(worst, float(np.abs(got - expected[i]).max()))
    assert worst < 1e-4, "max abs logit difference %.2e" % worst


# 6 ---------------------------------------------------------------------------

def test_verdict_equivalence_10k_streams():
    rng = np.random.default_rng(77)
    for _ in range(10_000):
        window = int(rng.integers(1, 13))
        threshold = int(rng.integers(1, window + 1))
        n = int(rng.integers(1, 65))
        flags = [bool(b) for b in rng.integers(0, 2, n)]
        agg = VerdictAggregator(VerdictConfig(window, threshold))
        for seq, f in enumerate(flags):
            agg.feed(seq, f)
        verdict = agg.finalize()
        expected_mal, expected_seq = brute_force_verdict(flags, window, threshold)
        assert verdict.malicious == expected_mal
        assert verdict.trigger_seq == expected_seq

    # latching
    agg = VerdictAggregator(VerdictConfig(8, 5))
    for seq in range(5):
        agg.feed(seq, True)
    for seq in range(5, 105):
        agg.feed(seq, False)
    assert agg.finalize().malicious

    # noise absorption: every length-8 window at <= 4 corrupted stays benign
    pattern = [True, False, True, False, True, False, False, True]
    agg = VerdictAggregator(VerdictConfig(8, 5))
    for seq, f in enumerate(pattern * 20):
        agg.feed(seq, f)
    assert not agg.finalize().malicious


# 7 ---------------------------------------------------------------------------

def test_end_to_end_determinism(framepack_path, tmp_path):
    golden_model = GOLDEN / "golden.lmaw"
    assert golden_model.exists(), "golden fixtures missing; run scripts/make_golden.py"
    graph = load_model_file(golden_model)
    out, _ = instrument(framepack_path.read_bytes(), InstrumentationPolicy.IMPORT_FUNCTION)
    module = tmp_path / "fp.lma.wasm"
    module.write_bytes(out)
    reports = []
    streams = []
    for run in range(2):
        stream = tmp_path / ("run%d.lmas" % run)
        run_attested(AttesterConfig(
            module_path=str(module), sink="file:%s" % stream,
            session_id=bytes(range(16)), stdin=b"\x21\x03\x55\x10",
        ))
        streams.append(stream.read_bytes())
        report = verify_file(stream, graph)
        reports.append(json.dumps(report, indent=2, sort_keys=True).encode())
    assert streams[0] == streams[1]
    assert reports[0] == reports[1]


# 8 ---------------------------------------------------------------------------

def test_detection_at_desk_scale(framepack_path, tmp_path, monkeypatch):
    recipe_path = GOLDEN / "dataset_recipe.json"
    golden_model = GOLDEN / "golden.lmaw"
    assert recipe_path.exists() and golden_model.exists(), \
        "golden fixtures missing; run scripts/make_golden.py"
    recipe = json.loads(recipe_path.read_text())
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")

    corpus = tmp_path / "corpus"
    corpus.mkdir()
    for seed_file in sorted((GOLDEN.parent / "corpus_seeds").glob("*.bin")):
        (corpus / seed_file.name).write_bytes(seed_file.read_bytes())
    dataset.mutate_corpus(corpus, recipe["mutate_rounds"], recipe["mutate_seed"])

    out_bytes, _ = instrument(
        framepack_path.read_bytes(), InstrumentationPolicy(recipe["policy"])
    )
    module = tmp_path / "fp.lma.wasm"
    module.write_bytes(out_bytes)
    data_dir = tmp_path / "data"
    manifest = dataset.generate(
        module, corpus, data_dir,
        n_corrupt_per_benign=recipe["corrupt_ratio"],
        seed=recipe["dataset_seed"],
        split_fractions=tuple(recipe["split_fractions"]),
    )
    test_entries = [e for e in manifest["entries"] if e["split"] == "test"]
    executions = {e["input_id"] for e in test_entries}
    n_corrupt = sum(1 for e in test_entries if e["corruption"] is not None)
    assert len(executions) >= 100, "held-out split too small: %d" % len(executions)
    assert abs(n_corrupt - len(test_entries) / 2) <= len(test_entries) * 0.01  # balanced

    graph = load_model_file(golden_model)
    metrics = evaluate.evaluate(manifest, data_dir, graph,
                                config=VerdictConfig(), split="test")
    accuracy = metrics["verdict_level"]["accuracy"]
    assert accuracy >= 0.95, "verdict-level accuracy %.4f" % accuracy
