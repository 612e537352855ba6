#!/usr/bin/env python3
"""Produce the committed golden fixtures under fixtures/golden/.

Pipeline (everything seeded; SOURCE_DATE_EPOCH pinned to 0):
  1. grow the working corpus from fixtures/corpus_seeds with the mutation
     fuzzer,
  2. instrument the structured workload under the import policy and generate
     the labeled dataset,
  3. train the classifier with the trainer package (node, built first),
  4. emit golden.lmaw, golden_logits.json over oracle_images.bin, the
     dataset_recipe.json the acceptance suite replays, and a quick
     verdict-level evaluation of the result.

Requires: the toolkit installed (pip install -e .), node, and a built
trainer (cd trainer && npm install && npx tsc).
"""

import json
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from lma import dataset, evaluate  # noqa: E402
from lma.engine import forward_logits  # noqa: E402
from lma.model import load_model_file  # noqa: E402
from lma.verdict import VerdictConfig  # noqa: E402
from lma.wasm.instrument import InstrumentationPolicy, instrument  # noqa: E402

GOLDEN = ROOT / "fixtures" / "golden"
SIDE = 128

RECIPE = {
    "module": "framepack.wasm",
    "policy": "import",
    "mutate_rounds": 36,
    "mutate_seed": 4242,
    "dataset_seed": 20250810,
    "corrupt_ratio": 1,
    "split_fractions": [0.6, 0.2, 0.2],
}

TRAIN_SEED = 1337
TRAIN_EPOCHS = 5
TRAIN_MAX_PER_CLASS = 800


def main() -> int:
    os.environ["SOURCE_DATE_EPOCH"] = "0"
    GOLDEN.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        corpus = tmp / "corpus"
        corpus.mkdir()
        for seed_file in sorted((ROOT / "fixtures" / "corpus_seeds").glob("*.bin")):
            shutil.copy(seed_file, corpus / seed_file.name)
        dataset.mutate_corpus(corpus, RECIPE["mutate_rounds"], RECIPE["mutate_seed"])
        n_inputs = len(list(corpus.iterdir()))

        raw = (ROOT / "fixtures" / "modules" / RECIPE["module"]).read_bytes()
        instrumented, _ = instrument(raw, InstrumentationPolicy(RECIPE["policy"]))
        module = tmp / "workload.lma.wasm"
        module.write_bytes(instrumented)

        print("generating dataset from %d inputs ..." % n_inputs, flush=True)
        data_dir = tmp / "data"
        manifest = dataset.generate(
            module, corpus, data_dir,
            n_corrupt_per_benign=RECIPE["corrupt_ratio"],
            seed=RECIPE["dataset_seed"],
            split_fractions=tuple(RECIPE["split_fractions"]),
        )
        per_split = {}
        for entry in manifest["entries"]:
            per_split.setdefault(entry["split"], set()).add(entry["input_id"])
        print("executions per split:", {k: len(v) for k, v in sorted(per_split.items())})
        if len(per_split.get("test", ())) < 100:
            raise SystemExit("test split too small; raise mutate_rounds")

        print("training ...", flush=True)
        golden = GOLDEN / "golden.lmaw"
        report_path = tmp / "train_report.json"
        subprocess.run(
            ["node", str(ROOT / "trainer" / "dist" / "cli.js"), "train",
             "--manifest", str(data_dir / "manifest.json"),
             "--out", str(golden),
             "--report", str(report_path),
             "--seed", str(TRAIN_SEED),
             "--epochs", str(TRAIN_EPOCHS),
             "--max-per-class", str(TRAIN_MAX_PER_CLASS)],
            check=True,
        )
        train_report = json.loads(report_path.read_text())
        (GOLDEN / "training_report.json").write_text(
            json.dumps(train_report, indent=2, sort_keys=True) + "\n")

        # oracle images + trainer-side golden logits
        rng = np.random.default_rng(0x0BAC1E5)
        images = rng.integers(0, 256, (100, SIDE, SIDE), dtype=np.uint8)
        (GOLDEN / "oracle_images.bin").write_bytes(images.tobytes())
        subprocess.run(
            ["node", str(ROOT / "trainer" / "dist" / "cli.js"), "reference",
             "--model", str(golden),
             "--images", str(GOLDEN / "oracle_images.bin"),
             "--out", str(GOLDEN / "golden_logits.json")],
            check=True,
        )

        (GOLDEN / "dataset_recipe.json").write_text(
            json.dumps(RECIPE, indent=2, sort_keys=True) + "\n")

        # sanity: the committed model against the held-out split, engine side
        graph = load_model_file(golden)
        metrics = evaluate.evaluate(manifest, data_dir, graph,
                                    config=VerdictConfig(), split="test")
        summary = {
            "val_accuracy": train_report["final_val_accuracy"],
            "test_verdict_accuracy": metrics["verdict_level"]["accuracy"],
            "test_verdict_f1": metrics["verdict_level"]["f1"],
            "test_snapshot_accuracy": metrics["snapshot_level"]["accuracy"],
            "test_executions": len(per_split["test"]),
        }
        print(json.dumps(summary, indent=2))
        # engine-side logit check against the trainer's numbers
        expected = np.array(json.loads((GOLDEN / "golden_logits.json").read_text()))
        worst = 0.0
        for i in range(100):
            img = images[i].astype(np.float32) / np.float32(255)
            worst = max(worst, float(np.abs(forward_logits(graph, img) - expected[i]).max()))
        print("cross-implementation max abs logit diff: %.3e" % worst)
        if worst >= 1e-4:
            raise SystemExit("cross-implementation drift exceeds 1e-4")
    return 0


if __name__ == "__main__":
    sys.exit(main())
