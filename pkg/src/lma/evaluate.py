"""Snapshot-level and verdict-level metrics over a labeled dataset split.

Snapshot metrics treat every record independently.  Verdict metrics group
records by execution (input id), run the sliding-window aggregation over the
per-snapshot classifications in seq order, and compare the execution verdict
against the execution's ground truth (an execution is corrupted iff its
entries carry a corruption spec).
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

from . import codec
from .engine import infer
from .image import DEFAULT_SIDE, to_image
from .model import ModelGraph
from .verdict import InsufficientData, VerdictAggregator, VerdictConfig


class EmptySplit(Exception):
    pass


def confusion_metrics(tp: int, fp: int, tn: int, fn: int) -> dict:
    total = tp + fp + tn + fn
    accuracy = (tp + tn) / total if total else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "tp": tp, "fp": fp, "tn": tn, "fn": fn,
        "accuracy": accuracy, "precision": precision, "recall": recall, "f1": f1,
    }


def evaluate(
    manifest: dict,
    manifest_dir,
    graph: ModelGraph,
    config: VerdictConfig = VerdictConfig(),
    side: int = DEFAULT_SIDE,
    split: str = "test",
) -> dict:
    manifest_dir = Path(manifest_dir)
    entries = [e for e in manifest["entries"] if e["split"] == split]
    if not entries:
        raise EmptySplit("no entries in split %r" % split)

    record_cache: dict = {}

    def records_of(rel_path: str) -> list:
        if rel_path not in record_cache:
            record_cache[rel_path] = codec.read_records(manifest_dir / rel_path)
        return record_cache[rel_path]

    # classify every referenced record once
    classified = []  # (entry, seq_no, predicted_corrupted)
    snap = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
    for entry in entries:
        record = records_of(entry["snapshot_file"])[entry["record_index"]]
        result = infer(graph, to_image(record.decode_memory(), side))
        predicted = result.label.value == "Corrupted"
        truth = entry["label"] == "Corrupted"
        key = ("tp" if predicted else "fn") if truth else ("fp" if predicted else "tn")
        snap[key] += 1
        classified.append((entry, record.seq_no, predicted))

    # verdict level: group by execution
    executions: dict = defaultdict(list)
    for entry, seq_no, predicted in classified:
        executions[entry["input_id"]].append((seq_no, predicted, entry))
    verdict_rows = []
    per_program: dict = defaultdict(lambda: {"tp": 0, "fp": 0, "tn": 0, "fn": 0})
    overall = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
    for input_id in sorted(executions):
        rows = sorted(executions[input_id], key=lambda r: r[0])
        truth = any(e["corruption"] is not None for _, _, e in rows)
        aggregator = VerdictAggregator(config)
        for seq_no, predicted, _ in rows:
            aggregator.feed(seq_no, predicted)
        try:
            verdict = aggregator.finalize()
            malicious = verdict.malicious
        except InsufficientData:
            malicious = False
        program = rows[0][2]["source_program"]
        key = ("tp" if malicious else "fn") if truth else ("fp" if malicious else "tn")
        per_program[program][key] += 1
        overall[key] += 1
        verdict_rows.append({
            "input_id": input_id,
            "source_program": program,
            "truth": "Corrupted" if truth else "Benign",
            "verdict": "Malicious" if malicious else "Benign",
            "snapshots": len(rows),
        })

    return {
        "split": split,
        "snapshot_level": confusion_metrics(**snap),
        "verdict_level": confusion_metrics(**overall),
        "verdict_level_per_program": {
            program: confusion_metrics(**counts) for program, counts in sorted(per_program.items())
        },
        "executions": verdict_rows,
    }
