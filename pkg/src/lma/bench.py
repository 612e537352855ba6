"""Overhead ablation: uninstrumented baseline vs each policy, with inline
verification in the hook path (capture -> encode -> decode -> image ->
classify), medians per cell, geometric means across modules."""

from __future__ import annotations

import json
import math
import statistics
import time
from pathlib import Path
from typing import Optional

from . import codec
from .attester import AttesterConfig, NullSink, execute, run_attested
from .engine import get_backend
from .image import DEFAULT_SIDE, to_image
from .model import ModelGraph
from .wasm.instrument import InstrumentationPolicy, instrument


class BaselineFailure(Exception):
    pass


def geo_mean(ratios) -> float:
    ratios = list(ratios)
    if not ratios:
        raise ValueError("geo_mean of empty sequence")
    return math.exp(sum(math.log(r) for r in ratios) / len(ratios))


class _VerifySink:
    """Sink that verifies records inline, modeling in-runtime verification."""

    def __init__(self, backend, side: int):
        self.backend = backend
        self.side = side
        self.labels = []

    def write(self, frame: bytes) -> None:
        record, _ = codec.parse_record(frame)
        image = to_image(record.decode_memory(), self.side)
        self.labels.append(self.backend.classify(image).label)

    def close(self) -> None:
        pass


def _timed_baseline(module_bytes: bytes, stdin: bytes) -> float:
    t0 = time.perf_counter()
    result = execute(module_bytes, stdin=stdin)
    wall = time.perf_counter() - t0
    if result.trap is not None:
        raise BaselineFailure(result.trap)
    return wall


def run_ablation(
    module_paths,
    policies,
    reps: int,
    graph: Optional[ModelGraph] = None,
    backend_name: str = "builtin",
    side: int = DEFAULT_SIDE,
    stdin: bytes = b"",
) -> dict:
    if reps < 3:
        raise ValueError("need reps >= 3")
    policies = [InstrumentationPolicy(p) for p in policies]
    backend = get_backend(backend_name, graph) if graph is not None else None

    modules = {}
    excluded = []
    per_policy_ratios = {p.value: [] for p in policies}
    per_policy_counts = {p.value: [] for p in policies}

    for path in module_paths:
        path = Path(path)
        module_bytes = path.read_bytes()
        instrumented = {}
        reports = {}
        tmp_paths = {}
        for policy in policies:
            out_bytes, report = instrument(module_bytes, policy)
            tmp = path.parent / (path.stem + ".%s.bench.wasm" % policy.value)
            tmp.write_bytes(out_bytes)
            instrumented[policy.value] = out_bytes
            reports[policy.value] = report
            tmp_paths[policy.value] = tmp

        # Interleave the baseline with every policy inside each repetition so
        # slow clock drift (frequency scaling, noisy neighbors) cancels out of
        # the ratios instead of biasing whole cells.
        baseline_walls = []
        walls = {p.value: [] for p in policies}
        counts = {p.value: set() for p in policies}
        try:
            for _ in range(reps):
                baseline_walls.append(_timed_baseline(module_bytes, stdin))
                for policy in policies:
                    sink = (
                        _VerifySink(backend, side) if backend is not None else NullSink()
                    )
                    summary = run_attested(
                        AttesterConfig(module_path=str(tmp_paths[policy.value]),
                                       stdin=stdin, session_id=b"\x00" * 16),
                        sink=sink,
                    )
                    if summary.trap is not None:
                        raise BaselineFailure(summary.trap)
                    walls[policy.value].append(summary.wall_time_s)
                    counts[policy.value].add(summary.snapshots_emitted)
        except BaselineFailure as exc:
            excluded.append({"module": path.name, "reason": str(exc)})
            continue
        finally:
            for tmp in tmp_paths.values():
                tmp.unlink(missing_ok=True)

        baseline = statistics.median(baseline_walls)
        row = {"baseline_s": baseline, "policies": {}}
        for policy in policies:
            key = policy.value
            if len(counts[key]) != 1:
                raise BaselineFailure(
                    "nondeterministic attestation counts for %s: %s" % (path.name, counts[key])
                )
            median = statistics.median(walls[key])
            ratio = median / baseline
            row["policies"][key] = {
                "median_s": median,
                "ratio": ratio,
                "attestations": counts[key].pop(),
                "sites_instrumented": reports[key].sites_instrumented,
            }
            per_policy_ratios[key].append(ratio)
            per_policy_counts[key].append(row["policies"][key]["attestations"])
        modules[path.name] = row

    return {
        "backend": backend_name if graph is not None else None,
        "model": "small-resnet" if graph is not None else None,
        "reps": reps,
        "modules": modules,
        "excluded": excluded,
        "geo_mean": {
            p: (geo_mean(r) if r else None) for p, r in per_policy_ratios.items()
        },
        "avg_attestations": {
            p: (sum(c) / len(c) if c else None) for p, c in per_policy_counts.items()
        },
    }



def write_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
