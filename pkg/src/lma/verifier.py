"""Decoupled verifier: decode records, classify, aggregate, report.

Sessions are demultiplexed by session id; inside a session records must
arrive with seq 0, 1, 2, ... — any gap, regression, undecodable payload, or
checksum failure marks the session Invalid (a state distinct from both
Benign and Malicious).  A Malicious latch is emitted as soon as it fires
while the remaining records are still logged.
"""

from __future__ import annotations

import json
import socket
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import codec
from .engine import Classification, infer
from .image import DEFAULT_SIDE, to_image
from .model import ModelError, ModelGraph, load_model_file
from .verdict import InsufficientData, VerdictAggregator, VerdictConfig


class VerifierError(Exception):
    pass


class ModelLoadError(VerifierError):
    pass


class SourceUnavailable(VerifierError):
    pass


def verify_one(record: codec.SnapshotRecord, graph: ModelGraph,
               side: int = DEFAULT_SIDE) -> Classification:
    return infer(graph, to_image(record.decode_memory(), side))


@dataclass
class _Session:
    aggregator: VerdictAggregator
    expected_seq: int = 0
    invalid_reason: Optional[str] = None
    trigger_seq: Optional[int] = None
    corrupted: int = 0
    rows: list = field(default_factory=list)
    timings: dict = field(default_factory=lambda: {"decode_s": 0.0, "image_s": 0.0, "infer_s": 0.0})


class StreamVerifier:
    """Feed records (possibly interleaved across sessions); then report()."""

    def __init__(
        self,
        graph: ModelGraph,
        config: VerdictConfig = VerdictConfig(),
        side: int = DEFAULT_SIDE,
        on_verdict: Optional[Callable] = None,
        collect_timings: bool = False,
    ):
        self.graph = graph
        self.config = config
        self.side = side
        self.on_verdict = on_verdict
        self.collect_timings = collect_timings
        self.sessions: dict = {}

    def _session(self, session_id: bytes) -> _Session:
        state = self.sessions.get(session_id)
        if state is None:
            state = self.sessions[session_id] = _Session(VerdictAggregator(self.config))
        return state

    def feed(self, record: codec.SnapshotRecord, checksum_ok: bool = True) -> None:
        state = self._session(record.session_id)
        if not checksum_ok:
            state.invalid_reason = state.invalid_reason or (
                "checksum mismatch at seq %d" % record.seq_no
            )
            return  # record dropped
        if state.invalid_reason is None and record.seq_no != state.expected_seq:
            state.invalid_reason = "expected seq %d, got %d" % (
                state.expected_seq, record.seq_no,
            )
        state.expected_seq = record.seq_no + 1

        t0 = time.perf_counter()
        try:
            memory = record.decode_memory()
        except codec.CodecError as exc:
            state.invalid_reason = state.invalid_reason or (
                "payload decode failed at seq %d: %s" % (record.seq_no, exc)
            )
            return
        t1 = time.perf_counter()
        img = to_image(memory, self.side)
        t2 = time.perf_counter()
        result = infer(self.graph, img)
        t3 = time.perf_counter()
        if self.collect_timings:
            state.timings["decode_s"] += t1 - t0
            state.timings["image_s"] += t2 - t1
            state.timings["infer_s"] += t3 - t2

        corrupted = result.label.value == "Corrupted"
        state.corrupted += 1 if corrupted else 0
        state.rows.append(
            {"seq": record.seq_no, "score": float(result.score), "label": result.label.value}
        )
        if state.invalid_reason is None:
            was_latched = state.aggregator.malicious
            trigger = state.aggregator.feed(record.seq_no, corrupted)
            if trigger is not None and not was_latched:
                state.trigger_seq = trigger
                if self.on_verdict is not None:
                    self.on_verdict(record.session_id, trigger)

    def report(self) -> dict:
        sessions = []
        for session_id in sorted(self.sessions):
            state = self.sessions[session_id]
            if state.invalid_reason is not None:
                verdict = "Invalid"
                trigger = None
            else:
                try:
                    final = state.aggregator.finalize()
                    verdict = final.label
                    trigger = final.trigger_seq
                except InsufficientData as exc:
                    verdict = "Invalid"
                    trigger = None
                    state.invalid_reason = str(exc)
            entry = {
                "session_id": session_id.hex(),
                "verdict": verdict,
                "snapshots": len(state.rows),
                "corrupted_count": state.corrupted,
                "first_trigger_seq": trigger,
                "invalid_reason": state.invalid_reason,
                "per_snapshot": state.rows,
            }
            if self.collect_timings:
                entry["timings"] = {k: round(v, 6) for k, v in state.timings.items()}
            sessions.append(entry)
        return {
            "config": {
                "window": self.config.window,
                "threshold": self.config.threshold,
                "min_snapshots": self.config.min_snapshots,
                "side": self.side,
            },
            "sessions": sessions,
        }


def load_graph(model_path) -> ModelGraph:
    try:
        return load_model_file(model_path)
    except (ModelError, OSError) as exc:
        raise ModelLoadError(str(exc)) from exc


def verify_file(
    stream_path,
    graph: ModelGraph,
    config: VerdictConfig = VerdictConfig(),
    side: int = DEFAULT_SIDE,
    on_verdict: Optional[Callable] = None,
    collect_timings: bool = False,
) -> dict:
    verifier = StreamVerifier(graph, config, side, on_verdict, collect_timings)
    try:
        with open(stream_path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise SourceUnavailable(str(exc)) from exc
    for record, ok in codec.iter_records_lenient(data):
        verifier.feed(record, ok)
    return verifier.report()


def verify_listen(
    port: int,
    graph: ModelGraph,
    config: VerdictConfig = VerdictConfig(),
    side: int = DEFAULT_SIDE,
    sessions: int = 1,
    host: str = "127.0.0.1",
    on_verdict: Optional[Callable] = None,
    collect_timings: bool = False,
    ready_callback: Optional[Callable] = None,
) -> dict:
    """Accept ``sessions`` connections (one attester session each) and verify.

    Records are processed as they complete, so memory stays bounded by one
    partial record plus the receive buffer; a slow producer simply keeps the
    connection open longer.
    """
    verifier = StreamVerifier(graph, config, side, on_verdict, collect_timings)
    try:
        server = socket.create_server((host, port))
    except OSError as exc:
        raise SourceUnavailable("cannot bind %s:%d: %s" % (host, port, exc)) from exc
    with server:
        if ready_callback is not None:
            ready_callback(server.getsockname()[1])
        for _ in range(sessions):
            conn, _addr = server.accept()
            with conn:
                assembler = codec.RecordAssembler()
                while True:
                    chunk = conn.recv(65536)
                    if not chunk:
                        break
                    for record, ok in assembler.feed(chunk):
                        verifier.feed(record, ok)
                try:
                    assembler.finish()
                except codec.Truncated:
                    pass  # attester died mid-record; verdicts use what arrived
    return verifier.report()


def write_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
