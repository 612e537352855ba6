"""Attester: executes an instrumented module and emits snapshot records.

The snapshot hook runs synchronously on the guest's (only) thread; the guest
is parked inside the host call while memory is captured, encoded, framed and
handed to the sink, so a record always reflects the exact memory state at
the hook site and records leave in seq order.
"""

from __future__ import annotations

import json
import os
import socket
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

from . import codec
from .wasm import opcodes as op
from .wasm.instrument import HOOK_MODULE, HOOK_NAME
from .wasm.interp import ExitTrap, HostFunc, Instance, LinkError, Trap
from .wasm.module import KIND_FUNC, parse_module
from .wasm.wasi import WasiState, make_wasi


class AttesterError(Exception):
    pass


class MissingHookImport(AttesterError):
    pass


class SinkUnavailable(AttesterError):
    pass


# ---- sinks ---------------------------------------------------------------

class FileSink:
    def __init__(self, path):
        try:
            self._fh = open(path, "wb")
        except OSError as exc:
            raise SinkUnavailable("cannot open %s: %s" % (path, exc)) from exc

    def write(self, frame: bytes) -> None:
        self._fh.write(frame)

    def close(self) -> None:
        self._fh.flush()
        self._fh.close()


class TcpSink:
    def __init__(self, host: str, port: int):
        try:
            self._sock = socket.create_connection((host, port), timeout=10)
        except OSError as exc:
            raise SinkUnavailable("cannot connect to %s:%d: %s" % (host, port, exc)) from exc

    def write(self, frame: bytes) -> None:
        self._sock.sendall(frame)

    def close(self) -> None:
        self._sock.close()


class CollectSink:
    """Keeps frames in memory; used by tests, dataset generation, and bench."""

    def __init__(self):
        self.frames: list = []

    def write(self, frame: bytes) -> None:
        self.frames.append(frame)

    def close(self) -> None:
        pass

    @property
    def records(self) -> list:
        return [codec.parse_record(f)[0] for f in self.frames]


class NullSink:
    def write(self, frame: bytes) -> None:
        pass

    def close(self) -> None:
        pass


def open_sink(spec: str):
    """Sink spec grammar: ``file:PATH`` | ``tcp:HOST:PORT`` | ``null``."""
    if spec == "null":
        return NullSink()
    kind, _, rest = spec.partition(":")
    if kind == "file" and rest:
        return FileSink(rest)
    if kind == "tcp":
        host, _, port = rest.rpartition(":")
        if host and port.isdigit():
            return TcpSink(host, int(port))
    raise SinkUnavailable("unrecognized sink spec %r" % spec)


# ---- execution -----------------------------------------------------------

@dataclass
class ExecResult:
    exit_code: Optional[int]
    trap: Optional[str]
    stdout: bytes
    stderr: bytes
    memory: bytes
    pages: int


def execute(
    module_bytes: bytes,
    stdin: bytes = b"",
    argv: tuple = (),
    env: tuple = (),
    entry: str = "_start",
    hook_fn=None,
    fuel: Optional[int] = None,
) -> ExecResult:
    """Run a module to completion under the deterministic WASI shim.

    ``hook_fn(instance, reason)`` implements ``lma.snapshot`` when given;
    otherwise a no-op hook is wired so instrumented modules still link.
    ``entry=None`` instantiates (running any start function) without
    invoking an export.
    """
    state = WasiState(stdin=stdin, argv=list(argv), environ=list(env))
    imports = make_wasi(state)
    hook = hook_fn if hook_fn is not None else (lambda inst, reason: None)
    imports[(HOOK_MODULE, HOOK_NAME)] = HostFunc((op.I32,), (), hook)

    exit_code: Optional[int] = None
    trap = None
    mod = parse_module(module_bytes)
    inst = None
    try:
        inst = Instance(mod, imports, fuel=fuel, run_start=False)
        inst.run_start()
        if entry is not None:
            if entry in inst.exports:
                inst.invoke(entry)
            elif mod.start is None:
                raise LinkError("module has no %r export and no start section" % entry)
        exit_code = 0
    except ExitTrap as exc:
        exit_code = exc.code
    except Trap as exc:
        trap = exc.reason
    # memory contents survive in the instance even after proc_exit / traps
    memory = bytes(inst.memory) if inst is not None else b""
    pages = inst.pages if inst is not None else 0
    return ExecResult(
        exit_code=exit_code,
        trap=trap,
        stdout=bytes(state.stdout),
        stderr=bytes(state.stderr),
        memory=memory,
        pages=pages,
    )


# ---- attested runs ---------------------------------------------------------

@dataclass
class AttesterConfig:
    module_path: str
    sink: str = "null"
    session_id: Optional[bytes] = None  # 16 bytes; defaults to a random id
    max_snapshots: int = 0  # 0 = unlimited
    stdin: bytes = b""
    argv: tuple = ()
    env: tuple = ()
    entry: str = "_start"
    fuel: Optional[int] = None


@dataclass
class RunSummary:
    exit_code: Optional[int]
    trap: Optional[str]
    snapshots_emitted: int
    total_bytes_raw: int
    total_bytes_compressed: int
    wall_time_s: float
    session_id: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def run_attested(config: AttesterConfig, sink=None) -> RunSummary:
    with open(config.module_path, "rb") as fh:
        module_bytes = fh.read()
    mod = parse_module(module_bytes)
    if not any(
        i.module == HOOK_MODULE and i.name == HOOK_NAME and i.kind == KIND_FUNC
        for i in mod.imports
    ):
        raise MissingHookImport(
            "module does not import %s.%s; instrument it first" % (HOOK_MODULE, HOOK_NAME)
        )

    session_id = config.session_id if config.session_id is not None else os.urandom(16)
    if len(session_id) != 16:
        raise AttesterError("session_id must be 16 bytes")
    owns_sink = sink is None
    if owns_sink:
        sink = open_sink(config.sink)

    counters = {"seq": 0, "raw": 0, "compressed": 0}
    cap = config.max_snapshots

    def snapshot_hook(inst: Instance, reason: int) -> None:
        if cap and counters["seq"] >= cap:
            return
        memory = bytes(inst.memory)
        record = codec.record_from_memory(memory, session_id, counters["seq"], reason & 0xFF)
        frame = codec.frame_record(record)
        sink.write(frame)
        counters["seq"] += 1
        counters["raw"] += len(memory)
        counters["compressed"] += len(frame)

    started = time.perf_counter()
    try:
        result = execute(
            module_bytes,
            stdin=config.stdin,
            argv=config.argv,
            env=config.env,
            entry=config.entry,
            hook_fn=snapshot_hook,
            fuel=config.fuel,
        )
    finally:
        if owns_sink:
            sink.close()
    elapsed = time.perf_counter() - started

    return RunSummary(
        exit_code=result.exit_code,
        trap=result.trap,
        snapshots_emitted=counters["seq"],
        total_bytes_raw=counters["raw"],
        total_bytes_compressed=counters["compressed"],
        wall_time_s=elapsed,
        session_id=session_id.hex(),
    )
