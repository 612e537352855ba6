import pytest

from lma import codec
from lma.attester import (
    AttesterConfig,
    CollectSink,
    MissingHookImport,
    SinkUnavailable,
    execute,
    open_sink,
    run_attested,
)
from lma.wasm.instrument import InstrumentationPolicy, instrument

from conftest import require_wat, wat2wasm


def attest_bytes(module_bytes, tmp_path, **kwargs):
    path = tmp_path / "module.wasm"
    path.write_bytes(module_bytes)
    sink = CollectSink()
    summary = run_attested(AttesterConfig(module_path=str(path), **kwargs), sink=sink)
    return summary, sink


def test_uninstrumented_module_is_rejected(corpus_modules, tmp_path):
    path = tmp_path / "plain.wasm"
    path.write_bytes(corpus_modules["imports3"])
    with pytest.raises(MissingHookImport):
        run_attested(AttesterConfig(module_path=str(path)))


def test_one_import_call_one_snapshot(corpus_modules, tmp_path):
    require_wat()
    src = """
    (module
      (import "wasi_snapshot_preview1" "proc_exit" (func $exit (param i32)))
      (memory (export "memory") 1)
      (func (export "_start") (call $exit (i32.const 0))))
    """
    out, _ = instrument(wat2wasm(src), InstrumentationPolicy.IMPORT_FUNCTION)
    summary, sink = attest_bytes(out, tmp_path, session_id=b"\x07" * 16)
    assert summary.snapshots_emitted == 1
    records = sink.records
    assert len(records) == 1
    assert records[0].seq_no == 0
    assert records[0].reason_code == 0
    assert records[0].mem_size_bytes == 65536
    # untouched memory is all zeros: payload is a single 4-byte zero-run token
    assert len(records[0].payload) <= 8


def test_snapshot_captures_memory_at_hook_instant(tmp_path):
    require_wat()
    # magic is stored immediately before the import call; the hook fires
    # after the store, so the record must contain it
    src = """
    (module
      (import "wasi_snapshot_preview1" "proc_exit" (func $exit (param i32)))
      (memory (export "memory") 1)
      (func (export "_start")
        (i32.store (i32.const 256) (i32.const 0x1BADB002))
        (call $exit (i32.const 0))))
    """
    out, _ = instrument(wat2wasm(src), InstrumentationPolicy.IMPORT_FUNCTION)
    _, sink = attest_bytes(out, tmp_path, session_id=b"\x01" * 16)
    memory = sink.records[0].decode_memory()
    assert memory[256:260] == (0x1BADB002).to_bytes(4, "little")


def test_two_page_memory_size(tmp_path):
    require_wat()
    src = """
    (module
      (import "wasi_snapshot_preview1" "proc_exit" (func $exit (param i32)))
      (memory (export "memory") 2)
      (func (export "_start") (call $exit (i32.const 0))))
    """
    out, _ = instrument(wat2wasm(src), InstrumentationPolicy.IMPORT_FUNCTION)
    _, sink = attest_bytes(out, tmp_path, session_id=b"\x01" * 16)
    assert sink.records[0].mem_size_bytes == 131072


def test_seq_monotone_no_gaps(framepack_path, tmp_path):
    out, _ = instrument(framepack_path.read_bytes(), InstrumentationPolicy.IMPORT_FUNCTION)
    summary, sink = attest_bytes(
        out, tmp_path, session_id=b"\x02" * 16, stdin=b"\x03\x00\x00\x00"
    )
    seqs = [r.seq_no for r in sink.records]
    assert seqs == list(range(summary.snapshots_emitted))
    assert summary.snapshots_emitted == 9 + 1 + 1  # fd_read + 9 frames + final marker


def test_max_snapshots_cap_preserves_execution(framepack_path, tmp_path):
    out, _ = instrument(framepack_path.read_bytes(), InstrumentationPolicy.IMPORT_FUNCTION)
    full, full_sink = attest_bytes(out, tmp_path, session_id=b"\x03" * 16, stdin=b"\xff")
    capped, capped_sink = attest_bytes(
        out, tmp_path, session_id=b"\x03" * 16, stdin=b"\xff", max_snapshots=5
    )
    assert full.snapshots_emitted > 5
    assert capped.snapshots_emitted == 5
    assert capped.exit_code == full.exit_code
    assert [r.payload for r in capped_sink.records] == [
        r.payload for r in full_sink.records[:5]
    ]


def test_summary_totals_match_records(framepack_path, tmp_path):
    out, _ = instrument(framepack_path.read_bytes(), InstrumentationPolicy.IMPORT_FUNCTION)
    summary, sink = attest_bytes(out, tmp_path, session_id=b"\x04" * 16, stdin=b"ab")
    assert summary.total_bytes_raw == sum(r.mem_size_bytes for r in sink.records)
    assert summary.total_bytes_compressed == sum(
        len(codec.frame_record(r)) for r in sink.records
    )
    assert summary.wall_time_s > 0
    assert summary.session_id == (b"\x04" * 16).hex()


def test_guest_trap_is_reported(tmp_path):
    require_wat()
    src = """
    (module
      (import "wasi_snapshot_preview1" "proc_exit" (func $exit (param i32)))
      (memory 1)
      (func (export "_start") (unreachable)))
    """
    out, _ = instrument(wat2wasm(src), InstrumentationPolicy.IMPORT_FUNCTION)
    summary, _ = attest_bytes(out, tmp_path)
    assert summary.trap == "unreachable executed"
    assert summary.exit_code is None


def test_transparency_of_attestation(framepack_path, tmp_path):
    raw = framepack_path.read_bytes()
    out, _ = instrument(raw, InstrumentationPolicy.IMPORT_FUNCTION)
    plain = execute(raw, stdin=b"zq")
    summary, _ = attest_bytes(out, tmp_path, stdin=b"zq")
    assert summary.exit_code == plain.exit_code


def test_file_sink_roundtrip(framepack_path, tmp_path):
    out, _ = instrument(framepack_path.read_bytes(), InstrumentationPolicy.IMPORT_FUNCTION)
    module = tmp_path / "m.wasm"
    module.write_bytes(out)
    stream = tmp_path / "run.lmas"
    summary = run_attested(AttesterConfig(
        module_path=str(module), sink="file:%s" % stream, session_id=b"\x05" * 16
    ))
    records = codec.read_records(stream)
    assert len(records) == summary.snapshots_emitted
    assert all(r.session_id == b"\x05" * 16 for r in records)


def test_random_session_ids_differ(framepack_path, tmp_path):
    out, _ = instrument(framepack_path.read_bytes(), InstrumentationPolicy.IMPORT_FUNCTION)
    a, sink_a = attest_bytes(out, tmp_path)
    b, sink_b = attest_bytes(out, tmp_path)
    assert a.session_id != b.session_id


def test_bad_sink_spec():
    with pytest.raises(SinkUnavailable):
        open_sink("carrier-pigeon:coop")
    with pytest.raises(SinkUnavailable):
        open_sink("tcp:127.0.0.1:1")  # nothing listens on port 1
