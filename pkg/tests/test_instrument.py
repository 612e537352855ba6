import pytest

from lma import leb
from lma.attester import execute
from lma.wasm import opcodes as op
from lma.wasm.instrument import (
    AlreadyInstrumented,
    InstrumentationPolicy,
    MalformedModule,
    MultiMemory,
    instrument,
)
from lma.wasm.module import (
    KIND_FUNC, Limits, decode_instr, encode_module, parse_module,
)
from lma.wasm.validate import validate

from conftest import v8_validates

POLICIES = list(InstrumentationPolicy)


def test_every_corpus_module_validates_after_instrumentation(corpus_modules):
    for name, raw in corpus_modules.items():
        for policy in POLICIES:
            out, report = instrument(raw, policy)
            validate(parse_module(out))  # bundled validator
            assert v8_validates(out), (name, policy)  # independent engine


def test_report_invariants(corpus_modules):
    for name, raw in corpus_modules.items():
        for policy in POLICIES:
            out, report = instrument(raw, policy)
            assert report.sites_instrumented >= 0
            assert report.instrumented_size_bytes >= report.original_size_bytes
            assert report.instrumented_size_bytes == len(out)
            mod = parse_module(out)
            # the hook import is appended last and owns index n_func_imports - 1
            hook = mod.imports[-1]
            assert (hook.module, hook.name, hook.kind) == ("lma", "snapshot", KIND_FUNC)
            n_func_imports = sum(1 for i in mod.imports if i.kind == KIND_FUNC)
            assert report.hook_import_index == n_func_imports - 1
            assert mod.types[hook.desc].params == (op.I32,)
            assert mod.types[hook.desc].results == ()


def test_behavioral_transparency_with_noop_hook(corpus_modules):
    for name, raw in corpus_modules.items():
        entry = "_start" if any(
            e.name == "_start" for e in parse_module(raw).exports) else None
        baseline = execute(raw, entry=entry)
        for policy in POLICIES:
            out, _ = instrument(raw, policy)
            shadow = execute(out, entry=entry)
            assert shadow.exit_code == baseline.exit_code, (name, policy)
            assert shadow.trap == baseline.trap, (name, policy)
            assert shadow.stdout == baseline.stdout, (name, policy)
            assert shadow.memory == baseline.memory, (name, policy)


def test_idempotent_accounting(corpus_modules):
    for raw in corpus_modules.values():
        for policy in POLICIES:
            out1, rep1 = instrument(raw, policy)
            out2, rep2 = instrument(raw, policy)
            assert out1 == out2
            assert rep1 == rep2


def test_double_instrumentation_rejected(corpus_modules):
    out, _ = instrument(corpus_modules["arith"], InstrumentationPolicy.LOCAL_FUNCTION)
    with pytest.raises(AlreadyInstrumented):
        instrument(out, InstrumentationPolicy.LOCAL_FUNCTION)


def test_malformed_module_rejected():
    with pytest.raises(MalformedModule):
        instrument(b"\x00asm\x01\x00\x00\x00\x01\xff", InstrumentationPolicy.LOCAL_FUNCTION)
    with pytest.raises(MalformedModule):
        instrument(b"not wasm at all", InstrumentationPolicy.LOCAL_FUNCTION)


def test_multi_memory_rejected(corpus_modules):
    mod = parse_module(corpus_modules["arith"])
    mod.memories.append(Limits(1, None))
    with pytest.raises(MultiMemory):
        instrument(encode_module(mod), InstrumentationPolicy.IMPORT_FUNCTION)


def test_import_policy_counts_static_call_sites(corpus_modules):
    _, report = instrument(corpus_modules["imports3"], InstrumentationPolicy.IMPORT_FUNCTION)
    assert report.sites_instrumented == 3  # 2 imports, 3 call sites


def test_memory_policy_on_storeless_module(corpus_modules):
    raw = corpus_modules["arith"]  # computes in locals, grows memory, never stores
    out, report = instrument(raw, InstrumentationPolicy.MEMORY_INSTRUCTION)
    assert report.sites_instrumented == 0
    before, after = parse_module(raw), parse_module(out)
    assert len(after.imports) == len(before.imports) + 1
    # bodies change only by call-index shifts: opcode streams stay identical
    for b_body, a_body in zip(before.code, after.code):
        assert _opcodes(b_body.code) == _opcodes(a_body.code)
        assert op.I32_CONST not in {o for o, _ in _instrs(a_body.code)} or all(
            args != (2,) for o, args in _instrs(a_body.code) if o == op.I32_CONST
        )


def test_local_policy_prepends_hook(corpus_modules):
    raw = corpus_modules["recursion"]
    out, report = instrument(raw, InstrumentationPolicy.LOCAL_FUNCTION)
    mod = parse_module(out)
    assert report.sites_instrumented == len(mod.code)
    hook_index = report.hook_import_index
    for body in mod.code:
        opcode, _, args, pos = decode_instr(body.code, 0)
        assert opcode == op.I32_CONST and args[0] == 1
        opcode, _, args, _ = decode_instr(body.code, pos)
        assert opcode == op.CALL and args[0] == hook_index


def test_memory_policy_inserts_hook_before_every_store(corpus_modules):
    raw = corpus_modules["stores"]
    out, report = instrument(raw, InstrumentationPolicy.MEMORY_INSTRUCTION)
    mod = parse_module(out)
    hook_index = report.hook_import_index
    seen = 0
    for body in mod.code:
        instrs = []
        pos = 0
        while pos < len(body.code):
            opcode, sub, args, pos = decode_instr(body.code, pos)
            instrs.append((opcode, args))
        for i, (opcode, args) in enumerate(instrs):
            if opcode in op.STORE_OPS:
                seen += 1
                assert instrs[i - 1] == (op.CALL, (hook_index,))
                assert instrs[i - 2] == (op.I32_CONST, (2,))
    assert seen == report.sites_instrumented == 11


def test_bulk_store_flag(corpus_modules):
    raw = corpus_modules["memops"]
    _, without = instrument(raw, InstrumentationPolicy.MEMORY_INSTRUCTION)
    out, with_bulk = instrument(
        raw, InstrumentationPolicy.MEMORY_INSTRUCTION, instrument_bulk_stores=True
    )
    # memory.fill + memory.copy + memory.grow add three more sites
    assert with_bulk.sites_instrumented == without.sites_instrumented + 3
    assert v8_validates(out)


def test_exported_function_results_survive_index_shift(corpus_modules):
    raw = corpus_modules["globals"]
    from lma.wasm.interp import Instance, HostFunc
    from lma.wasm import opcodes

    def run_bump(module_bytes):
        imports = {("lma", "snapshot"): HostFunc((opcodes.I32,), (), lambda i, r: None)}
        inst = Instance(parse_module(module_bytes), imports)
        return [inst.invoke("bump"), inst.invoke("bump")]

    expected = run_bump(raw)
    for policy in POLICIES:
        out, _ = instrument(raw, policy)
        assert run_bump(out) == expected


def test_name_section_function_indices_remapped(corpus_modules):
    raw = corpus_modules["control"]  # built with debug names

    def func_names(module_bytes):
        mod = parse_module(module_bytes)
        for _anchor, payload in mod.customs:
            n, pos = leb.decode_u(payload, 0, 32)
            if payload[pos : pos + n] != b"name":
                continue
            pos += n
            while pos < len(payload):
                sub_id = payload[pos]
                size, body_pos = leb.decode_u(payload, pos + 1, 32)
                if sub_id == 1:
                    count, p = leb.decode_u(payload, body_pos, 32)
                    out = {}
                    for _ in range(count):
                        idx, p = leb.decode_u(payload, p, 32)
                        ln, p = leb.decode_u(payload, p, 32)
                        out[idx] = payload[p : p + ln].decode()
                        p += ln
                    return out
                pos = body_pos + size
        return {}

    before = func_names(raw)
    assert before, "control.wasm should carry a name section"
    out, report = instrument(raw, InstrumentationPolicy.LOCAL_FUNCTION)
    after = func_names(out)
    boundary = report.hook_import_index
    for idx, name in before.items():
        target = idx + 1 if idx >= boundary else idx
        assert after[target] == name


def _instrs(code):
    out = []
    pos = 0
    while pos < len(code):
        opcode, _sub, args, pos = decode_instr(code, pos)
        out.append((opcode, args))
    return out


def _opcodes(code):
    return [o for o, _ in _instrs(code)]
