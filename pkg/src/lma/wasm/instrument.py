"""Snapshot-hook injection under three program-point policies.

The rewriter adds one function import ``lma.snapshot`` with signature
``(i32) -> ()`` and inserts ``i32.const <reason>; call <hook>`` sequences:

* import-boundary (reason 0): immediately before every direct call whose
  callee is a pre-existing imported function,
* function-entry (reason 1): as the first instruction of every locally
  defined body,
* pre-store (reason 2): immediately before each of the nine plain store
  instructions.

The injected pair is self-contained on the operand stack, so pending
operands of the following call/store instruction are untouched and the
output validates wherever the input did.  All function indices at or above
the new import are shifted by one in every referencing location: call sites,
ref.func, element segments, exports, the start section, global initializers,
and the name custom section.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from enum import Enum

from .. import leb
from . import opcodes as op
from .module import (
    KIND_FUNC, KIND_MEM,
    FuncType, Import, ModuleFormatError, WasmModule,
    decode_instr, encode_instr, encode_module, parse_module,
)
from .validate import ValidationError, validate

HOOK_MODULE = "lma"
HOOK_NAME = "snapshot"
HOOK_TYPE = FuncType(params=(op.I32,), results=())

REASON_IMPORT_BOUNDARY = 0
REASON_FUNCTION_ENTRY = 1
REASON_PRE_STORE = 2


class InstrumentError(Exception):
    pass


class MalformedModule(InstrumentError):
    pass


class MultiMemory(InstrumentError):
    pass


class AlreadyInstrumented(InstrumentError):
    pass


class InstrumentationPolicy(str, Enum):
    IMPORT_FUNCTION = "import"
    LOCAL_FUNCTION = "local"
    MEMORY_INSTRUCTION = "memory"

    @property
    def reason_code(self) -> int:
        return {
            InstrumentationPolicy.IMPORT_FUNCTION: REASON_IMPORT_BOUNDARY,
            InstrumentationPolicy.LOCAL_FUNCTION: REASON_FUNCTION_ENTRY,
            InstrumentationPolicy.MEMORY_INSTRUCTION: REASON_PRE_STORE,
        }[self]


@dataclass(frozen=True)
class InstrumentationReport:
    policy: str
    sites_instrumented: int
    functions_touched: int
    original_size_bytes: int
    instrumented_size_bytes: int
    hook_import_index: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _hook_call(reason: int, hook_index: int) -> bytes:
    return (
        bytes([op.I32_CONST]) + leb.encode_s(reason)
        + bytes([op.CALL]) + leb.encode_u(hook_index)
    )


def _shift(idx: int, boundary: int) -> int:
    return idx + 1 if idx >= boundary else idx


def _rewrite_expr(expr: bytes, boundary: int) -> bytes:
    """Shift ref.func indices inside a constant expression."""
    if bytes([op.REF_FUNC]) not in expr:
        return expr
    out = bytearray()
    pos = 0
    while pos < len(expr):
        opcode, sub, args, next_pos = decode_instr(expr, pos)
        if opcode == op.REF_FUNC:
            out += encode_instr(opcode, sub, (_shift(args[0], boundary),))
        else:
            out += expr[pos:next_pos]
        pos = next_pos
    return bytes(out)


def _rewrite_body(
    code: bytes, policy: InstrumentationPolicy, hook_index: int, boundary: int,
    instrument_bulk: bool,
) -> tuple[bytes, int]:
    out = bytearray()
    sites = 0
    if policy is InstrumentationPolicy.LOCAL_FUNCTION:
        out += _hook_call(REASON_FUNCTION_ENTRY, hook_index)
        sites += 1
    pos = 0
    n = len(code)
    while pos < n:
        opcode, sub, args, next_pos = decode_instr(code, pos)
        if opcode in (op.CALL, op.RETURN_CALL):
            target = args[0]
            if (
                policy is InstrumentationPolicy.IMPORT_FUNCTION
                and target < boundary
            ):
                out += _hook_call(REASON_IMPORT_BOUNDARY, hook_index)
                sites += 1
            if target >= boundary:
                out += encode_instr(opcode, sub, (target + 1,))
            else:
                out += code[pos:next_pos]
        elif opcode == op.REF_FUNC:
            out += encode_instr(opcode, sub, (_shift(args[0], boundary),))
        elif policy is InstrumentationPolicy.MEMORY_INSTRUCTION and (
            opcode in op.STORE_OPS
            or (
                instrument_bulk
                and (
                    opcode == op.MEMORY_GROW
                    or (opcode == op.FC and sub in (op.FC_MEMORY_FILL, op.FC_MEMORY_COPY))
                )
            )
        ):
            out += _hook_call(REASON_PRE_STORE, hook_index)
            sites += 1
            out += code[pos:next_pos]
        else:
            out += code[pos:next_pos]
        pos = next_pos
    return bytes(out), sites


def _remap_name_section(payload: bytes, boundary: int) -> bytes:
    """Shift function indices in the 'name' custom section; best effort."""
    try:
        name_len, pos = leb.decode_u(payload, pos=0, max_bits=32)
        section_name = payload[pos : pos + name_len]
        pos += name_len
        if section_name != b"name":
            return payload
        out = bytearray(payload[:pos])
        while pos < len(payload):
            sub_id = payload[pos]
            pos += 1
            size, pos = leb.decode_u(payload, pos, 32)
            content = payload[pos : pos + size]
            pos += size
            if sub_id == 1:  # function names
                rebuilt = bytearray()
                count, cpos = leb.decode_u(content, 0, 32)
                rebuilt += leb.encode_u(count)
                for _ in range(count):
                    idx, cpos = leb.decode_u(content, cpos, 32)
                    nlen, cpos = leb.decode_u(content, cpos, 32)
                    rebuilt += leb.encode_u(_shift(idx, boundary))
                    rebuilt += leb.encode_u(nlen)
                    rebuilt += content[cpos : cpos + nlen]
                    cpos += nlen
                content = bytes(rebuilt)
            elif sub_id == 2:  # local names
                rebuilt = bytearray()
                count, cpos = leb.decode_u(content, 0, 32)
                rebuilt += leb.encode_u(count)
                for _ in range(count):
                    idx, cpos = leb.decode_u(content, cpos, 32)
                    rebuilt += leb.encode_u(_shift(idx, boundary))
                    inner, cpos = leb.decode_u(content, cpos, 32)
                    rebuilt += leb.encode_u(inner)
                    for _ in range(inner):
                        lidx, cpos = leb.decode_u(content, cpos, 32)
                        nlen, cpos = leb.decode_u(content, cpos, 32)
                        rebuilt += leb.encode_u(lidx) + leb.encode_u(nlen)
                        rebuilt += content[cpos : cpos + nlen]
                        cpos += nlen
                content = bytes(rebuilt)
            out += bytes([sub_id]) + leb.encode_u(len(content)) + content
        return bytes(out)
    except Exception:
        return payload  # unknown producer quirks: leave the section alone


def instrument(
    module_bytes: bytes,
    policy: InstrumentationPolicy,
    instrument_bulk_stores: bool = False,
) -> tuple[bytes, InstrumentationReport]:
    try:
        mod = parse_module(module_bytes)
    except ModuleFormatError as exc:
        raise MalformedModule(str(exc)) from exc
    if len(mod.all_memories) > 1:
        raise MultiMemory("module defines or imports more than one memory")
    try:
        validate(mod)
    except ValidationError as exc:
        raise MalformedModule(str(exc)) from exc
    for imp in mod.imports:
        if imp.module == HOOK_MODULE and imp.name == HOOK_NAME:
            raise AlreadyInstrumented("module already imports %s.%s" % (HOOK_MODULE, HOOK_NAME))

    boundary = mod.n_func_imports  # index the hook import will take

    try:
        type_index = mod.types.index(HOOK_TYPE)
    except ValueError:
        type_index = len(mod.types)
        mod.types.append(HOOK_TYPE)
    mod.imports.append(Import(HOOK_MODULE, HOOK_NAME, KIND_FUNC, type_index))

    sites = 0
    touched = 0
    for body in mod.code:
        body.code, n = _rewrite_body(
            body.code, policy, boundary, boundary, instrument_bulk_stores
        )
        sites += n
        if n:
            touched += 1

    for export in mod.exports:
        if export.kind == KIND_FUNC:
            export.index = _shift(export.index, boundary)
    if mod.start is not None:
        mod.start = _shift(mod.start, boundary)
    for elem in mod.elems:
        if elem.func_indices is not None:
            elem.func_indices = [_shift(i, boundary) for i in elem.func_indices]
        if elem.exprs is not None:
            elem.exprs = [_rewrite_expr(e, boundary) for e in elem.exprs]
        if elem.offset is not None:
            elem.offset = _rewrite_expr(elem.offset, boundary)
    for glob in mod.globals:
        glob.init = _rewrite_expr(glob.init, boundary)
    mod.customs = [
        (anchor, _remap_name_section(payload, boundary)) for anchor, payload in mod.customs
    ]

    out = encode_module(mod)
    validate(parse_module(out))  # rewriting must never produce an invalid module
    report = InstrumentationReport(
        policy=policy.value,
        sites_instrumented=sites,
        functions_touched=touched,
        original_size_bytes=len(module_bytes),
        instrumented_size_bytes=len(out),
        hook_import_index=boundary,
    )
    return out, report


def has_hook_import(module_bytes: bytes) -> bool:
    try:
        mod = parse_module(module_bytes)
    except ModuleFormatError:
        return False
    return any(
        i.module == HOOK_MODULE and i.name == HOOK_NAME and i.kind == KIND_FUNC
        for i in mod.imports
    )
