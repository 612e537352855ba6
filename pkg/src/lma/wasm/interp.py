"""A compact Wasm interpreter: MVP core plus sign extension, saturating
truncation, and bulk memory.

Function bodies are pre-compiled to flat instruction tuples with resolved
branch targets; execution is a plain dispatch loop.  Host functions receive
the instance as their first argument, which is how the snapshot hook reads
linear memory synchronously while the guest is parked inside the call.
"""

from __future__ import annotations

import math
import struct
import sys
from dataclasses import dataclass
from typing import Callable, Optional

from . import opcodes as op
from .module import (
    KIND_FUNC, KIND_GLOBAL, KIND_MEM, KIND_TABLE,
    FuncType, WasmModule, decode_instr, parse_module,
)

PAGE = 65536
MAX_CALL_DEPTH = 1000

# guest call frames nest a few Python frames each; leave generous headroom
if sys.getrecursionlimit() < MAX_CALL_DEPTH * 4 + 500:
    sys.setrecursionlimit(MAX_CALL_DEPTH * 4 + 500)

M32 = 0xFFFFFFFF
M64 = 0xFFFFFFFFFFFFFFFF
SIGN32 = 0x80000000
SIGN64 = 0x8000000000000000

_F32 = struct.Struct("<f")
_F64 = struct.Struct("<d")
_I32 = struct.Struct("<i")
_I64 = struct.Struct("<q")

# internal pseudo-opcodes (outside the one-byte opcode space)
OP_JUMP = 0x100
OP_HALT = 0x101


class Trap(Exception):
    """Guest trap; .reason is a stable, human-readable cause."""

    @property
    def reason(self) -> str:
        return str(self)


class ExitTrap(Trap):
    def __init__(self, code: int):
        super().__init__("proc_exit(%d)" % code)
        self.code = code


class LinkError(Exception):
    pass


@dataclass
class HostFunc:
    params: tuple
    results: tuple
    fn: Callable  # fn(instance, *args) -> None | scalar | sequence


def _f32(x: float) -> float:
    return _F32.unpack(_F32.pack(x))[0]


def _s32(v: int) -> int:
    return v - ((v & SIGN32) << 1)


def _s64(v: int) -> int:
    return v - ((v & SIGN64) << 1)


def _div_s(a: int, b: int, mask: int, sign: int) -> int:
    if b == 0:
        raise Trap("integer divide by zero")
    sa, sb = a - ((a & sign) << 1), b - ((b & sign) << 1)
    if sa == -(sign) and sb == -1:
        raise Trap("integer overflow")
    q = abs(sa) // abs(sb)
    if (sa < 0) != (sb < 0):
        q = -q
    return q & mask


def _rem_s(a: int, b: int, sign: int, mask: int) -> int:
    if b == 0:
        raise Trap("integer divide by zero")
    sa, sb = a - ((a & sign) << 1), b - ((b & sign) << 1)
    r = abs(sa) % abs(sb)
    if sa < 0:
        r = -r
    return r & mask


def _trunc(x: float, lo: int, hi: int) -> int:
    if math.isnan(x):
        raise Trap("invalid conversion to integer")
    if math.isinf(x):
        raise Trap("integer overflow")
    t = math.trunc(x)
    if not lo <= t <= hi:
        raise Trap("integer overflow")
    return t


def _trunc_sat(x: float, lo: int, hi: int) -> int:
    if math.isnan(x):
        return 0
    t = math.trunc(x) if not math.isinf(x) else (lo if x < 0 else hi)
    return min(max(t, lo), hi)


def _nearest(x: float) -> float:
    if math.isnan(x) or math.isinf(x) or x == 0.0:
        return x
    r = float(round(x))  # round() is half-to-even
    if r == 0.0:
        return math.copysign(0.0, x)
    return r


def _fmin(a: float, b: float) -> float:
    if math.isnan(a) or math.isnan(b):
        return math.nan
    if a == b:  # covers +0/-0: prefer the negative zero
        return a if math.copysign(1.0, a) < 0 else b
    return a if a < b else b


def _fmax(a: float, b: float) -> float:
    if math.isnan(a) or math.isnan(b):
        return math.nan
    if a == b:
        return a if math.copysign(1.0, a) > 0 else b
    return a if a > b else b


def _rotl(v: int, n: int, bits: int, mask: int) -> int:
    n %= bits
    return ((v << n) | (v >> (bits - n))) & mask


def _div_u(a: int, b: int) -> int:
    if b == 0:
        raise Trap("integer divide by zero")
    return a // b


def _rem_u(a: int, b: int) -> int:
    if b == 0:
        raise Trap("integer divide by zero")
    return a % b


def _ceil(a: float) -> float:
    if math.isnan(a) or math.isinf(a):
        return a
    return float(math.ceil(a)) or math.copysign(0.0, a)


def _floor(a: float) -> float:
    if math.isnan(a) or math.isinf(a):
        return a
    return float(math.floor(a)) or math.copysign(0.0, a)


def _trunc_f(a: float) -> float:
    if math.isnan(a) or math.isinf(a):
        return a
    return float(math.trunc(a)) or math.copysign(0.0, a)


def _sqrt(a: float) -> float:
    if math.isnan(a) or a < 0:
        return math.nan
    return math.sqrt(a)


def _fdiv(a: float, b: float) -> float:
    if math.isnan(a) or math.isnan(b):
        return math.nan
    if b == 0.0:
        if a == 0.0:
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)
    return a / b


# ---- plain numeric handlers: opcode -> fn(stack) -------------------------

def _binop(fn):
    def run(s):
        b = s.pop()
        s[-1] = fn(s[-1], b)
    return run


def _unop(fn):
    def run(s):
        s[-1] = fn(s[-1])
    return run


NUMERIC: dict[int, Callable] = {
    0x45: _unop(lambda a: 1 if a == 0 else 0),
    0x46: _binop(lambda a, b: 1 if a == b else 0),
    0x47: _binop(lambda a, b: 1 if a != b else 0),
    0x48: _binop(lambda a, b: 1 if _s32(a) < _s32(b) else 0),
    0x49: _binop(lambda a, b: 1 if a < b else 0),
    0x4A: _binop(lambda a, b: 1 if _s32(a) > _s32(b) else 0),
    0x4B: _binop(lambda a, b: 1 if a > b else 0),
    0x4C: _binop(lambda a, b: 1 if _s32(a) <= _s32(b) else 0),
    0x4D: _binop(lambda a, b: 1 if a <= b else 0),
    0x4E: _binop(lambda a, b: 1 if _s32(a) >= _s32(b) else 0),
    0x4F: _binop(lambda a, b: 1 if a >= b else 0),
    0x50: _unop(lambda a: 1 if a == 0 else 0),
    0x51: _binop(lambda a, b: 1 if a == b else 0),
    0x52: _binop(lambda a, b: 1 if a != b else 0),
    0x53: _binop(lambda a, b: 1 if _s64(a) < _s64(b) else 0),
    0x54: _binop(lambda a, b: 1 if a < b else 0),
    0x55: _binop(lambda a, b: 1 if _s64(a) > _s64(b) else 0),
    0x56: _binop(lambda a, b: 1 if a > b else 0),
    0x57: _binop(lambda a, b: 1 if _s64(a) <= _s64(b) else 0),
    0x58: _binop(lambda a, b: 1 if a <= b else 0),
    0x59: _binop(lambda a, b: 1 if _s64(a) >= _s64(b) else 0),
    0x5A: _binop(lambda a, b: 1 if a >= b else 0),
    # float comparisons (NaN compares false except ne)
    0x5B: _binop(lambda a, b: 1 if a == b else 0),
    0x5C: _binop(lambda a, b: 1 if a != b else 0),
    0x5D: _binop(lambda a, b: 1 if a < b else 0),
    0x5E: _binop(lambda a, b: 1 if a > b else 0),
    0x5F: _binop(lambda a, b: 1 if a <= b else 0),
    0x60: _binop(lambda a, b: 1 if a >= b else 0),
    0x61: _binop(lambda a, b: 1 if a == b else 0),
    0x62: _binop(lambda a, b: 1 if a != b else 0),
    0x63: _binop(lambda a, b: 1 if a < b else 0),
    0x64: _binop(lambda a, b: 1 if a > b else 0),
    0x65: _binop(lambda a, b: 1 if a <= b else 0),
    0x66: _binop(lambda a, b: 1 if a >= b else 0),
    0x67: _unop(lambda a: 32 - a.bit_length()),
    0x68: _unop(lambda a: (a & -a).bit_length() - 1 if a else 32),
    0x69: _unop(lambda a: a.bit_count()),
    0x6A: _binop(lambda a, b: (a + b) & M32),
    0x6B: _binop(lambda a, b: (a - b) & M32),
    0x6C: _binop(lambda a, b: (a * b) & M32),
    0x6D: _binop(lambda a, b: _div_s(a, b, M32, SIGN32)),
    0x6E: _binop(_div_u),
    0x6F: _binop(lambda a, b: _rem_s(a, b, SIGN32, M32)),
    0x70: _binop(_rem_u),
    0x71: _binop(lambda a, b: a & b),
    0x72: _binop(lambda a, b: a | b),
    0x73: _binop(lambda a, b: a ^ b),
    0x74: _binop(lambda a, b: (a << (b % 32)) & M32),
    0x75: _binop(lambda a, b: (_s32(a) >> (b % 32)) & M32),
    0x76: _binop(lambda a, b: a >> (b % 32)),
    0x77: _binop(lambda a, b: _rotl(a, b, 32, M32)),
    0x78: _binop(lambda a, b: _rotl(a, -b, 32, M32)),
    0x79: _unop(lambda a: 64 - a.bit_length()),
    0x7A: _unop(lambda a: (a & -a).bit_length() - 1 if a else 64),
    0x7B: _unop(lambda a: a.bit_count()),
    0x7C: _binop(lambda a, b: (a + b) & M64),
    0x7D: _binop(lambda a, b: (a - b) & M64),
    0x7E: _binop(lambda a, b: (a * b) & M64),
    0x7F: _binop(lambda a, b: _div_s(a, b, M64, SIGN64)),
    0x80: _binop(_div_u),
    0x81: _binop(lambda a, b: _rem_s(a, b, SIGN64, M64)),
    0x82: _binop(_rem_u),
    0x83: _binop(lambda a, b: a & b),
    0x84: _binop(lambda a, b: a | b),
    0x85: _binop(lambda a, b: a ^ b),
    0x86: _binop(lambda a, b: (a << (b % 64)) & M64),
    0x87: _binop(lambda a, b: (_s64(a) >> (b % 64)) & M64),
    0x88: _binop(lambda a, b: a >> (b % 64)),
    0x89: _binop(lambda a, b: _rotl(a, b, 64, M64)),
    0x8A: _binop(lambda a, b: _rotl(a, -b, 64, M64)),
    0x8B: _unop(lambda a: math.fabs(a)),
    0x8C: _unop(lambda a: -a),
    0x8D: _unop(lambda a: _f32(_ceil(a))),
    0x8E: _unop(lambda a: _f32(_floor(a))),
    0x8F: _unop(lambda a: _f32(_trunc_f(a))),
    0x90: _unop(lambda a: _f32(_nearest(a))),
    0x91: _unop(lambda a: _f32(_sqrt(a))),
    0x92: _binop(lambda a, b: _f32(a + b)),
    0x93: _binop(lambda a, b: _f32(a - b)),
    0x94: _binop(lambda a, b: _f32(a * b)),
    0x95: _binop(lambda a, b: _f32(_fdiv(a, b))),
    0x96: _binop(lambda a, b: _f32(_fmin(a, b))),
    0x97: _binop(lambda a, b: _f32(_fmax(a, b))),
    0x98: _binop(lambda a, b: math.copysign(a, b)),
    0x99: _unop(lambda a: math.fabs(a)),
    0x9A: _unop(lambda a: -a),
    0x9B: _unop(_ceil),
    0x9C: _unop(_floor),
    0x9D: _unop(_trunc_f),
    0x9E: _unop(_nearest),
    0x9F: _unop(_sqrt),
    0xA0: _binop(lambda a, b: a + b),
    0xA1: _binop(lambda a, b: a - b),
    0xA2: _binop(lambda a, b: a * b),
    0xA3: _binop(_fdiv),
    0xA4: _binop(_fmin),
    0xA5: _binop(_fmax),
    0xA6: _binop(lambda a, b: math.copysign(a, b)),
    # conversions
    0xA7: _unop(lambda a: a & M32),
    0xA8: _unop(lambda a: _trunc(a, -(1 << 31), (1 << 31) - 1) & M32),
    0xA9: _unop(lambda a: _trunc(a, 0, M32)),
    0xAA: _unop(lambda a: _trunc(a, -(1 << 31), (1 << 31) - 1) & M32),
    0xAB: _unop(lambda a: _trunc(a, 0, M32)),
    0xAC: _unop(lambda a: (a | 0xFFFFFFFF00000000) if a & SIGN32 else a),
    0xAD: _unop(lambda a: a),
    0xAE: _unop(lambda a: _trunc(a, -(1 << 63), (1 << 63) - 1) & M64),
    0xAF: _unop(lambda a: _trunc(a, 0, M64)),
    0xB0: _unop(lambda a: _trunc(a, -(1 << 63), (1 << 63) - 1) & M64),
    0xB1: _unop(lambda a: _trunc(a, 0, M64)),
    0xB2: _unop(lambda a: _f32(float(_s32(a)))),
    0xB3: _unop(lambda a: _f32(float(a))),
    0xB4: _unop(lambda a: _f32(float(_s64(a)))),
    0xB5: _unop(lambda a: _f32(float(a))),
    0xB6: _unop(_f32),
    0xB7: _unop(lambda a: float(_s32(a))),
    0xB8: _unop(lambda a: float(a)),
    0xB9: _unop(lambda a: float(_s64(a))),
    0xBA: _unop(lambda a: float(a)),
    0xBB: _unop(lambda a: a),
    0xBC: _unop(lambda a: _I32.unpack(_F32.pack(a))[0] & M32),
    0xBD: _unop(lambda a: _I64.unpack(_F64.pack(a))[0] & M64),
    0xBE: _unop(lambda a: _F32.unpack(_I32.pack(_s32(a)))[0]),
    0xBF: _unop(lambda a: _F64.unpack(_I64.pack(_s64(a)))[0]),
    0xC0: _unop(lambda a: (a & 0xFF) | (M32 ^ 0xFF) if a & 0x80 else a & 0xFF),
    0xC1: _unop(lambda a: (a & 0xFFFF) | (M32 ^ 0xFFFF) if a & 0x8000 else a & 0xFFFF),
    0xC2: _unop(lambda a: (a & 0xFF) | (M64 ^ 0xFF) if a & 0x80 else a & 0xFF),
    0xC3: _unop(lambda a: (a & 0xFFFF) | (M64 ^ 0xFFFF) if a & 0x8000 else a & 0xFFFF),
    0xC4: _unop(lambda a: (a & M32) | (M64 ^ M32) if a & SIGN32 else a & M32),
}

FC_NUMERIC: dict[int, Callable] = {
    0: _unop(lambda a: _trunc_sat(a, -(1 << 31), (1 << 31) - 1) & M32),
    1: _unop(lambda a: _trunc_sat(a, 0, M32)),
    2: _unop(lambda a: _trunc_sat(a, -(1 << 31), (1 << 31) - 1) & M32),
    3: _unop(lambda a: _trunc_sat(a, 0, M32)),
    4: _unop(lambda a: _trunc_sat(a, -(1 << 63), (1 << 63) - 1) & M64),
    5: _unop(lambda a: _trunc_sat(a, 0, M64)),
    6: _unop(lambda a: _trunc_sat(a, -(1 << 63), (1 << 63) - 1) & M64),
    7: _unop(lambda a: _trunc_sat(a, 0, M64)),
}

_LOAD_SPEC = {
    # opcode: (nbytes, mode)  mode: u=unsigned int, s=signed->mask32, S=signed->mask64, f/F=float
    0x28: (4, "u"), 0x29: (8, "u"), 0x2A: (4, "f"), 0x2B: (8, "F"),
    0x2C: (1, "s32"), 0x2D: (1, "u"), 0x2E: (2, "s32"), 0x2F: (2, "u"),
    0x30: (1, "s64"), 0x31: (1, "u"), 0x32: (2, "s64"), 0x33: (2, "u"),
    0x34: (4, "s64"), 0x35: (4, "u"),
}
_STORE_SPEC = {
    0x36: (4, "i"), 0x37: (8, "i"), 0x38: (4, "f"), 0x39: (8, "F"),
    0x3A: (1, "i"), 0x3B: (2, "i"), 0x3C: (1, "i"), 0x3D: (2, "i"), 0x3E: (4, "i"),
}

_DEFAULTS = {op.I32: 0, op.I64: 0, op.F32: 0.0, op.F64: 0.0, op.FUNCREF: None, op.EXTERNREF: None}


@dataclass
class _CompiledFunc:
    typ: FuncType
    instrs: list
    local_defaults: list
    n_results: int


class Instance:
    """One instantiated module with its own memory, globals, and tables."""

    def __init__(
        self, mod: WasmModule, imports: dict, fuel: Optional[int] = None,
        run_start: bool = True,
    ):
        self.mod = mod
        self.fuel = fuel
        self.depth = 0
        self.funcs: list = []
        for imp in mod.imports:
            if imp.kind == KIND_FUNC:
                host = imports.get((imp.module, imp.name))
                if host is None:
                    raise LinkError("unresolved import %s.%s" % (imp.module, imp.name))
                declared = mod.types[imp.desc]
                if host.params != declared.params or host.results != declared.results:
                    raise LinkError(
                        "import %s.%s signature mismatch" % (imp.module, imp.name)
                    )
                self.funcs.append(host)
            elif imp.kind in (KIND_TABLE, KIND_MEM, KIND_GLOBAL):
                raise LinkError(
                    "only function imports are supported (%s.%s)" % (imp.module, imp.name)
                )
        self._compiled: list = [None] * len(mod.functions)
        for i in range(len(mod.functions)):
            self.funcs.append(("wasm", i))

        self.memory = bytearray()
        self.mem_max = None
        if mod.memories:
            lim = mod.memories[0]
            self.memory = bytearray(lim.minimum * PAGE)
            self.mem_max = lim.maximum

        self.globals: list = []
        for g in mod.globals:
            self.globals.append(self._const_expr(g.init))

        self.tables: list = []
        for t in mod.tables:
            self.tables.append([None] * t.limits.minimum)
        self.elem_segments: list = [None] * len(mod.elems)
        for i, e in enumerate(mod.elems):
            if e.func_indices is not None:
                refs = list(e.func_indices)
            else:
                refs = [self._const_expr(x) for x in e.exprs]
            if e.offset is not None:  # active: initialize now
                base = self._const_expr(e.offset)
                table = self.tables[e.table_index]
                if base + len(refs) > len(table):
                    raise Trap("element segment out of bounds")
                table[base : base + len(refs)] = refs
            elif e.flags in (1, 5):  # passive
                self.elem_segments[i] = refs

        self.data_segments: list = [None] * len(mod.datas)
        for i, d in enumerate(mod.datas):
            if d.offset is not None:
                base = self._const_expr(d.offset)
                if base + len(d.payload) > len(self.memory):
                    raise Trap("data segment out of bounds")
                self.memory[base : base + len(d.payload)] = d.payload
            else:
                self.data_segments[i] = d.payload

        self.exports = {e.name: (e.kind, e.index) for e in mod.exports}

        if run_start:
            self.run_start()

    def run_start(self) -> None:
        if self.mod.start is not None:
            self._call(self.mod.start, ())

    # ---- public API ------------------------------------------------------
    def invoke(self, name: str, *args):
        try:
            kind, index = self.exports[name]
        except KeyError:
            raise LinkError("no export named %r" % name)
        if kind != KIND_FUNC:
            raise LinkError("export %r is not a function" % name)
        results = self._call(index, args)
        if len(results) == 1:
            return results[0]
        return tuple(results) if results else None

    @property
    def pages(self) -> int:
        return len(self.memory) // PAGE

    # ---- internals ---------------------------------------------------------
    def _const_expr(self, expr: bytes):
        stack: list = []
        pos = 0
        while pos < len(expr):
            opcode, sub, args, pos = decode_instr(expr, pos)
            if opcode == op.END:
                break
            if opcode in (op.I32_CONST, op.I64_CONST):
                mask = M32 if opcode == op.I32_CONST else M64
                stack.append(args[0] & mask)
            elif opcode == op.F32_CONST:
                stack.append(_F32.unpack(args[0])[0])
            elif opcode == op.F64_CONST:
                stack.append(_F64.unpack(args[0])[0])
            elif opcode == op.REF_NULL:
                stack.append(None)
            elif opcode == op.REF_FUNC:
                stack.append(args[0])
            elif opcode == op.GLOBAL_GET:
                stack.append(self.globals[args[0]])
            else:
                raise Trap("unsupported constant instruction")
        return stack[-1]

    def _compile(self, local_index: int) -> _CompiledFunc:
        mod = self.mod
        body = mod.code[local_index]
        typ = mod.types[mod.functions[local_index]]
        defaults = []
        for count, valtype in body.locals:
            defaults.extend([_DEFAULTS[valtype]] * count)

        instrs: list = []
        ctrl: list = []  # (opcode, pc, n_params, arity, else_pc)
        code = body.code
        pos = 0
        n = len(code)

        def block_arity(bt: int) -> tuple[int, int]:
            if bt >= 0:
                t = mod.types[bt]
                return len(t.params), len(t.results)
            if bt == -0x40:
                return 0, 0
            return 0, 1

        while pos < n:
            opcode, sub, args, pos = decode_instr(code, pos)
            pc = len(instrs)
            if opcode in (op.BLOCK, op.LOOP, op.IF):
                n_params, n_results = block_arity(args[0])
                ctrl.append([opcode, pc, n_params, n_results, None])
                instrs.append(None)  # patched at end
            elif opcode == op.ELSE:
                ctrl[-1][4] = pc
                instrs.append(None)  # patched to a jump past the else arm
            elif opcode == op.END:
                if not ctrl:
                    instrs.append((OP_HALT,))
                    continue
                kind, start_pc, n_params, n_results, else_pc = ctrl.pop()
                end_pc = len(instrs)
                instrs.append((op.END,))
                if kind == op.LOOP:
                    instrs[start_pc] = (op.LOOP, start_pc, n_params)
                elif kind == op.BLOCK:
                    instrs[start_pc] = (op.BLOCK, end_pc + 1, n_params, n_results)
                else:
                    false_target = (else_pc + 1) if else_pc is not None else end_pc
                    instrs[start_pc] = (op.IF, false_target, end_pc + 1, n_params, n_results)
                    if else_pc is not None:
                        instrs[else_pc] = (OP_JUMP, end_pc)
            elif opcode == op.FC:
                instrs.append((op.FC, sub, args))
            else:
                instrs.append((opcode,) + args)
        return _CompiledFunc(typ, instrs, defaults, len(typ.results))

    def _call(self, funcidx: int, args):
        target = self.funcs[funcidx]
        if isinstance(target, HostFunc):
            out = target.fn(self, *args)
            if out is None:
                return []
            if isinstance(out, (list, tuple)):
                return list(out)
            return [out]
        local_index = target[1]
        fn = self._compiled[local_index]
        if fn is None:
            fn = self._compiled[local_index] = self._compile(local_index)
        if self.depth >= MAX_CALL_DEPTH:
            raise Trap("call stack exhausted")
        self.depth += 1
        try:
            return self._run(fn, list(args))
        finally:
            self.depth -= 1

    def _run(self, fn: _CompiledFunc, locals_: list):
        locals_ += [d for d in fn.local_defaults]
        stack: list = []
        blocks: list = []  # (target_pc, height, arity)
        instrs = fn.instrs
        mem = self.memory
        n_results = fn.n_results
        pc = 0
        n = len(instrs)
        fuel_check = self.fuel is not None
        while pc < n:
            ins = instrs[pc]
            code = ins[0]
            if code == op.LOCAL_GET:
                stack.append(locals_[ins[1]])
            elif code == op.I32_CONST:
                stack.append(ins[1] & M32)
            elif code == op.LOCAL_SET:
                locals_[ins[1]] = stack.pop()
            elif code == op.LOCAL_TEE:
                locals_[ins[1]] = stack[-1]
            elif code in NUMERIC:
                NUMERIC[code](stack)
            elif 0x28 <= code <= 0x35:  # loads
                nbytes, mode = _LOAD_SPEC[code]
                addr = stack[-1] + ins[2]
                end = addr + nbytes
                if end > len(mem):
                    raise Trap("out of bounds memory access")
                if mode == "u":
                    stack[-1] = int.from_bytes(mem[addr:end], "little")
                elif mode == "f":
                    stack[-1] = _F32.unpack_from(mem, addr)[0]
                elif mode == "F":
                    stack[-1] = _F64.unpack_from(mem, addr)[0]
                else:
                    v = int.from_bytes(mem[addr:end], "little", signed=True)
                    stack[-1] = v & (M32 if mode == "s32" else M64)
            elif 0x36 <= code <= 0x3E:  # stores
                nbytes, mode = _STORE_SPEC[code]
                value = stack.pop()
                addr = stack.pop() + ins[2]
                end = addr + nbytes
                if end > len(mem):
                    raise Trap("out of bounds memory access")
                if mode == "i":
                    mem[addr:end] = (value & ((1 << (8 * nbytes)) - 1)).to_bytes(nbytes, "little")
                elif mode == "f":
                    _F32.pack_into(mem, addr, value)
                else:
                    _F64.pack_into(mem, addr, value)
            elif code == op.BR_IF:
                if stack.pop():
                    depth = ins[1]
                    if depth >= len(blocks):
                        return stack[len(stack) - n_results :]
                    target, height, arity = blocks[-1 - depth]
                    if fuel_check and target <= pc:
                        self._burn()
                    stack[height:] = stack[len(stack) - arity :] if arity else []
                    del blocks[len(blocks) - 1 - depth :]
                    pc = target
                    continue
            elif code == op.BR:
                depth = ins[1]
                if depth >= len(blocks):
                    return stack[len(stack) - n_results :]
                target, height, arity = blocks[-1 - depth]
                if fuel_check and target <= pc:
                    self._burn()
                stack[height:] = stack[len(stack) - arity :] if arity else []
                del blocks[len(blocks) - 1 - depth :]
                pc = target
                continue
            elif code == op.LOOP:
                blocks.append((ins[1], len(stack) - ins[2], ins[2]))
            elif code == op.BLOCK:
                blocks.append((ins[1], len(stack) - ins[2], ins[3]))
            elif code == op.END:
                blocks.pop()
            elif code == op.IF:
                cond = stack.pop()
                blocks.append((ins[2], len(stack) - ins[3], ins[4]))
                if not cond:
                    pc = ins[1]
                    continue
            elif code == OP_JUMP:
                pc = ins[1]
                continue
            elif code == op.CALL:
                if fuel_check:
                    self._burn()
                target = self.funcs[ins[1]]
                if isinstance(target, HostFunc):
                    n_args = len(target.params)
                    args = stack[len(stack) - n_args :] if n_args else []
                    del stack[len(stack) - n_args :]
                    out = target.fn(self, *args)
                    if out is not None:
                        if isinstance(out, (list, tuple)):
                            stack.extend(out)
                        else:
                            stack.append(out)
                else:
                    fn2 = self._compiled[target[1]]
                    if fn2 is None:
                        fn2 = self._compiled[target[1]] = self._compile(target[1])
                    n_args = len(fn2.typ.params)
                    args = stack[len(stack) - n_args :] if n_args else []
                    del stack[len(stack) - n_args :]
                    if self.depth >= MAX_CALL_DEPTH:
                        raise Trap("call stack exhausted")
                    self.depth += 1
                    try:
                        stack.extend(self._run(fn2, args))
                    finally:
                        self.depth -= 1
                mem = self.memory
            elif code == op.CALL_INDIRECT:
                if fuel_check:
                    self._burn()
                typeidx, tableidx = ins[1], ins[2]
                table = self.tables[tableidx]
                i = stack.pop()
                if i >= len(table):
                    raise Trap("undefined element")
                funcidx = table[i]
                if funcidx is None:
                    raise Trap("uninitialized element")
                actual = self._func_type(funcidx)
                expected = self.mod.types[typeidx]
                if actual != expected:
                    raise Trap("indirect call type mismatch")
                n_args = len(expected.params)
                args = stack[len(stack) - n_args :] if n_args else []
                del stack[len(stack) - n_args :]
                stack.extend(self._call(funcidx, args))
                mem = self.memory
            elif code == op.RETURN:
                return stack[len(stack) - n_results :]
            elif code == OP_HALT:
                return stack[len(stack) - n_results :]
            elif code == op.BR_TABLE:
                idx = stack.pop()
                targets, default = ins[1], ins[2]
                depth = targets[idx] if idx < len(targets) else default
                if depth >= len(blocks):
                    return stack[len(stack) - n_results :]
                target, height, arity = blocks[-1 - depth]
                if fuel_check and target <= pc:
                    self._burn()
                stack[height:] = stack[len(stack) - arity :] if arity else []
                del blocks[len(blocks) - 1 - depth :]
                pc = target
                continue
            elif code == op.GLOBAL_GET:
                stack.append(self.globals[ins[1]])
            elif code == op.GLOBAL_SET:
                self.globals[ins[1]] = stack.pop()
            elif code == op.I64_CONST:
                stack.append(ins[1] & M64)
            elif code == op.F32_CONST:
                stack.append(_F32.unpack(ins[1])[0])
            elif code == op.F64_CONST:
                stack.append(_F64.unpack(ins[1])[0])
            elif code == op.DROP:
                stack.pop()
            elif code == op.SELECT or code == op.SELECT_T:
                cond = stack.pop()
                b = stack.pop()
                if not cond:
                    stack[-1] = b
            elif code == op.MEMORY_SIZE:
                stack.append(len(mem) // PAGE)
            elif code == op.MEMORY_GROW:
                delta = stack.pop()
                cur = len(mem) // PAGE
                limit = self.mem_max if self.mem_max is not None else 65536
                if cur + delta > min(limit, 65536):
                    stack.append(M32)
                else:
                    mem.extend(b"\x00" * (delta * PAGE))
                    stack.append(cur)
            elif code == op.UNREACHABLE:
                raise Trap("unreachable executed")
            elif code == op.NOP:
                pass
            elif code == op.FC:
                self._run_fc(ins[1], ins[2], stack, mem)
            elif code == op.REF_FUNC:
                stack.append(ins[1])
            elif code == op.REF_NULL:
                stack.append(None)
            elif code == op.REF_IS_NULL:
                stack[-1] = 1 if stack[-1] is None else 0
            elif code == op.TABLE_GET:
                i = stack.pop()
                table = self.tables[ins[1]]
                if i >= len(table):
                    raise Trap("out of bounds table access")
                stack.append(table[i])
            elif code == op.TABLE_SET:
                v = stack.pop()
                i = stack.pop()
                table = self.tables[ins[1]]
                if i >= len(table):
                    raise Trap("out of bounds table access")
                table[i] = v
            elif code in (op.RETURN_CALL, op.RETURN_CALL_INDIRECT):
                raise Trap("tail calls not supported by this runtime")
            else:
                raise Trap("unhandled opcode 0x%x" % code)
            pc += 1
        return stack[len(stack) - n_results :] if n_results else []

    def _run_fc(self, sub: int, args, stack: list, mem: bytearray) -> None:
        if sub in FC_NUMERIC:
            FC_NUMERIC[sub](stack)
        elif sub == op.FC_MEMORY_FILL:
            size = stack.pop()
            value = stack.pop()
            dest = stack.pop()
            if dest + size > len(mem):
                raise Trap("out of bounds memory access")
            mem[dest : dest + size] = bytes([value & 0xFF]) * size
        elif sub == op.FC_MEMORY_COPY:
            size = stack.pop()
            src = stack.pop()
            dest = stack.pop()
            if src + size > len(mem) or dest + size > len(mem):
                raise Trap("out of bounds memory access")
            mem[dest : dest + size] = mem[src : src + size]
        elif sub == op.FC_MEMORY_INIT:
            size = stack.pop()
            src = stack.pop()
            dest = stack.pop()
            seg = self.data_segments[args[0]]
            if seg is None:
                seg = b""
            if src + size > len(seg) or dest + size > len(mem):
                raise Trap("out of bounds memory access")
            mem[dest : dest + size] = seg[src : src + size]
        elif sub == op.FC_DATA_DROP:
            self.data_segments[args[0]] = None
        elif sub == op.FC_TABLE_INIT:
            size = stack.pop()
            src = stack.pop()
            dest = stack.pop()
            seg = self.elem_segments[args[0]] or []
            table = self.tables[args[1]]
            if src + size > len(seg) or dest + size > len(table):
                raise Trap("out of bounds table access")
            table[dest : dest + size] = seg[src : src + size]
        elif sub == op.FC_ELEM_DROP:
            self.elem_segments[args[0]] = None
        elif sub == op.FC_TABLE_COPY:
            size = stack.pop()
            src = stack.pop()
            dest = stack.pop()
            dst_table = self.tables[args[0]]
            src_table = self.tables[args[1]]
            if src + size > len(src_table) or dest + size > len(dst_table):
                raise Trap("out of bounds table access")
            dst_table[dest : dest + size] = src_table[src : src + size]
        elif sub == op.FC_TABLE_GROW:
            delta = stack.pop()
            init = stack.pop()
            table = self.tables[args[0]]
            lim = self.mod.all_tables[args[0]].limits
            if lim.maximum is not None and len(table) + delta > lim.maximum:
                stack.append(M32)
            else:
                stack.append(len(table))
                table.extend([init] * delta)
        elif sub == op.FC_TABLE_SIZE:
            stack.append(len(self.tables[args[0]]))
        elif sub == op.FC_TABLE_FILL:
            size = stack.pop()
            value = stack.pop()
            start = stack.pop()
            table = self.tables[args[0]]
            if start + size > len(table):
                raise Trap("out of bounds table access")
            table[start : start + size] = [value] * size
        else:
            raise Trap("unhandled 0xfc sub-opcode %d" % sub)

    def _func_type(self, funcidx: int) -> FuncType:
        target = self.funcs[funcidx]
        if isinstance(target, HostFunc):
            return FuncType(target.params, target.results)
        return self.mod.types[self.mod.functions[target[1]]]

    def _burn(self) -> None:
        self.fuel -= 1
        if self.fuel < 0:
            raise Trap("fuel exhausted")


def instantiate(module_bytes: bytes, imports: dict, fuel: Optional[int] = None) -> Instance:
    return Instance(parse_module(module_bytes), imports, fuel=fuel)
