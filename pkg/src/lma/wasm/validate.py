"""Module validation: index-space checks plus the standard operand/control
stack type-checking algorithm over every function body.

Test suites additionally cross-check instrumented output against an external
engine's validator when one is available; this pass is what the toolkit
itself enforces.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import opcodes as op
from .module import (
    KIND_FUNC, KIND_GLOBAL, KIND_MEM, KIND_TABLE,
    FuncType, WasmModule, decode_instr,
)


class ValidationError(Exception):
    pass


def _code(valtype: int) -> str:
    return op.VALTYPE_CODE[valtype]


@dataclass
class _Frame:
    opcode: int
    start: tuple
    end: tuple
    height: int
    unreachable: bool = False


class _BodyChecker:
    def __init__(self, mod: WasmModule, functype: FuncType, locals_: list):
        self.mod = mod
        self.locals = [_code(v) for v in functype.params]
        for count, valtype in locals_:
            self.locals.extend([_code(valtype)] * count)
        self.returns = tuple(_code(v) for v in functype.results)
        self.vals: list = []
        self.ctrls: list = [_Frame(op.BLOCK, (), self.returns, 0)]

    # ---- stack primitives (reference algorithm) -------------------------
    def push(self, t: str) -> None:
        self.vals.append(t)

    def push_all(self, ts) -> None:
        self.vals.extend(ts)

    def pop(self, expect: Optional[str] = None) -> Optional[str]:
        frame = self.ctrls[-1]
        if len(self.vals) == frame.height:
            if frame.unreachable:
                return expect
            raise ValidationError("operand stack underflow")
        actual = self.vals.pop()
        if expect is not None and actual is not None and actual != expect:
            raise ValidationError("expected %s on stack, found %s" % (expect, actual))
        return actual if actual is not None else expect

    def pop_all(self, ts) -> None:
        for t in reversed(ts):
            self.pop(t)

    def push_frame(self, opcode: int, start: tuple, end: tuple) -> None:
        self.ctrls.append(_Frame(opcode, start, end, len(self.vals)))
        self.push_all(start)

    def pop_frame(self) -> _Frame:
        if not self.ctrls:
            raise ValidationError("control stack underflow")
        frame = self.ctrls[-1]
        self.pop_all(frame.end)
        if len(self.vals) != frame.height:
            raise ValidationError("values left on stack at end of block")
        self.ctrls.pop()
        return frame

    def set_unreachable(self) -> None:
        frame = self.ctrls[-1]
        del self.vals[frame.height :]
        frame.unreachable = True

    def label_types(self, depth: int) -> tuple:
        if depth >= len(self.ctrls):
            raise ValidationError("branch depth %d out of range" % depth)
        frame = self.ctrls[-1 - depth]
        return frame.start if frame.opcode == op.LOOP else frame.end

    # ---- helpers ---------------------------------------------------------
    def blocktype(self, bt: int) -> tuple[tuple, tuple]:
        if bt >= 0:
            if bt >= len(self.mod.types):
                raise ValidationError("block type index %d out of range" % bt)
            t = self.mod.types[bt]
            return tuple(_code(v) for v in t.params), tuple(_code(v) for v in t.results)
        if bt == -0x40:
            return (), ()
        valtype = bt & 0x7F
        if valtype not in op.VALTYPE_CODE:
            raise ValidationError("invalid block type")
        return (), (_code(valtype),)

    def functype(self, funcidx: int) -> FuncType:
        if funcidx >= self.mod.n_funcs:
            raise ValidationError("function index %d out of range" % funcidx)
        return self.mod.types[self.mod.func_typeidx(funcidx)]

    def need_memory(self) -> None:
        if not self.mod.all_memories:
            raise ValidationError("instruction requires a memory")

    def local(self, idx: int) -> str:
        if idx >= len(self.locals):
            raise ValidationError("local index %d out of range" % idx)
        return self.locals[idx]

    def global_type(self, idx: int):
        types = self.mod.all_global_types
        if idx >= len(types):
            raise ValidationError("global index %d out of range" % idx)
        return types[idx]

    def table(self, idx: int):
        tables = self.mod.all_tables
        if idx >= len(tables):
            raise ValidationError("table index %d out of range" % idx)
        return tables[idx]

    # ---- main loop -------------------------------------------------------
    def run(self, code: bytes) -> None:
        pos = 0
        n = len(code)
        while pos < n:
            opcode, sub, args, pos = decode_instr(code, pos)
            if not self.ctrls:
                raise ValidationError("instructions after function end")
            self.step(opcode, sub, args)
        if self.ctrls:
            raise ValidationError("unterminated function body")

    def step(self, opcode: int, sub, args) -> None:
        mod = self.mod
        if opcode == op.UNREACHABLE:
            self.set_unreachable()
        elif opcode == op.NOP:
            pass
        elif opcode in (op.BLOCK, op.LOOP):
            start, end = self.blocktype(args[0])
            self.pop_all(start)
            self.push_frame(opcode, start, end)
        elif opcode == op.IF:
            self.pop("i")
            start, end = self.blocktype(args[0])
            self.pop_all(start)
            self.push_frame(opcode, start, end)
        elif opcode == op.ELSE:
            frame = self.pop_frame()
            if frame.opcode != op.IF:
                raise ValidationError("else outside of if")
            self.push_frame(op.ELSE, frame.start, frame.end)
        elif opcode == op.END:
            frame = self.pop_frame()
            if frame.opcode == op.IF and frame.start != frame.end:
                raise ValidationError("if without else must have matching types")
            self.push_all(frame.end)
        elif opcode == op.BR:
            self.pop_all(self.label_types(args[0]))
            self.set_unreachable()
        elif opcode == op.BR_IF:
            self.pop("i")
            ts = self.label_types(args[0])
            self.pop_all(ts)
            self.push_all(ts)
        elif opcode == op.BR_TABLE:
            self.pop("i")
            targets, default = args
            ts = self.label_types(default)
            for t in targets:
                if self.label_types(t) != ts:
                    raise ValidationError("br_table target arity mismatch")
            self.pop_all(ts)
            self.set_unreachable()
        elif opcode == op.RETURN:
            self.pop_all(self.returns)
            self.set_unreachable()
        elif opcode in (op.CALL, op.RETURN_CALL):
            t = self.functype(args[0])
            self.pop_all(tuple(_code(v) for v in t.params))
            if opcode == op.CALL:
                self.push_all(tuple(_code(v) for v in t.results))
            else:
                if tuple(_code(v) for v in t.results) != self.returns:
                    raise ValidationError("tail call result mismatch")
                self.set_unreachable()
        elif opcode in (op.CALL_INDIRECT, op.RETURN_CALL_INDIRECT):
            typeidx, tableidx = args
            table = self.table(tableidx)
            if table.elem != op.FUNCREF:
                raise ValidationError("call_indirect needs a funcref table")
            if typeidx >= len(mod.types):
                raise ValidationError("type index %d out of range" % typeidx)
            t = mod.types[typeidx]
            self.pop("i")
            self.pop_all(tuple(_code(v) for v in t.params))
            if opcode == op.CALL_INDIRECT:
                self.push_all(tuple(_code(v) for v in t.results))
            else:
                if tuple(_code(v) for v in t.results) != self.returns:
                    raise ValidationError("tail call result mismatch")
                self.set_unreachable()
        elif opcode == op.DROP:
            self.pop()
        elif opcode == op.SELECT:
            self.pop("i")
            t1 = self.pop()
            t2 = self.pop(t1)
            picked = t1 if t1 is not None else t2
            if picked in ("r", "e"):
                raise ValidationError("select requires numeric operands")
            self.push(picked)
        elif opcode == op.SELECT_T:
            types = args[0]
            if len(types) != 1:
                raise ValidationError("select immediate must list one type")
            t = _code(types[0])
            self.pop("i")
            self.pop(t)
            self.pop(t)
            self.push(t)
        elif opcode == op.LOCAL_GET:
            self.push(self.local(args[0]))
        elif opcode == op.LOCAL_SET:
            self.pop(self.local(args[0]))
        elif opcode == op.LOCAL_TEE:
            t = self.local(args[0])
            self.pop(t)
            self.push(t)
        elif opcode == op.GLOBAL_GET:
            self.push(_code(self.global_type(args[0]).valtype))
        elif opcode == op.GLOBAL_SET:
            g = self.global_type(args[0])
            if not g.mutable:
                raise ValidationError("global.set on immutable global")
            self.pop(_code(g.valtype))
        elif opcode == op.TABLE_GET:
            table = self.table(args[0])
            self.pop("i")
            self.push(_code(table.elem))
        elif opcode == op.TABLE_SET:
            table = self.table(args[0])
            self.pop(_code(table.elem))
            self.pop("i")
        elif opcode in op.LOAD_OPS:
            self.need_memory()
            result, natural = op.LOAD_SIG[opcode]
            if 1 << args[0] > natural:
                raise ValidationError("alignment exceeds natural alignment")
            self.pop("i")
            self.push(result)
        elif opcode in op.STORE_OPS:
            self.need_memory()
            value, natural = op.STORE_SIG[opcode]
            if 1 << args[0] > natural:
                raise ValidationError("alignment exceeds natural alignment")
            self.pop(value)
            self.pop("i")
        elif opcode == op.MEMORY_SIZE:
            self.need_memory()
            self.push("i")
        elif opcode == op.MEMORY_GROW:
            self.need_memory()
            self.pop("i")
            self.push("i")
        elif opcode == op.I32_CONST:
            self.push("i")
        elif opcode == op.I64_CONST:
            self.push("I")
        elif opcode == op.F32_CONST:
            self.push("f")
        elif opcode == op.F64_CONST:
            self.push("F")
        elif opcode == op.REF_NULL:
            if args[0] not in (op.FUNCREF, op.EXTERNREF):
                raise ValidationError("invalid ref.null type")
            self.push(_code(args[0]))
        elif opcode == op.REF_IS_NULL:
            t = self.pop()
            if t not in (None, "r", "e"):
                raise ValidationError("ref.is_null requires a reference")
            self.push("i")
        elif opcode == op.REF_FUNC:
            if args[0] >= mod.n_funcs:
                raise ValidationError("ref.func index out of range")
            self.push("r")
        elif opcode == op.FC:
            self.step_fc(sub, args)
        elif opcode in op.SIGNATURES:
            params, results = op.SIGNATURES[opcode]
            self.pop_all(tuple(params))
            self.push_all(tuple(results))
        else:
            raise ValidationError("unhandled opcode %s" % op.name_of(opcode, sub))

    def step_fc(self, sub: int, args) -> None:
        mod = self.mod
        if sub in op.FC_SIG:
            params, results = op.FC_SIG[sub]
            self.pop_all(tuple(params))
            self.push_all(tuple(results))
        elif sub == op.FC_MEMORY_INIT:
            self.need_memory()
            if mod.datacount is None or args[0] >= mod.datacount:
                raise ValidationError("memory.init data index out of range")
            self.pop("i"); self.pop("i"); self.pop("i")
        elif sub == op.FC_DATA_DROP:
            if mod.datacount is None or args[0] >= mod.datacount:
                raise ValidationError("data.drop data index out of range")
        elif sub == op.FC_MEMORY_COPY:
            self.need_memory()
            self.pop("i"); self.pop("i"); self.pop("i")
        elif sub == op.FC_MEMORY_FILL:
            self.need_memory()
            self.pop("i"); self.pop("i"); self.pop("i")
        elif sub == op.FC_TABLE_INIT:
            elemidx, tableidx = args
            table = self.table(tableidx)
            if elemidx >= len(mod.elems):
                raise ValidationError("table.init element index out of range")
            self.pop("i"); self.pop("i"); self.pop("i")
        elif sub == op.FC_ELEM_DROP:
            if args[0] >= len(mod.elems):
                raise ValidationError("elem.drop element index out of range")
        elif sub == op.FC_TABLE_COPY:
            self.table(args[0])
            self.table(args[1])
            self.pop("i"); self.pop("i"); self.pop("i")
        elif sub == op.FC_TABLE_GROW:
            table = self.table(args[0])
            self.pop("i")
            self.pop(_code(table.elem))
            self.push("i")
        elif sub == op.FC_TABLE_SIZE:
            self.table(args[0])
            self.push("i")
        elif sub == op.FC_TABLE_FILL:
            table = self.table(args[0])
            self.pop("i")
            self.pop(_code(table.elem))
            self.pop("i")
        else:
            raise ValidationError("unhandled 0xfc sub-opcode %d" % sub)


def _check_const_expr(mod: WasmModule, expr: bytes, expected: str, n_prior_globals: int) -> None:
    stack: list = []
    pos = 0
    while pos < len(expr):
        opcode, sub, args, pos = decode_instr(expr, pos)
        if opcode == op.END:
            break
        if opcode == op.I32_CONST:
            stack.append("i")
        elif opcode == op.I64_CONST:
            stack.append("I")
        elif opcode == op.F32_CONST:
            stack.append("f")
        elif opcode == op.F64_CONST:
            stack.append("F")
        elif opcode == op.REF_NULL:
            stack.append(_code(args[0]))
        elif opcode == op.REF_FUNC:
            if args[0] >= mod.n_funcs:
                raise ValidationError("ref.func index out of range in constant")
            stack.append("r")
        elif opcode == op.GLOBAL_GET:
            types = mod.all_global_types
            if args[0] >= min(n_prior_globals, len(types)):
                raise ValidationError("global.get in constant refers forward")
            g = types[args[0]]
            if g.mutable:
                raise ValidationError("global.get in constant must be immutable")
            stack.append(_code(g.valtype))
        else:
            raise ValidationError(
                "%s not allowed in constant expression" % op.name_of(opcode, sub)
            )
    if stack != [expected]:
        raise ValidationError("constant expression must produce one %s" % expected)


def validate(mod: WasmModule) -> None:
    n_types = len(mod.types)
    for imp in mod.imports:
        if imp.kind == KIND_FUNC and imp.desc >= n_types:
            raise ValidationError("import %s.%s: type index out of range" % (imp.module, imp.name))
    for typeidx in mod.functions:
        if typeidx >= n_types:
            raise ValidationError("function type index out of range")
    if len(mod.all_memories) > 1:
        raise ValidationError("at most one memory is supported")
    for lim in list(mod.memories) + [i.desc for i in mod.imports if i.kind == KIND_MEM]:
        if lim.maximum is not None and lim.maximum < lim.minimum:
            raise ValidationError("memory limits: max < min")
        if lim.minimum > 65536:
            raise ValidationError("memory min exceeds 4 GiB")
    for table in mod.all_tables:
        lim = table.limits
        if lim.maximum is not None and lim.maximum < lim.minimum:
            raise ValidationError("table limits: max < min")

    n_imported_globals = sum(1 for i in mod.imports if i.kind == KIND_GLOBAL)
    for k, g in enumerate(mod.globals):
        _check_const_expr(mod, g.init, _code(g.type.valtype), n_imported_globals)

    seen = set()
    n_globals = len(mod.all_global_types)
    for e in mod.exports:
        if e.name in seen:
            raise ValidationError("duplicate export %r" % e.name)
        seen.add(e.name)
        spaces = {
            KIND_FUNC: mod.n_funcs,
            KIND_TABLE: len(mod.all_tables),
            KIND_MEM: len(mod.all_memories),
            KIND_GLOBAL: n_globals,
        }
        if e.index >= spaces[e.kind]:
            raise ValidationError("export %r: index out of range" % e.name)

    if mod.start is not None:
        if mod.start >= mod.n_funcs:
            raise ValidationError("start function index out of range")
        t = mod.types[mod.func_typeidx(mod.start)]
        if t.params or t.results:
            raise ValidationError("start function must have type [] -> []")

    for elem in mod.elems:
        if elem.offset is not None:
            table = mod.all_tables
            if elem.table_index >= len(table):
                raise ValidationError("element segment table index out of range")
            _check_const_expr(mod, elem.offset, "i", n_imported_globals)
        if elem.func_indices is not None:
            for idx in elem.func_indices:
                if idx >= mod.n_funcs:
                    raise ValidationError("element function index out of range")
        if elem.exprs is not None:
            for expr in elem.exprs:
                _check_const_expr(mod, expr, _code(elem.elemkind), n_imported_globals)

    if mod.datacount is not None and mod.datacount != len(mod.datas):
        raise ValidationError("data count section disagrees with data section")
    for d in mod.datas:
        if d.offset is not None:
            if d.mem_index >= len(mod.all_memories):
                raise ValidationError("data segment memory index out of range")
            _check_const_expr(mod, d.offset, "i", n_imported_globals)

    for i, body in enumerate(mod.code):
        functype = mod.types[mod.functions[i]]
        checker = _BodyChecker(mod, functype, body.locals)
        try:
            checker.run(body.code)
        except ValidationError as exc:
            raise ValidationError("function %d: %s" % (mod.n_func_imports + i, exc))
