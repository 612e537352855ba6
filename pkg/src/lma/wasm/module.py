"""Wasm binary parsing and re-encoding at section granularity.

The parser is strict about structure (section order, limits flags, terminal
opcodes) and rejects feature prefixes the toolkit does not handle (SIMD,
threads).  Custom sections pass through; everything else round-trips via a
canonical encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .. import leb
from . import opcodes as op

WASM_MAGIC = b"\x00asm"
WASM_VERSION = b"\x01\x00\x00\x00"

SEC_CUSTOM, SEC_TYPE, SEC_IMPORT, SEC_FUNC, SEC_TABLE = 0, 1, 2, 3, 4
SEC_MEMORY, SEC_GLOBAL, SEC_EXPORT, SEC_START, SEC_ELEM = 5, 6, 7, 8, 9
SEC_CODE, SEC_DATA, SEC_DATACOUNT = 10, 11, 12

_SECTION_RANK = {
    SEC_TYPE: 1, SEC_IMPORT: 2, SEC_FUNC: 3, SEC_TABLE: 4, SEC_MEMORY: 5,
    SEC_GLOBAL: 6, SEC_EXPORT: 7, SEC_START: 8, SEC_ELEM: 9,
    SEC_DATACOUNT: 10, SEC_CODE: 11, SEC_DATA: 12,
}

KIND_FUNC, KIND_TABLE, KIND_MEM, KIND_GLOBAL = 0, 1, 2, 3


class ModuleFormatError(Exception):
    pass


class UnsupportedFeature(ModuleFormatError):
    pass


@dataclass(frozen=True)
class FuncType:
    params: tuple
    results: tuple


@dataclass(frozen=True)
class Limits:
    minimum: int
    maximum: Optional[int]


@dataclass(frozen=True)
class TableType:
    elem: int  # funcref / externref
    limits: Limits


@dataclass(frozen=True)
class GlobalType:
    valtype: int
    mutable: bool


@dataclass
class Import:
    module: str
    name: str
    kind: int
    desc: object  # typeidx | TableType | Limits | GlobalType


@dataclass
class Global:
    type: GlobalType
    init: bytes  # constant expression including terminal end


@dataclass
class Export:
    name: str
    kind: int
    index: int


@dataclass
class Elem:
    flags: int
    table_index: int
    offset: Optional[bytes]  # active segments only
    elemkind: int  # elemkind byte or reftype, per flavor
    func_indices: Optional[list]  # flavors 0-3
    exprs: Optional[list]  # flavors 4-7, raw expr bytes each


@dataclass
class Data:
    flags: int
    mem_index: int
    offset: Optional[bytes]
    payload: bytes


@dataclass
class FuncBody:
    locals: list  # [(count, valtype), ...]
    code: bytes  # instruction stream including terminal end


@dataclass
class WasmModule:
    types: list = field(default_factory=list)
    imports: list = field(default_factory=list)
    functions: list = field(default_factory=list)  # type indices of local funcs
    tables: list = field(default_factory=list)
    memories: list = field(default_factory=list)
    globals: list = field(default_factory=list)
    exports: list = field(default_factory=list)
    start: Optional[int] = None
    elems: list = field(default_factory=list)
    code: list = field(default_factory=list)
    datas: list = field(default_factory=list)
    datacount: Optional[int] = None
    customs: list = field(default_factory=list)  # (anchor_section_id, payload)

    # ---- index space helpers -------------------------------------------
    @property
    def n_func_imports(self) -> int:
        return sum(1 for i in self.imports if i.kind == KIND_FUNC)

    @property
    def n_funcs(self) -> int:
        return self.n_func_imports + len(self.functions)

    def func_typeidx(self, funcidx: int) -> int:
        n_imp = 0
        for imp in self.imports:
            if imp.kind == KIND_FUNC:
                if n_imp == funcidx:
                    return imp.desc
                n_imp += 1
        return self.functions[funcidx - n_imp]

    @property
    def all_memories(self) -> list:
        imported = [i.desc for i in self.imports if i.kind == KIND_MEM]
        return imported + list(self.memories)

    @property
    def all_tables(self) -> list:
        imported = [i.desc for i in self.imports if i.kind == KIND_TABLE]
        return imported + list(self.tables)

    @property
    def all_global_types(self) -> list:
        imported = [i.desc for i in self.imports if i.kind == KIND_GLOBAL]
        return imported + [g.type for g in self.globals]


# ---- instruction decoding ----------------------------------------------

def decode_instr(buf: bytes, pos: int):
    """Decode one instruction; returns (opcode, fc_sub, args, next_pos)."""
    if pos >= len(buf):
        raise ModuleFormatError("unexpected end of code")
    opcode = buf[pos]
    pos += 1
    if opcode in (op.SIMD_PREFIX, op.THREADS_PREFIX):
        raise UnsupportedFeature("unsupported opcode prefix 0x%02x" % opcode)
    if opcode == op.FC:
        sub, pos = leb.decode_u(buf, pos, 32)
        if sub not in op.FC_IMMEDIATES:
            raise UnsupportedFeature("unsupported 0xfc sub-opcode %d" % sub)
        args = []
        for imm in op.FC_IMMEDIATES[sub]:
            if imm == op.U:
                value, pos = leb.decode_u(buf, pos, 32)
                args.append(value)
            elif imm == op.UU:
                a, pos = leb.decode_u(buf, pos, 32)
                b, pos = leb.decode_u(buf, pos, 32)
                args += [a, b]
            elif imm == op.BYTE:
                if pos >= len(buf):
                    raise ModuleFormatError("truncated instruction")
                args.append(buf[pos])
                pos += 1
        return opcode, sub, tuple(args), pos
    try:
        imm = op.IMMEDIATES[opcode]
    except KeyError:
        raise ModuleFormatError("unknown opcode 0x%02x" % opcode)
    if imm == op.NONE:
        return opcode, None, (), pos
    if imm == op.U:
        value, pos = leb.decode_u(buf, pos, 32)
        return opcode, None, (value,), pos
    if imm == op.MEMARG:
        align, pos = leb.decode_u(buf, pos, 32)
        offset, pos = leb.decode_u(buf, pos, 32)
        return opcode, None, (align, offset), pos
    if imm == op.UU:
        a, pos = leb.decode_u(buf, pos, 32)
        b, pos = leb.decode_u(buf, pos, 32)
        return opcode, None, (a, b), pos
    if imm == op.BLOCKTYPE:
        bt, pos = leb.decode_s(buf, pos, 33)
        return opcode, None, (bt,), pos
    if imm == op.BRTABLE:
        count, pos = leb.decode_u(buf, pos, 32)
        targets = []
        for _ in range(count):
            t, pos = leb.decode_u(buf, pos, 32)
            targets.append(t)
        default, pos = leb.decode_u(buf, pos, 32)
        return opcode, None, (tuple(targets), default), pos
    if imm == op.SI32:
        value, pos = leb.decode_s(buf, pos, 32)
        return opcode, None, (value,), pos
    if imm == op.SI64:
        value, pos = leb.decode_s(buf, pos, 64)
        return opcode, None, (value,), pos
    if imm == op.RAW4:
        if pos + 4 > len(buf):
            raise ModuleFormatError("truncated f32 constant")
        return opcode, None, (buf[pos : pos + 4],), pos + 4
    if imm == op.RAW8:
        if pos + 8 > len(buf):
            raise ModuleFormatError("truncated f64 constant")
        return opcode, None, (buf[pos : pos + 8],), pos + 8
    if imm == op.VALTYPES:
        count, pos = leb.decode_u(buf, pos, 32)
        types = bytes(buf[pos : pos + count])
        if len(types) != count:
            raise ModuleFormatError("truncated select types")
        return opcode, None, (types,), pos + count
    if imm == op.BYTE:
        if pos >= len(buf):
            raise ModuleFormatError("truncated instruction")
        return opcode, None, (buf[pos],), pos + 1
    raise ModuleFormatError("unhandled immediate layout %r" % imm)


def encode_instr(opcode: int, sub, args) -> bytes:
    out = bytearray([opcode])
    if opcode == op.FC:
        out += leb.encode_u(sub)
        layout = op.FC_IMMEDIATES[sub]
        it = iter(args)
        for imm in layout:
            if imm == op.U:
                out += leb.encode_u(next(it))
            elif imm == op.UU:
                out += leb.encode_u(next(it))
                out += leb.encode_u(next(it))
            elif imm == op.BYTE:
                out.append(next(it))
        return bytes(out)
    imm = op.IMMEDIATES[opcode]
    if imm == op.NONE:
        pass
    elif imm == op.U:
        out += leb.encode_u(args[0])
    elif imm == op.MEMARG:
        out += leb.encode_u(args[0])
        out += leb.encode_u(args[1])
    elif imm == op.UU:
        out += leb.encode_u(args[0])
        out += leb.encode_u(args[1])
    elif imm == op.BLOCKTYPE:
        out += leb.encode_s(args[0])
    elif imm == op.BRTABLE:
        targets, default = args
        out += leb.encode_u(len(targets))
        for t in targets:
            out += leb.encode_u(t)
        out += leb.encode_u(default)
    elif imm == op.SI32 or imm == op.SI64:
        out += leb.encode_s(args[0])
    elif imm == op.RAW4 or imm == op.RAW8:
        out += args[0]
    elif imm == op.VALTYPES:
        out += leb.encode_u(len(args[0]))
        out += args[0]
    elif imm == op.BYTE:
        out.append(args[0])
    return bytes(out)


def parse_expr(buf: bytes, pos: int) -> tuple[bytes, int]:
    """Slice out one expression (through its matching depth-0 end)."""
    start = pos
    depth = 0
    while True:
        opcode, _, _, pos = decode_instr(buf, pos)
        if opcode in (op.BLOCK, op.LOOP, op.IF):
            depth += 1
        elif opcode == op.END:
            if depth == 0:
                return bytes(buf[start:pos]), pos
            depth -= 1


# ---- parser -------------------------------------------------------------

class _Reader:
    def __init__(self, buf: bytes, pos: int = 0, end: Optional[int] = None):
        self.buf = buf
        self.pos = pos
        self.end = len(buf) if end is None else end

    def u32(self) -> int:
        value, self.pos = leb.decode_u(self.buf, self.pos, 32)
        if self.pos > self.end:
            raise ModuleFormatError("section overrun")
        return value

    def byte(self) -> int:
        if self.pos >= self.end:
            raise ModuleFormatError("unexpected end of section")
        b = self.buf[self.pos]
        self.pos += 1
        return b

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise ModuleFormatError("unexpected end of section")
        chunk = bytes(self.buf[self.pos : self.pos + n])
        self.pos += n
        return chunk

    def name(self) -> str:
        raw = self.take(self.u32())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise ModuleFormatError("invalid utf-8 name")

    def valtype(self) -> int:
        v = self.byte()
        if v == op.V128:
            raise UnsupportedFeature("v128 values not supported")
        if v not in op.VALTYPE_CODE:
            raise ModuleFormatError("invalid value type 0x%02x" % v)
        return v

    def limits(self) -> Limits:
        flag = self.byte()
        if flag in (0x02, 0x03):
            raise UnsupportedFeature("shared memories not supported")
        if flag not in (0x00, 0x01):
            raise ModuleFormatError("invalid limits flag 0x%02x" % flag)
        minimum = self.u32()
        maximum = self.u32() if flag == 0x01 else None
        return Limits(minimum, maximum)

    def globaltype(self) -> GlobalType:
        valtype = self.valtype()
        mut = self.byte()
        if mut not in (0, 1):
            raise ModuleFormatError("invalid mutability flag")
        return GlobalType(valtype, bool(mut))

    def tabletype(self) -> TableType:
        elem = self.byte()
        if elem not in (op.FUNCREF, op.EXTERNREF):
            raise ModuleFormatError("invalid table element type 0x%02x" % elem)
        return TableType(elem, self.limits())

    def expr(self) -> bytes:
        body, self.pos = parse_expr(self.buf, self.pos)
        if self.pos > self.end:
            raise ModuleFormatError("expression overruns section")
        return body


def _parse_elem(r: _Reader) -> Elem:
    flags = r.u32()
    if flags > 7:
        raise ModuleFormatError("invalid element segment flags %d" % flags)
    table_index = 0
    offset = None
    elemkind = 0x00 if flags < 4 else op.FUNCREF
    func_indices = None
    exprs = None
    if flags in (0, 4):
        offset = r.expr()
    elif flags in (2, 6):
        table_index = r.u32()
        offset = r.expr()
    if flags in (1, 2, 3):
        elemkind = r.byte()
        if elemkind != 0x00:
            raise ModuleFormatError("invalid elemkind 0x%02x" % elemkind)
    if flags in (5, 6, 7):
        elemkind = r.byte()
        if elemkind not in (op.FUNCREF, op.EXTERNREF):
            raise ModuleFormatError("invalid element reftype")
    if flags < 4:
        func_indices = [r.u32() for _ in range(r.u32())]
    else:
        exprs = [r.expr() for _ in range(r.u32())]
    return Elem(flags, table_index, offset, elemkind, func_indices, exprs)


def parse_module(data: bytes) -> WasmModule:
    if len(data) < 8 or data[:4] != WASM_MAGIC:
        raise ModuleFormatError("not a wasm binary (bad magic)")
    if data[4:8] != WASM_VERSION:
        raise ModuleFormatError("unsupported wasm version")
    mod = WasmModule()
    pos = 8
    last_rank = 0
    last_noncustom = 0
    while pos < len(data):
        sec_id = data[pos]
        pos += 1
        try:
            size, pos = leb.decode_u(data, pos, 32)
        except leb.LebTruncated:
            raise ModuleFormatError("truncated section header")
        end = pos + size
        if end > len(data):
            raise ModuleFormatError("section %d overruns file" % sec_id)
        r = _Reader(data, pos, end)
        if sec_id == SEC_CUSTOM:
            mod.customs.append((last_noncustom, bytes(data[pos:end])))
            pos = end
            continue
        rank = _SECTION_RANK.get(sec_id)
        if rank is None:
            raise ModuleFormatError("unknown section id %d" % sec_id)
        if rank <= last_rank:
            raise ModuleFormatError("section %d out of order" % sec_id)
        last_rank = rank
        last_noncustom = sec_id
        if sec_id == SEC_TYPE:
            for _ in range(r.u32()):
                if r.byte() != 0x60:
                    raise ModuleFormatError("invalid func type tag")
                params = tuple(r.valtype() for _ in range(r.u32()))
                results = tuple(r.valtype() for _ in range(r.u32()))
                mod.types.append(FuncType(params, results))
        elif sec_id == SEC_IMPORT:
            for _ in range(r.u32()):
                module, name = r.name(), r.name()
                kind = r.byte()
                if kind == KIND_FUNC:
                    desc = r.u32()
                elif kind == KIND_TABLE:
                    desc = r.tabletype()
                elif kind == KIND_MEM:
                    desc = r.limits()
                elif kind == KIND_GLOBAL:
                    desc = r.globaltype()
                else:
                    raise ModuleFormatError("invalid import kind %d" % kind)
                mod.imports.append(Import(module, name, kind, desc))
        elif sec_id == SEC_FUNC:
            mod.functions = [r.u32() for _ in range(r.u32())]
        elif sec_id == SEC_TABLE:
            mod.tables = [r.tabletype() for _ in range(r.u32())]
        elif sec_id == SEC_MEMORY:
            mod.memories = [r.limits() for _ in range(r.u32())]
        elif sec_id == SEC_GLOBAL:
            for _ in range(r.u32()):
                gtype = r.globaltype()
                mod.globals.append(Global(gtype, r.expr()))
        elif sec_id == SEC_EXPORT:
            for _ in range(r.u32()):
                name = r.name()
                kind = r.byte()
                if kind > KIND_GLOBAL:
                    raise ModuleFormatError("invalid export kind %d" % kind)
                mod.exports.append(Export(name, kind, r.u32()))
        elif sec_id == SEC_START:
            mod.start = r.u32()
        elif sec_id == SEC_ELEM:
            mod.elems = [_parse_elem(r) for _ in range(r.u32())]
        elif sec_id == SEC_DATACOUNT:
            mod.datacount = r.u32()
        elif sec_id == SEC_CODE:
            for _ in range(r.u32()):
                body_size = r.u32()
                body_end = r.pos + body_size
                if body_end > end:
                    raise ModuleFormatError("function body overruns section")
                locals_ = []
                n_groups, r.pos = leb.decode_u(data, r.pos, 32)
                for _ in range(n_groups):
                    count, r.pos = leb.decode_u(data, r.pos, 32)
                    locals_.append((count, r.valtype()))
                code = bytes(data[r.pos : body_end])
                if not code or code[-1] != op.END:
                    raise ModuleFormatError("function body must end with end")
                mod.code.append(FuncBody(locals_, code))
                r.pos = body_end
        elif sec_id == SEC_DATA:
            for _ in range(r.u32()):
                flags = r.u32()
                if flags > 2:
                    raise ModuleFormatError("invalid data segment flags %d" % flags)
                mem_index = r.u32() if flags == 2 else 0
                offset = r.expr() if flags in (0, 2) else None
                payload = r.take(r.u32())
                mod.datas.append(Data(flags, mem_index, offset, payload))
        if r.pos != end and sec_id != SEC_CODE:
            raise ModuleFormatError("trailing bytes in section %d" % sec_id)
        pos = end
    if len(mod.functions) != len(mod.code):
        raise ModuleFormatError(
            "function section declares %d functions, code section has %d"
            % (len(mod.functions), len(mod.code))
        )
    return mod


# ---- encoder ------------------------------------------------------------

def _section(sec_id: int, payload: bytes) -> bytes:
    return bytes([sec_id]) + leb.encode_u(len(payload)) + payload


def _vec(items: list) -> bytes:
    out = bytearray(leb.encode_u(len(items)))
    for item in items:
        out += item
    return bytes(out)


def _name(text: str) -> bytes:
    raw = text.encode("utf-8")
    return leb.encode_u(len(raw)) + raw


def _limits(lim: Limits) -> bytes:
    if lim.maximum is None:
        return b"\x00" + leb.encode_u(lim.minimum)
    return b"\x01" + leb.encode_u(lim.minimum) + leb.encode_u(lim.maximum)


def _tabletype(t: TableType) -> bytes:
    return bytes([t.elem]) + _limits(t.limits)


def _globaltype(g: GlobalType) -> bytes:
    return bytes([g.valtype, 1 if g.mutable else 0])


def _encode_elem(e: Elem) -> bytes:
    out = bytearray(leb.encode_u(e.flags))
    if e.flags in (2, 6):
        out += leb.encode_u(e.table_index)
    if e.flags in (0, 2, 4, 6):
        out += e.offset
    if e.flags in (1, 2, 3, 5, 6, 7):
        out.append(e.elemkind)
    if e.flags < 4:
        out += _vec([leb.encode_u(i) for i in e.func_indices])
    else:
        out += _vec(list(e.exprs))
    return bytes(out)


def encode_module(mod: WasmModule) -> bytes:
    out = bytearray(WASM_MAGIC + WASM_VERSION)

    def emit_customs(after: int):
        for anchor, payload in mod.customs:
            if anchor == after:
                out.extend(_section(SEC_CUSTOM, payload))

    emit_customs(0)
    if mod.types:
        payload = _vec([
            b"\x60" + _vec([bytes([v]) for v in t.params]) + _vec([bytes([v]) for v in t.results])
            for t in mod.types
        ])
        out += _section(SEC_TYPE, payload)
        emit_customs(SEC_TYPE)
    if mod.imports:
        entries = []
        for imp in mod.imports:
            body = _name(imp.module) + _name(imp.name) + bytes([imp.kind])
            if imp.kind == KIND_FUNC:
                body += leb.encode_u(imp.desc)
            elif imp.kind == KIND_TABLE:
                body += _tabletype(imp.desc)
            elif imp.kind == KIND_MEM:
                body += _limits(imp.desc)
            else:
                body += _globaltype(imp.desc)
            entries.append(body)
        out += _section(SEC_IMPORT, _vec(entries))
        emit_customs(SEC_IMPORT)
    if mod.functions:
        out += _section(SEC_FUNC, _vec([leb.encode_u(t) for t in mod.functions]))
        emit_customs(SEC_FUNC)
    if mod.tables:
        out += _section(SEC_TABLE, _vec([_tabletype(t) for t in mod.tables]))
        emit_customs(SEC_TABLE)
    if mod.memories:
        out += _section(SEC_MEMORY, _vec([_limits(m) for m in mod.memories]))
        emit_customs(SEC_MEMORY)
    if mod.globals:
        out += _section(SEC_GLOBAL, _vec([_globaltype(g.type) + g.init for g in mod.globals]))
        emit_customs(SEC_GLOBAL)
    if mod.exports:
        out += _section(
            SEC_EXPORT,
            _vec([_name(e.name) + bytes([e.kind]) + leb.encode_u(e.index) for e in mod.exports]),
        )
        emit_customs(SEC_EXPORT)
    if mod.start is not None:
        out += _section(SEC_START, leb.encode_u(mod.start))
        emit_customs(SEC_START)
    if mod.elems:
        out += _section(SEC_ELEM, _vec([_encode_elem(e) for e in mod.elems]))
        emit_customs(SEC_ELEM)
    if mod.datacount is not None:
        out += _section(SEC_DATACOUNT, leb.encode_u(mod.datacount))
        emit_customs(SEC_DATACOUNT)
    if mod.code:
        bodies = []
        for body in mod.code:
            locals_ = _vec([leb.encode_u(c) + bytes([v]) for c, v in body.locals])
            raw = locals_ + body.code
            bodies.append(leb.encode_u(len(raw)) + raw)
        out += _section(SEC_CODE, _vec(bodies))
        emit_customs(SEC_CODE)
    if mod.datas:
        entries = []
        for d in mod.datas:
            body = leb.encode_u(d.flags)
            if d.flags == 2:
                body += leb.encode_u(d.mem_index)
            if d.flags in (0, 2):
                body += d.offset
            body += leb.encode_u(len(d.payload)) + d.payload
            entries.append(body)
        out += _section(SEC_DATA, _vec(entries))
        emit_customs(SEC_DATA)
    # customs anchored to sections that ended up empty
    emitted = {0, SEC_TYPE if mod.types else -1, SEC_IMPORT if mod.imports else -1,
               SEC_FUNC if mod.functions else -1, SEC_TABLE if mod.tables else -1,
               SEC_MEMORY if mod.memories else -1, SEC_GLOBAL if mod.globals else -1,
               SEC_EXPORT if mod.exports else -1,
               SEC_START if mod.start is not None else -1,
               SEC_ELEM if mod.elems else -1,
               SEC_DATACOUNT if mod.datacount is not None else -1,
               SEC_CODE if mod.code else -1, SEC_DATA if mod.datas else -1}
    for anchor, payload in mod.customs:
        if anchor not in emitted:
            out += _section(SEC_CUSTOM, payload)
    return bytes(out)
