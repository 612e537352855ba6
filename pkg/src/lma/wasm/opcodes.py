"""Opcode tables: immediate layouts, mnemonics, and stack signatures.

Type codes used in signatures: ``i`` i32, ``I`` i64, ``f`` f32, ``F`` f64.
"""

# valtype encodings
I32, I64, F32, F64 = 0x7F, 0x7E, 0x7D, 0x7C
FUNCREF, EXTERNREF = 0x70, 0x6F
V128 = 0x7B

VALTYPE_CODE = {I32: "i", I64: "I", F32: "f", F64: "F", FUNCREF: "r", EXTERNREF: "e"}
CODE_VALTYPE = {v: k for k, v in VALTYPE_CODE.items()}

# control / structured
UNREACHABLE, NOP = 0x00, 0x01
BLOCK, LOOP, IF, ELSE, END = 0x02, 0x03, 0x04, 0x05, 0x0B
BR, BR_IF, BR_TABLE, RETURN = 0x0C, 0x0D, 0x0E, 0x0F
CALL, CALL_INDIRECT = 0x10, 0x11
RETURN_CALL, RETURN_CALL_INDIRECT = 0x12, 0x13
DROP, SELECT, SELECT_T = 0x1A, 0x1B, 0x1C
LOCAL_GET, LOCAL_SET, LOCAL_TEE, GLOBAL_GET, GLOBAL_SET = 0x20, 0x21, 0x22, 0x23, 0x24
TABLE_GET, TABLE_SET = 0x25, 0x26
MEMORY_SIZE, MEMORY_GROW = 0x3F, 0x40
I32_CONST, I64_CONST, F32_CONST, F64_CONST = 0x41, 0x42, 0x43, 0x44
REF_NULL, REF_IS_NULL, REF_FUNC = 0xD0, 0xD1, 0xD2
FC = 0xFC
SIMD_PREFIX, THREADS_PREFIX = 0xFD, 0xFE

# The nine plain store opcodes targeted by the pre-store policy.
STORE_OPS = frozenset(range(0x36, 0x3F))
LOAD_OPS = frozenset(range(0x28, 0x36))

# FC sub-opcodes
FC_MEMORY_INIT, FC_DATA_DROP, FC_MEMORY_COPY, FC_MEMORY_FILL = 8, 9, 10, 11
FC_TABLE_INIT, FC_ELEM_DROP, FC_TABLE_COPY = 12, 13, 14
FC_TABLE_GROW, FC_TABLE_SIZE, FC_TABLE_FILL = 15, 16, 17

# immediate layout tags
NONE = ""
BLOCKTYPE = "bt"
U = "u"            # one uvarint index
UU = "uu"          # two uvarint indexes
MEMARG = "memarg"
BRTABLE = "brtable"
SI32, SI64 = "s32", "s64"
RAW4, RAW8 = "raw4", "raw8"
VALTYPES = "valtypes"
BYTE = "byte"

IMMEDIATES = {
    UNREACHABLE: NONE, NOP: NONE,
    BLOCK: BLOCKTYPE, LOOP: BLOCKTYPE, IF: BLOCKTYPE,
    ELSE: NONE, END: NONE,
    BR: U, BR_IF: U, BR_TABLE: BRTABLE, RETURN: NONE,
    CALL: U, CALL_INDIRECT: UU,
    RETURN_CALL: U, RETURN_CALL_INDIRECT: UU,
    DROP: NONE, SELECT: NONE, SELECT_T: VALTYPES,
    LOCAL_GET: U, LOCAL_SET: U, LOCAL_TEE: U, GLOBAL_GET: U, GLOBAL_SET: U,
    TABLE_GET: U, TABLE_SET: U,
    MEMORY_SIZE: BYTE, MEMORY_GROW: BYTE,
    I32_CONST: SI32, I64_CONST: SI64, F32_CONST: RAW4, F64_CONST: RAW8,
    REF_NULL: BYTE, REF_IS_NULL: NONE, REF_FUNC: U,
}
for _op in range(0x28, 0x3F):  # loads and stores
    IMMEDIATES[_op] = MEMARG
for _op in range(0x45, 0xC5):  # numeric ops incl. sign extension
    IMMEDIATES[_op] = NONE

FC_IMMEDIATES = {
    FC_MEMORY_INIT: (U, BYTE), FC_DATA_DROP: (U,),
    FC_MEMORY_COPY: (BYTE, BYTE), FC_MEMORY_FILL: (BYTE,),
    FC_TABLE_INIT: (UU,), FC_ELEM_DROP: (U,), FC_TABLE_COPY: (UU,),
    FC_TABLE_GROW: (U,), FC_TABLE_SIZE: (U,), FC_TABLE_FILL: (U,),
}
for _sub in range(8):  # saturating truncations
    FC_IMMEDIATES[_sub] = ()


def _sig(table, ops, params, results):
    for op in ops:
        table[op] = (params, results)


# stack signatures for plain (non-control) ops: op -> (params, results)
SIGNATURES: dict[int, tuple[str, str]] = {}
_sig(SIGNATURES, [0x45], "i", "i")                       # i32.eqz
_sig(SIGNATURES, range(0x46, 0x50), "ii", "i")           # i32 comparisons
_sig(SIGNATURES, [0x50], "I", "i")                       # i64.eqz
_sig(SIGNATURES, range(0x51, 0x5B), "II", "i")           # i64 comparisons
_sig(SIGNATURES, range(0x5B, 0x61), "ff", "i")           # f32 comparisons
_sig(SIGNATURES, range(0x61, 0x67), "FF", "i")           # f64 comparisons
_sig(SIGNATURES, range(0x67, 0x6A), "i", "i")            # i32 clz/ctz/popcnt
_sig(SIGNATURES, range(0x6A, 0x79), "ii", "i")           # i32 binops
_sig(SIGNATURES, range(0x79, 0x7C), "I", "I")            # i64 clz/ctz/popcnt
_sig(SIGNATURES, range(0x7C, 0x8B), "II", "I")           # i64 binops
_sig(SIGNATURES, range(0x8B, 0x92), "f", "f")            # f32 unops
_sig(SIGNATURES, range(0x92, 0x99), "ff", "f")           # f32 binops
_sig(SIGNATURES, range(0x99, 0xA0), "F", "F")            # f64 unops
_sig(SIGNATURES, range(0xA0, 0xA7), "FF", "F")           # f64 binops
for _op, _ps in {
    0xA7: ("I", "i"), 0xA8: ("f", "i"), 0xA9: ("f", "i"), 0xAA: ("F", "i"),
    0xAB: ("F", "i"), 0xAC: ("i", "I"), 0xAD: ("i", "I"), 0xAE: ("f", "I"),
    0xAF: ("f", "I"), 0xB0: ("F", "I"), 0xB1: ("F", "I"), 0xB2: ("i", "f"),
    0xB3: ("i", "f"), 0xB4: ("I", "f"), 0xB5: ("I", "f"), 0xB6: ("F", "f"),
    0xB7: ("i", "F"), 0xB8: ("i", "F"), 0xB9: ("I", "F"), 0xBA: ("I", "F"),
    0xBB: ("f", "F"), 0xBC: ("f", "i"), 0xBD: ("F", "I"), 0xBE: ("i", "f"),
    0xBF: ("I", "F"), 0xC0: ("i", "i"), 0xC1: ("i", "i"), 0xC2: ("I", "I"),
    0xC3: ("I", "I"), 0xC4: ("I", "I"),
}.items():
    SIGNATURES[_op] = _ps

# loads: address -> loaded value; natural alignment limit in bytes
LOAD_SIG = {
    0x28: ("i", 4), 0x29: ("I", 8), 0x2A: ("f", 4), 0x2B: ("F", 8),
    0x2C: ("i", 1), 0x2D: ("i", 1), 0x2E: ("i", 2), 0x2F: ("i", 2),
    0x30: ("I", 1), 0x31: ("I", 1), 0x32: ("I", 2), 0x33: ("I", 2),
    0x34: ("I", 4), 0x35: ("I", 4),
}
STORE_SIG = {
    0x36: ("i", 4), 0x37: ("I", 8), 0x38: ("f", 4), 0x39: ("F", 8),
    0x3A: ("i", 1), 0x3B: ("i", 2), 0x3C: ("I", 1), 0x3D: ("I", 2), 0x3E: ("I", 4),
}

FC_SIG = {  # saturating truncations
    0: ("f", "i"), 1: ("f", "i"), 2: ("F", "i"), 3: ("F", "i"),
    4: ("f", "I"), 5: ("f", "I"), 6: ("F", "I"), 7: ("F", "I"),
}

NAMES = {
    UNREACHABLE: "unreachable", NOP: "nop", BLOCK: "block", LOOP: "loop",
    IF: "if", ELSE: "else", END: "end", BR: "br", BR_IF: "br_if",
    BR_TABLE: "br_table", RETURN: "return", CALL: "call",
    CALL_INDIRECT: "call_indirect", DROP: "drop", SELECT: "select",
    LOCAL_GET: "local.get", LOCAL_SET: "local.set", LOCAL_TEE: "local.tee",
    GLOBAL_GET: "global.get", GLOBAL_SET: "global.set",
    MEMORY_SIZE: "memory.size", MEMORY_GROW: "memory.grow",
    I32_CONST: "i32.const", I64_CONST: "i64.const",
    F32_CONST: "f32.const", F64_CONST: "f64.const",
    REF_NULL: "ref.null", REF_IS_NULL: "ref.is_null", REF_FUNC: "ref.func",
}


def name_of(op: int, sub: int | None = None) -> str:
    if op == FC:
        return "0xfc:%d" % sub
    return NAMES.get(op, "0x%02x" % op)
