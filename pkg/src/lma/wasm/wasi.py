"""Minimal, deterministic WASI preview1 surface for guest modules.

Supports stdin (a fixed byte string), stdout/stderr capture, argv/environ,
and proc_exit.  Nothing here touches the host filesystem or clock: attested
runs must be reproducible bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from . import opcodes as op
from .interp import ExitTrap, HostFunc, Instance, Trap

ERRNO_SUCCESS = 0
ERRNO_BADF = 8
ERRNO_INVAL = 28

_U32 = struct.Struct("<I")

I = op.I32


@dataclass
class WasiState:
    stdin: bytes = b""
    argv: list = field(default_factory=list)
    environ: list = field(default_factory=list)
    stdout: bytearray = field(default_factory=bytearray)
    stderr: bytearray = field(default_factory=bytearray)
    stdin_pos: int = 0


def _mem(inst: Instance) -> bytearray:
    return inst.memory


def _read_u32(mem, addr: int) -> int:
    if addr + 4 > len(mem):
        raise Trap("out of bounds memory access")
    return _U32.unpack_from(mem, addr)[0]


def _write_u32(mem, addr: int, value: int) -> None:
    if addr + 4 > len(mem):
        raise Trap("out of bounds memory access")
    _U32.pack_into(mem, addr, value & 0xFFFFFFFF)


def make_wasi(state: WasiState) -> dict:
    """Host function table for the 'wasi_snapshot_preview1' namespace."""

    def fd_write(inst, fd, iovs, iov_count, n_written_ptr):
        mem = _mem(inst)
        if fd not in (1, 2):
            return ERRNO_BADF
        sink = state.stdout if fd == 1 else state.stderr
        total = 0
        for k in range(iov_count):
            base = iovs + 8 * k
            buf = _read_u32(mem, base)
            length = _read_u32(mem, base + 4)
            if buf + length > len(mem):
                raise Trap("out of bounds memory access")
            sink += mem[buf : buf + length]
            total += length
        _write_u32(mem, n_written_ptr, total)
        return ERRNO_SUCCESS

    def fd_read(inst, fd, iovs, iov_count, n_read_ptr):
        mem = _mem(inst)
        if fd != 0:
            return ERRNO_BADF
        total = 0
        for k in range(iov_count):
            base = iovs + 8 * k
            buf = _read_u32(mem, base)
            length = _read_u32(mem, base + 4)
            chunk = state.stdin[state.stdin_pos : state.stdin_pos + length]
            if buf + len(chunk) > len(mem):
                raise Trap("out of bounds memory access")
            mem[buf : buf + len(chunk)] = chunk
            state.stdin_pos += len(chunk)
            total += len(chunk)
            if len(chunk) < length:
                break
        _write_u32(mem, n_read_ptr, total)
        return ERRNO_SUCCESS

    def proc_exit(inst, code):
        raise ExitTrap(code)

    def fd_close(inst, fd):
        return ERRNO_SUCCESS if fd in (0, 1, 2) else ERRNO_BADF

    def args_sizes_get(inst, argc_ptr, buf_size_ptr):
        mem = _mem(inst)
        _write_u32(mem, argc_ptr, len(state.argv))
        _write_u32(mem, buf_size_ptr, sum(len(a.encode()) + 1 for a in state.argv))
        return ERRNO_SUCCESS

    def args_get(inst, argv_ptr, buf_ptr):
        mem = _mem(inst)
        offset = buf_ptr
        for k, arg in enumerate(state.argv):
            raw = arg.encode() + b"\x00"
            if offset + len(raw) > len(mem):
                raise Trap("out of bounds memory access")
            _write_u32(mem, argv_ptr + 4 * k, offset)
            mem[offset : offset + len(raw)] = raw
            offset += len(raw)
        return ERRNO_SUCCESS

    def environ_sizes_get(inst, count_ptr, buf_size_ptr):
        mem = _mem(inst)
        _write_u32(mem, count_ptr, len(state.environ))
        _write_u32(mem, buf_size_ptr, sum(len(e.encode()) + 1 for e in state.environ))
        return ERRNO_SUCCESS

    def environ_get(inst, env_ptr, buf_ptr):
        mem = _mem(inst)
        offset = buf_ptr
        for k, entry in enumerate(state.environ):
            raw = entry.encode() + b"\x00"
            if offset + len(raw) > len(mem):
                raise Trap("out of bounds memory access")
            _write_u32(mem, env_ptr + 4 * k, offset)
            mem[offset : offset + len(raw)] = raw
            offset += len(raw)
        return ERRNO_SUCCESS

    ns = "wasi_snapshot_preview1"
    return {
        (ns, "fd_write"): HostFunc((I, I, I, I), (I,), fd_write),
        (ns, "fd_read"): HostFunc((I, I, I, I), (I,), fd_read),
        (ns, "fd_close"): HostFunc((I,), (I,), fd_close),
        (ns, "proc_exit"): HostFunc((I,), (), proc_exit),
        (ns, "args_sizes_get"): HostFunc((I, I), (I,), args_sizes_get),
        (ns, "args_get"): HostFunc((I, I), (I,), args_get),
        (ns, "environ_sizes_get"): HostFunc((I, I), (I,), environ_sizes_get),
        (ns, "environ_get"): HostFunc((I, I), (I,), environ_get),
    }
