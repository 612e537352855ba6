"""Snapshot wire format: zero-stripping RLE plus framed records.

The ``.lmas`` stream format is a concatenation of framed records.  Framing is
little-endian throughout and bit-exact: tooling on both sides of the
attester/verifier boundary must reproduce these bytes exactly.

Record layout::

    magic    4 bytes  b"LMA1"
    version  u8       1
    session  16 bytes opaque session id
    seq_no   u64le    0-based, strictly increasing per session
    reason   u8       hook reason code
    mem_size u64le    decompressed memory length (multiple of 64 KiB)
    plen     u64le    payload byte length
    payload  plen bytes of RLE stream
    crc      u32le    CRC-32 over all preceding record bytes

RLE token stream: ``0x00 uvarint(run_len)`` encodes ``run_len`` zero bytes,
``0x01 uvarint(lit_len) bytes`` encodes a literal.  The canonical encoder
emits run tokens for every zero run of length >= 4 and folds shorter runs
into literals.
"""

from __future__ import annotations

import re
import struct
import zlib
from dataclasses import dataclass
from typing import Iterator

from . import leb

MAGIC = b"LMA1"
VERSION = 1
PAGE_SIZE = 65536

_HEADER = struct.Struct("<4sB16sQBQQ")  # magic, version, session, seq, reason, mem_size, plen
_CRC = struct.Struct("<I")

# Canonical encoder boundary: a zero-run token costs at least 2 bytes, so
# runs shorter than 4 are cheaper left inside literals.
ZERO_RUN_MIN = 4
_ZERO_RUN = re.compile(rb"\x00{4,}")


class CodecError(Exception):
    pass


class TruncatedStream(CodecError):
    pass


class MalformedToken(CodecError):
    pass


class LengthMismatch(CodecError):
    pass


class BadMagic(CodecError):
    pass


class UnsupportedVersion(CodecError):
    pass


class ChecksumMismatch(CodecError):
    """Carries the structurally-parsed record so callers can attribute it to a session."""

    def __init__(self, record: "SnapshotRecord"):
        super().__init__("record checksum mismatch (session %s seq %d)"
                         % (record.session_id.hex(), record.seq_no))
        self.record = record


class Truncated(CodecError):
    pass


def rle_encode(memory: bytes) -> bytes:
    out = bytearray()
    pos = 0
    for match in _ZERO_RUN.finditer(memory):
        start, end = match.span()
        if start > pos:
            lit = memory[pos:start]
            out.append(0x01)
            out += leb.encode_u(len(lit))
            out += lit
        out.append(0x00)
        out += leb.encode_u(end - start)
        pos = end
    if pos < len(memory):
        lit = memory[pos:]
        out.append(0x01)
        out += leb.encode_u(len(lit))
        out += lit
    return bytes(out)


def rle_decode(stream: bytes, expected_len: int) -> bytes:
    out = bytearray()
    pos = 0
    n = len(stream)
    while pos < n:
        tag = stream[pos]
        pos += 1
        try:
            length, pos = leb.decode_u(stream, pos)
        except leb.LebTruncated as exc:
            raise TruncatedStream(str(exc)) from exc
        except leb.LebMalformed as exc:
            raise MalformedToken(str(exc)) from exc
        if length < 1:
            raise MalformedToken("token length must be >= 1")
        if tag == 0x00:
            out += b"\x00" * length
        elif tag == 0x01:
            if pos + length > n:
                raise TruncatedStream("literal extends past end of stream")
            out += stream[pos : pos + length]
            pos += length
        else:
            raise MalformedToken("unknown token tag 0x%02x" % tag)
        if len(out) > expected_len:
            raise LengthMismatch(
                "decoded %d bytes, expected %d" % (len(out), expected_len)
            )
    if len(out) != expected_len:
        raise LengthMismatch("decoded %d bytes, expected %d" % (len(out), expected_len))
    return bytes(out)


@dataclass(frozen=True)
class SnapshotRecord:
    """One framed capture of a module's linear memory."""

    session_id: bytes
    seq_no: int
    reason_code: int
    mem_size_bytes: int
    payload: bytes  # RLE stream

    def decode_memory(self) -> bytes:
        return rle_decode(self.payload, self.mem_size_bytes)


def record_from_memory(
    memory: bytes, session_id: bytes, seq_no: int, reason_code: int
) -> SnapshotRecord:
    if len(memory) % PAGE_SIZE != 0:
        raise ValueError("memory length must be a multiple of the 64 KiB page size")
    return SnapshotRecord(
        session_id=bytes(session_id),
        seq_no=seq_no,
        reason_code=reason_code,
        mem_size_bytes=len(memory),
        payload=rle_encode(memory),
    )


def frame_record(record: SnapshotRecord) -> bytes:
    if len(record.session_id) != 16:
        raise ValueError("session_id must be 16 bytes")
    if record.mem_size_bytes % PAGE_SIZE != 0:
        raise ValueError("mem_size_bytes must be a multiple of the 64 KiB page size")
    head = _HEADER.pack(
        MAGIC,
        VERSION,
        record.session_id,
        record.seq_no,
        record.reason_code,
        record.mem_size_bytes,
        len(record.payload),
    )
    body = head + record.payload
    return body + _CRC.pack(zlib.crc32(body))


def _parse_one(buf: bytes, pos: int) -> tuple[SnapshotRecord, bool, int]:
    if pos + _HEADER.size > len(buf):
        raise Truncated("record header truncated")
    magic, version, session, seq, reason, mem_size, plen = _HEADER.unpack_from(buf, pos)
    if magic != MAGIC:
        raise BadMagic("bad record magic %r" % magic)
    if version != VERSION:
        raise UnsupportedVersion("unsupported record version %d" % version)
    end = pos + _HEADER.size + plen
    if end + _CRC.size > len(buf):
        raise Truncated("record body truncated")
    payload = bytes(buf[pos + _HEADER.size : end])
    (crc,) = _CRC.unpack_from(buf, end)
    record = SnapshotRecord(session, seq, reason, mem_size, payload)
    ok = crc == zlib.crc32(buf[pos:end])
    return record, ok, end + _CRC.size


def parse_record(buf: bytes, pos: int = 0) -> tuple[SnapshotRecord, int]:
    record, ok, end = _parse_one(buf, pos)
    if not ok:
        raise ChecksumMismatch(record)
    return record, end


def iter_records(buf: bytes) -> Iterator[SnapshotRecord]:
    """Parse a whole ``.lmas`` stream; raises on any malformed record."""
    pos = 0
    while pos < len(buf):
        record, pos = parse_record(buf, pos)
        yield record


def iter_records_lenient(buf: bytes) -> Iterator[tuple[SnapshotRecord, bool]]:
    """Like ``iter_records`` but yields ``(record, checksum_ok)`` pairs.

    Framing errors other than a bad checksum still raise: a record whose
    length fields cannot be trusted leaves no resynchronization point.
    """
    pos = 0
    while pos < len(buf):
        record, ok, pos = _parse_one(buf, pos)
        yield record, ok


def read_records(path) -> list[SnapshotRecord]:
    with open(path, "rb") as fh:
        return list(iter_records(fh.read()))


class RecordAssembler:
    """Incremental record parser for socket ingestion.

    Buffers at most one partial record; ``feed`` returns every record
    completed by the new chunk, so memory use stays bounded by the largest
    single record.
    """

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, chunk: bytes) -> list[tuple[SnapshotRecord, bool]]:
        self._buf += chunk
        records = []
        pos = 0
        while True:
            try:
                record, ok, pos = _parse_one(self._buf, pos)
            except Truncated:
                break
            records.append((record, ok))
        del self._buf[:pos]
        return records

    def finish(self) -> None:
        """Raises ``Truncated`` if a partial record is left over."""
        if self._buf:
            raise Truncated("stream ended mid-record (%d trailing bytes)" % len(self._buf))
