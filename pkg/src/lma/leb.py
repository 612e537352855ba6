"""Unsigned/signed LEB128 varints, shared by the snapshot codec and the Wasm binary layer."""


class LebTruncated(ValueError):
    pass


class LebMalformed(ValueError):
    pass


def encode_u(value: int) -> bytes:
    if value < 0:
        raise ValueError("uvarint must be non-negative")
    out = bytearray()
    while True:
        b = value & 0x7F
        value >>= 7
        if value:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def decode_u(buf: bytes, pos: int, max_bits: int = 64) -> tuple[int, int]:
    """Decode an unsigned varint at ``pos``; returns (value, next_pos)."""
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise LebTruncated("truncated uvarint")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            if result >> max_bits:
                raise LebMalformed("uvarint exceeds %d bits" % max_bits)
            return result, pos
        shift += 7
        if shift >= max_bits + 7:
            raise LebMalformed("uvarint too long")


def encode_s(value: int) -> bytes:
    out = bytearray()
    while True:
        b = value & 0x7F
        value >>= 7
        # sign bit of b is the last bit carried into the next group
        if (value == 0 and not b & 0x40) or (value == -1 and b & 0x40):
            out.append(b)
            return bytes(out)
        out.append(b | 0x80)


def decode_s(buf: bytes, pos: int, max_bits: int = 64) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise LebTruncated("truncated varint")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        shift += 7
        if not b & 0x80:
            if b & 0x40:
                result |= -1 << shift
            if result >= 1 << (max_bits - 1) or result < -(1 << (max_bits - 1)):
                raise LebMalformed("varint exceeds %d bits" % max_bits)
            return result, pos
        if shift >= max_bits + 7:
            raise LebMalformed("varint too long")
