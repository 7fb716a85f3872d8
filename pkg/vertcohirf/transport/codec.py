"""
Binary wire format of protocol messages.

Header (16 bytes): magic b"VCHR", version u8, phase u8, sender u16,
round u32, payload length u32. Every integer after the magic is
little-endian. Payloads carry identifiers and labels only.

    LABELS   count u32, then count labels u32
    MEDLISTS cluster count u32, then per cluster:
             code length u8, code components u32,
             candidate count u16, candidates u32
"""

import struct
from typing import List, Tuple

from vertcohirf.core.errors import DecodeError
from vertcohirf.models.hierarchy import LabelVector
from vertcohirf.models.messages import Phase, ProtocolMessage, RankedList

MAGIC = b"VCHR"
VERSION = 1

_HEADER = struct.Struct("<4sBBHII")
_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_FRAME_PREFIX = _U32

HEADER_SIZE = _HEADER.size


def encode_message(msg: ProtocolMessage) -> bytes:
    if msg.phase is Phase.LABELS:
        payload = _encode_labels(msg.labels)
    else:
        payload = _encode_medlists(msg.ranked_lists)
    header = _HEADER.pack(MAGIC, VERSION, int(msg.phase), msg.sender, msg.round, len(payload))
    return header + payload


def _encode_labels(vector: LabelVector) -> bytes:
    values = vector.labels
    return _U32.pack(len(values)) + struct.pack(f"<{len(values)}I", *values)


def _encode_medlists(lists: Tuple[RankedList, ...]) -> bytes:
    parts = [_U32.pack(len(lists))]
    for ranked in lists:
        code = ranked.cluster_key
        candidates = ranked.candidates
        if len(code) > 0xFF:
            raise ValueError(f"cluster code of length {len(code)} does not fit in u8")
        if len(candidates) > 0xFFFF:
            raise ValueError(f"{len(candidates)} candidates do not fit in u16")
        parts.append(_U8.pack(len(code)))
        parts.append(struct.pack(f"<{len(code)}I", *code))
        parts.append(_U16.pack(len(candidates)))
        parts.append(struct.pack(f"<{len(candidates)}I", *candidates))
    return b"".join(parts)


class _Reader:
    """Cursor over a byte string that reports offsets on truncation"""

    def __init__(self, data: bytes, offset: int = 0, end: int = -1):
        self.data = data
        self.offset = offset
        self.end = len(data) if end < 0 else end

    def take(self, fmt: struct.Struct) -> Tuple:
        if self.offset + fmt.size > self.end:
            raise DecodeError("truncated message", self.offset)
        values = fmt.unpack_from(self.data, self.offset)
        self.offset += fmt.size
        return values

    def take_u32s(self, count: int) -> Tuple[int, ...]:
        size = 4 * count
        if self.offset + size > self.end:
            raise DecodeError("truncated message", self.offset)
        values = struct.unpack_from(f"<{count}I", self.data, self.offset)
        self.offset += size
        return values


def decode_message(data: bytes) -> ProtocolMessage:
    reader = _Reader(data)
    magic, version, phase_code, sender, round_, length = reader.take(_HEADER)
    if magic != MAGIC:
        raise DecodeError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise DecodeError(f"unsupported version {version}", 4)
    try:
        phase = Phase(phase_code)
    except ValueError:
        raise DecodeError(f"unknown phase {phase_code}", 5) from None
    if HEADER_SIZE + length > len(data):
        raise DecodeError(
            f"payload length {length} exceeds the {len(data) - HEADER_SIZE} bytes available",
            HEADER_SIZE,
        )

    reader.end = HEADER_SIZE + length
    if phase is Phase.LABELS:
        (count,) = reader.take(_U32)
        payload = LabelVector(agent=sender, labels=reader.take_u32s(count))
    else:
        (n_clusters,) = reader.take(_U32)
        lists: List[RankedList] = []
        for _ in range(n_clusters):
            (code_len,) = reader.take(_U8)
            code = reader.take_u32s(code_len)
            (n_candidates,) = reader.take(_U16)
            candidates = reader.take_u32s(n_candidates)
            start = reader.offset
            try:
                lists.append(RankedList(cluster_key=code, candidates=candidates))
            except ValueError as e:
                raise DecodeError(str(e), start) from None
        payload = tuple(lists)

    if reader.offset != len(data):
        raise DecodeError("trailing bytes after payload", reader.offset)
    return ProtocolMessage(sender=sender, round=round_, phase=phase, payload=payload)


def frame(data: bytes) -> bytes:
    """Prefix an encoded message with its u32 length"""
    return _FRAME_PREFIX.pack(len(data)) + data


def split_frames(data: bytes) -> List[bytes]:
    """Inverse of concatenated frame() calls"""
    frames = []
    offset = 0
    while offset < len(data):
        if offset + _FRAME_PREFIX.size > len(data):
            raise DecodeError("truncated frame length", offset)
        (length,) = _FRAME_PREFIX.unpack_from(data, offset)
        offset += _FRAME_PREFIX.size
        if offset + length > len(data):
            raise DecodeError(f"frame of {length} bytes is truncated", offset)
        frames.append(data[offset:offset + length])
        offset += length
    return frames
