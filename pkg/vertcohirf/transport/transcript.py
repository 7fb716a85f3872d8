"""Binary transcript dumps: u32 little-endian length-prefixed frames in canonical order."""

import os
import struct
from typing import Iterable, List, Tuple

from vertcohirf.core.errors import DecodeError
from vertcohirf.transport.codec import HEADER_SIZE, MAGIC, frame, split_frames

_KEY = struct.Struct("<4sBBHI")


def message_key(data: bytes) -> Tuple[int, int, int]:
    """(round, phase, sender) of an encoded message, read from its header"""
    if len(data) < HEADER_SIZE:
        raise DecodeError("truncated message header", len(data))
    magic, _version, phase, sender, round_ = _KEY.unpack_from(data, 0)
    if magic != MAGIC:
        raise DecodeError(f"bad magic {magic!r}", 0)
    return (round_, phase, sender)


def canonical_order(frames: Iterable[bytes]) -> List[bytes]:
    return sorted(frames, key=message_key)


def write_transcript(path: str, frames: Iterable[bytes]) -> str:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        for data in canonical_order(frames):
            f.write(frame(data))
    return path


def read_transcript(path: str) -> List[bytes]:
    with open(path, "rb") as f:
        return split_frames(f.read())
