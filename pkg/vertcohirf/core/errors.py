"""Exception hierarchy shared by every module."""

from typing import Iterable, Optional


class VertCoHiRFError(Exception):
    """Base class for all errors raised by this package"""


class ProtocolInvariantError(VertCoHiRFError):
    """A protocol invariant was violated (bad medoid sets, duplicate broadcasts, ...)"""


class ProtocolDesyncError(ProtocolInvariantError):
    """Agents disagree on the state they should share at a round boundary"""


class CorruptionError(VertCoHiRFError):
    """Parent pointers or fusion logs are inconsistent"""


class AccountingError(VertCoHiRFError):
    """A round transcript is incomplete and cannot be accounted"""


class ConfigError(VertCoHiRFError):
    """Invalid experiment configuration"""


class TransportError(VertCoHiRFError):
    """Message delivery failed"""

    def __init__(
        self,
        message: str,
        round: Optional[int] = None,
        peer: Optional[int] = None,
        missing: Iterable[int] = (),
    ):
        self.round = round
        self.peer = peer
        self.missing = tuple(sorted(missing))
        details = []
        if round is not None:
            details.append(f"round={round}")
        if peer is not None:
            details.append(f"peer={peer}")
        if self.missing:
            details.append(f"missing={list(self.missing)}")
        suffix = f" ({', '.join(details)})" if details else ""
        super().__init__(f"{message}{suffix}")


class DecodeError(VertCoHiRFError):
    """A frame could not be decoded"""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} at byte offset {offset}")


class DatasetError(VertCoHiRFError):
    """A dataset file could not be parsed"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")
