from vertcohirf.transport.accounting import (
    RoundTranscript,
    account_bits,
    bit_reports,
    communication_bound,
)
from vertcohirf.transport.base import Endpoint, Network
from vertcohirf.transport.codec import decode_message, encode_message
from vertcohirf.transport.simulated import SimulatedNetwork
from vertcohirf.transport.tcp import TcpNetwork
from vertcohirf.transport.transcript import read_transcript, write_transcript

__all__ = [
    "Endpoint",
    "Network",
    "RoundTranscript",
    "SimulatedNetwork",
    "TcpNetwork",
    "account_bits",
    "bit_reports",
    "communication_bound",
    "decode_message",
    "encode_message",
    "read_transcript",
    "write_transcript",
]
