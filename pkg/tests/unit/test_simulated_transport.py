import threading

import pytest

from vertcohirf.core.errors import ProtocolInvariantError, TransportError
from vertcohirf.models.hierarchy import LabelVector
from vertcohirf.models.messages import Phase, ProtocolMessage
from vertcohirf.transport.codec import decode_message
from vertcohirf.transport.simulated import SimulatedNetwork


def labels(sender, round_=1, values=(0, 1)):
    return ProtocolMessage(sender, round_, Phase.LABELS, LabelVector(sender, values))


class TestSimulatedNetwork:
    """Test the in-process network"""

    def test_collect_returns_peers_in_sender_order(self):
        network = SimulatedNetwork(3)
        for sender in (2, 0, 1):
            network.endpoint(sender).broadcast(labels(sender))

        received = network.endpoint(1).collect(1, Phase.LABELS)
        assert [m.sender for m in received] == [0, 2]

    def test_collect_is_scoped_to_round_and_phase(self):
        network = SimulatedNetwork(2, collect_timeout=0.05)
        network.endpoint(0).broadcast(labels(0, round_=2))

        with pytest.raises(TransportError) as exc:
            network.endpoint(1).collect(1, Phase.LABELS)
        assert exc.value.round == 1
        assert exc.value.missing == (0,)

    def test_duplicate_broadcast(self):
        network = SimulatedNetwork(2)
        network.endpoint(0).broadcast(labels(0))
        with pytest.raises(ProtocolInvariantError, match="twice"):
            network.endpoint(0).broadcast(labels(0))

    def test_cannot_send_as_another_agent(self):
        network = SimulatedNetwork(2)
        with pytest.raises(ProtocolInvariantError):
            network.endpoint(0).broadcast(labels(1))

    def test_unknown_agent(self):
        with pytest.raises(ValueError):
            SimulatedNetwork(2).endpoint(2)

    def test_blocked_collect_wakes_on_delivery(self):
        network = SimulatedNetwork(2, collect_timeout=5.0)
        results = []
        worker = threading.Thread(
            target=lambda: results.extend(network.endpoint(1).collect(1, Phase.LABELS))
        )
        worker.start()
        network.endpoint(0).broadcast(labels(0))
        worker.join(timeout=5.0)

        assert not worker.is_alive()
        assert [m.sender for m in results] == [0]

    def test_close_aborts_waiting_collect(self):
        network = SimulatedNetwork(2, collect_timeout=5.0)
        errors = []

        def wait_for_labels():
            try:
                network.endpoint(1).collect(1, Phase.LABELS)
            except TransportError as e:
                errors.append(e)

        worker = threading.Thread(target=wait_for_labels)
        worker.start()
        network.close()
        worker.join(timeout=5.0)
        assert len(errors) == 1

    def test_transcript_and_received_frames(self):
        with SimulatedNetwork(3) as network:
            network.endpoint(1).broadcast(labels(1))
            network.endpoint(0).broadcast(labels(0))

            keys = [decode_message(f).key for f in network.transcript()]
            assert keys == [(1, 1, 0), (1, 1, 1)]
            assert [decode_message(f).sender for f in network.received_by(0)] == [1]
            assert len(network.received_by(2)) == 2
