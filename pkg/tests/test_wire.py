import socket
import struct
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emas.core import EmasParams
from emas.islands import (DeliveryFailure, Island, MigrationEnvelope, deliver,
                          envelope_for)
from emas.wire import (TcpTransport, WireError, encode_frame, encode_hello,
                       encode_migrate, float_to_hex, hex_to_float,
                       parse_hello, parse_migrate, read_frame)

from conftest import agent_with


finite_doubles = st.floats(allow_nan=False, allow_infinity=False)


class TestFloatHex:
    @given(finite_doubles)
    @settings(max_examples=300)
    def test_roundtrip_bit_exact(self, value):
        text = float_to_hex(value)
        assert len(text) == 16
        assert text == text.lower()
        back = hex_to_float(text)
        assert struct.pack(">d", back) == struct.pack(">d", value)

    def test_negative_zero_distinct(self):
        assert float_to_hex(-0.0) != float_to_hex(0.0)
        assert struct.pack(">d", hex_to_float(float_to_hex(-0.0))) == \
            struct.pack(">d", -0.0)

    def test_bad_length_rejected(self):
        with pytest.raises(WireError):
            hex_to_float("abc")

    def test_bad_digits_rejected(self):
        with pytest.raises(WireError):
            hex_to_float("zz" * 8)


class TestMigratePayload:
    def test_roundtrip(self):
        env = MigrationEnvelope(12345, 7, np.array([1.5, -2.25, 1e-300]),
                                -3.125, 0, 2)
        payload = encode_migrate(env)
        back = parse_migrate(payload, source=0, destination=2)
        assert back.agent_id == 12345
        assert back.energy == 7
        assert np.array_equal(back.values, env.values)
        assert back.cached_fitness == env.cached_fitness

    @given(st.integers(min_value=0, max_value=2**62),
           st.integers(min_value=0, max_value=10**6),
           st.lists(finite_doubles, min_size=1, max_size=32),
           finite_doubles)
    @settings(max_examples=100)
    def test_roundtrip_property(self, agent_id, energy, values, fit):
        env = MigrationEnvelope(agent_id, energy, np.array(values), fit, 1, 3)
        back = parse_migrate(encode_migrate(env), 1, 3)
        assert back.agent_id == agent_id and back.energy == energy
        assert back.values.tobytes() == env.values.tobytes()
        assert struct.pack(">d", back.cached_fitness) == \
            struct.pack(">d", fit)

    def test_wrong_field_count(self):
        with pytest.raises(WireError):
            parse_migrate("MIGRATE 1 5 3 " + float_to_hex(0.0), 0, 1)

    def test_negative_energy_rejected(self):
        payload = f"MIGRATE 1 -5 1 {float_to_hex(0.0)} {float_to_hex(0.0)}"
        with pytest.raises(WireError):
            parse_migrate(payload, 0, 1)

    def test_hello_roundtrip(self):
        assert parse_hello(encode_hello(42)) == 42


class TestFrames:
    def test_roundtrip_over_socketpair(self):
        a, b = socket.socketpair()
        try:
            a.sendall(encode_frame("HELLO 3"))
            a.sendall(encode_frame("BYE"))
            assert read_frame(b) == "HELLO 3"
            assert read_frame(b) == "BYE"
            a.close()
            assert read_frame(b) is None  # orderly EOF
        finally:
            b.close()

    def test_truncated_frame_is_error(self):
        a, b = socket.socketpair()
        try:
            frame = encode_frame("MIGRATE 1")
            a.sendall(frame[:7])
            a.close()
            with pytest.raises(WireError):
                read_frame(b)
        finally:
            b.close()

    def test_oversized_frame_rejected(self):
        a, b = socket.socketpair()
        try:
            a.sendall(struct.pack(">I", 1 << 30))
            with pytest.raises(WireError):
                read_frame(b)
        finally:
            a.close()
            b.close()


def _mk_transport(island_id, peers=None):
    return TcpTransport(island_id, ("127.0.0.1", 0), peers or {})


def _wait_for(predicate, timeout_s=5.0):
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(0.01)
    return False


class TestTcpTransport:
    def test_end_to_end_delivery(self):
        receiver = _mk_transport(1)
        sender = _mk_transport(0, {1: ("127.0.0.1", receiver.port)})
        try:
            env = MigrationEnvelope(77, 9, np.array([0.5, -0.5]), -1.0, 0, 1)
            sender.send(env)
            assert _wait_for(lambda: len(receiver._inbox) > 0)
            got = receiver.drain_inbox()
            assert len(got) == 1
            back = got[0]
            assert back.agent_id == 77 and back.energy == 9
            assert np.array_equal(back.values, env.values)
        finally:
            sender.close()
            receiver.close()

    def test_unknown_peer_raises_delivery_failure(self):
        sender = _mk_transport(0)
        try:
            env = MigrationEnvelope(1, 2, np.zeros(1), 0.0, 0, 9)
            with pytest.raises(DeliveryFailure):
                sender.send(env)
        finally:
            sender.close()

    def test_dead_peer_returns_agent_to_source(self):
        # reserve a port, then close it so the connection fails
        probe = socket.create_server(("127.0.0.1", 0))
        dead_port = probe.getsockname()[1]
        probe.close()
        sender = _mk_transport(0, {1: ("127.0.0.1", dead_port)})
        params = EmasParams(problem_size=2)
        try:
            from conftest import linear_objective
            from emas.sync_engine import SyncEngine
            engine = SyncEngine(params, linear_objective(2), seed=0, island=0)
            island = Island(0, (1,), engine)
            agent = agent_with(4.0, 6, 55, dimension=2)
            env = envelope_for(agent, 0, 1)
            assert not deliver(env, sender, island)
            assert [a.id for a in engine.population] == [55]
            assert engine.population[0].en == 6
        finally:
            sender.close()

    def test_unknown_verb_closes_connection(self):
        receiver = _mk_transport(1)
        try:
            conn = socket.create_connection(("127.0.0.1", receiver.port))
            conn.sendall(encode_frame("HELLO 0"))
            conn.sendall(encode_frame("FROBNICATE 12"))
            # the receiver closes on the protocol error: the next read EOFs
            conn.settimeout(5.0)
            assert conn.recv(1) == b""
            conn.close()
        finally:
            receiver.close()

    def test_bye_shuts_down_cleanly(self):
        receiver = _mk_transport(1)
        sender = _mk_transport(0, {1: ("127.0.0.1", receiver.port)})
        try:
            sender.send(MigrationEnvelope(5, 1, np.zeros(1), 0.0, 0, 1))
            sender.close()  # sends BYE
            assert _wait_for(lambda: len(receiver._inbox) == 1)
        finally:
            receiver.close()
