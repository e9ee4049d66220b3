import threading
from pathlib import Path

import numpy as np
import pytest

from vlaforge import mpack, wire
from vlaforge.client import Client
from vlaforge.core import Observation, canonical_observation
from vlaforge.errors import ServerError, TransportError
from vlaforge.policy import PolicyConfig, policy_predict_action, registry_compose
from vlaforge.server import resolve_port

from wshelpers import ServerThread

FIXTURES = Path(__file__).parent / "fixtures"


def tiny_policy(head="oft", **kw):
    return registry_compose(
        PolicyConfig(backbone_id="vlm", head_id=head, k=4, d=16, hidden=16, seed=2,
                     denoise_steps=3, fast_alphabet=64, fast_gamma=0.2,
                     fast_token_dim=8, **kw)
    )


def test_health_and_info():
    with ServerThread(tiny_policy()) as srv, Client(srv.addr) as client:
        assert client.health() == {"ok": True}
        info = client.info()
        assert info["head_id"] == "oft" and info["k"] == 4 and info["dims"] == 32


def test_predict_contract_shape():
    with ServerThread(tiny_policy()) as srv, Client(srv.addr) as client:
        chunk = client.predict(canonical_observation(), seed=3)
        assert chunk.values.shape == (4, 32)
        assert chunk.normalized
        assert np.all(chunk.values >= -1) and np.all(chunk.values <= 1)


def test_malformed_frame_then_connection_still_usable():
    with ServerThread(tiny_policy()) as srv, Client(srv.addr) as client:
        ws = client._conn()
        ws.send(b"\xc1\x00\xff")  # 0xc1 is the one unused msgpack type byte
        doc = wire.decode_response(ws.recv(timeout=10))
        assert doc["status"] == "error"
        assert doc["body"]["code"] == "bad_request"
        # same connection keeps working
        assert client.health() == {"ok": True}


def test_missing_image_field():
    with ServerThread(tiny_policy()) as srv, Client(srv.addr) as client:
        ws = client._conn()
        ws.send(wire.encode_request("predict", "r1", {"lang": "hello"}))
        doc = wire.decode_response(ws.recv(timeout=10))
        assert doc["status"] == "error"
        assert doc["body"]["code"] == "missing_field:image"
        assert doc["request_id"] == "r1"


def test_missing_lang_and_bad_image():
    obs = canonical_observation()
    with ServerThread(tiny_policy()) as srv, Client(srv.addr) as client:
        ws = client._conn()
        ws.send(wire.encode_request(
            "predict", "r2", {"image": wire.encode_image_map(obs.views)}))
        assert wire.decode_response(ws.recv(timeout=10))["body"]["code"] == "missing_field:lang"
        ws.send(wire.encode_request(
            "predict", "r3",
            {"image": {"main": {"h": 4, "w": 4, "rgb": b"\x00" * 5}}, "lang": "x"}))
        assert wire.decode_response(ws.recv(timeout=10))["body"]["code"] == "bad_image"


def test_unknown_kind():
    with ServerThread(tiny_policy()) as srv, Client(srv.addr) as client:
        ws = client._conn()
        ws.send(wire.encode_request("reset", "r9", {}))
        assert wire.decode_response(ws.recv(timeout=10))["body"]["code"] == "bad_request"


def test_unknown_payload_keys_ignored():
    obs = canonical_observation()
    payload = wire.predict_payload(obs, 0)
    payload["timestamp"] = 123.0
    payload["episode"] = {"id": "x"}
    with ServerThread(tiny_policy()) as srv, Client(srv.addr) as client:
        ws = client._conn()
        ws.send(wire.encode_request("predict", "r4", payload))
        doc = wire.decode_response(ws.recv(timeout=10))
        assert doc["status"] == "ok"


def test_client_error_envelope_raises_typed():
    with ServerThread(tiny_policy()) as srv, Client(srv.addr) as client:
        obs = Observation(views={}, instruction="x")
        with pytest.raises(ServerError) as e:
            client.predict(obs, 0)
        assert e.value.code == "bad_image"


def test_fixed_observation_byte_identical_100_calls():
    obs = canonical_observation()
    data = wire.encode_predict_request("fixed", obs, 5)
    with ServerThread(tiny_policy(head="pi")) as srv, Client(srv.addr) as client:
        ws = client._conn()
        responses = set()
        for _ in range(100):
            ws.send(data)
            doc = mpack.unpackb(ws.recv(timeout=10))
            doc["body"]["server_ms"] = 0.0  # timing is the only varying field
            responses.add(mpack.packb(doc))
        assert len(responses) == 1


@pytest.mark.parametrize("head", ["fast", "oft", "pi", "groot"])
def test_loopback_parity_with_in_process(head):
    policy = tiny_policy(head=head)
    obs = canonical_observation()
    expected = {}
    for seed in (0, 1, 2):
        expected[seed] = policy_predict_action(policy, obs, seed)["normalized_actions"]
    fresh = tiny_policy(head=head)
    with ServerThread(fresh) as srv, Client(srv.addr) as client:
        for seed in (0, 1, 2):
            got = client.predict(obs, seed)
            assert np.array_equal(got.values, expected[seed].values)  # bit-exact


def test_concurrent_clients_get_matching_request_ids():
    policy = tiny_policy()
    obs = canonical_observation()
    with ServerThread(policy) as srv:
        results = {}
        errors = []

        def worker(idx):
            try:
                with Client(srv.addr) as client:
                    vals = [client.predict(obs, seed=idx).values for _ in range(5)]
                    for v in vals[1:]:
                        assert np.array_equal(v, vals[0])
                    results[idx] = vals[0]
            except Exception as e:  # propagate to the main thread
                errors.append(e)

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(16)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=60)
        assert not errors
        assert len(results) == 16


def test_server_stopped_mid_session_transport_error():
    policy = tiny_policy()
    srv = ServerThread(policy)
    with srv:
        client = Client(srv.addr, retries=2, timeout=2)
        client.health()
    # server is now gone; next call must fail after retries
    with pytest.raises(TransportError):
        client.predict(canonical_observation(), 0)
    client.close()


def test_golden_request_bytes_regression():
    committed = (FIXTURES / "golden_request.bin").read_bytes()
    fresh = wire.encode_predict_request("golden-1", canonical_observation(), 7)
    assert fresh == committed


def test_golden_response_decodes_to_expected_array():
    doc = wire.decode_response((FIXTURES / "golden_response.bin").read_bytes())
    chunk = wire.chunk_from_response(doc)
    expected = np.array([[r + c / 128.0 for c in range(32)] for r in range(2)])
    assert np.array_equal(chunk.values, expected)
    assert doc["body"]["server_ms"] == 1.5


def test_resolve_port_priority(monkeypatch):
    monkeypatch.delenv("VLAFORGE_PORT", raising=False)
    assert resolve_port(8765) == 8765
    monkeypatch.setenv("VLAFORGE_PORT", "9100")
    assert resolve_port(8765) == 9100
    assert resolve_port(8765, flag_port=7000) == 7000
