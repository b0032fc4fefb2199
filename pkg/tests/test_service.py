import base64

import pytest
from fastapi.testclient import TestClient

from tessera.service import ServiceState, create_app


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode()


@pytest.fixture(scope="module")
def client(tmp_path_factory):
    state = ServiceState(tmp_path_factory.mktemp("dev"))
    c = TestClient(create_app(state))
    assert c.post("/keygen", json={"bits": 2048}).status_code == 200
    return c


CERT = b"app-cert-v1"


@pytest.fixture(scope="module")
def image(client):
    pub = client.get("/device/public").json()["public_pem"]
    r = client.post("/pack", json={"plaintext_b64": b64(bytes(range(256)) * 30), "device_pub_pem": pub,
                                   "app_cert_b64": b64(CERT)})
    assert r.status_code == 200
    return r.json()["image_b64"]


def test_health_and_profiles(client):
    assert client.get("/health").json()["status"] == "ok"
    assert {p["name"] for p in client.get("/profiles").json()} == {"i9", "xavier", "orin"}


def test_keygen_refuses_overwrite(client):
    assert client.post("/keygen", json={"bits": 2048}).status_code == 409
    assert client.post("/keygen", json={"bits": 3072}).status_code == 422


def test_efuse_file_is_private(client):
    state = client.app.state.tessera
    assert state.efuse_path.stat().st_mode & 0o077 == 0


def test_inspect(client, image):
    h = client.post("/inspect", json={"image_b64": image}).json()
    assert h["plaintext_len"] == 7680 and h["ciphertext_lines"] == 120


def test_inspect_error_maps_exit_code(client):
    r = client.post("/inspect", json={"image_b64": b64(b"JUNKJUNK")})
    assert r.status_code == 422
    assert r.json()["error"] == "BadMagic" and r.json()["exit_code"] == 61


def test_stream_with_and_without_preemption(client, image):
    plain = client.post("/simulate/stream", json={"image_b64": image, "app_cert_b64": b64(CERT),
                                                  "tile_bytes": 1024}).json()
    cut = client.post("/simulate/stream", json={"image_b64": image, "app_cert_b64": b64(CERT),
                                                "tile_bytes": 1024, "preempt_after_lines": 21}).json()
    import hashlib

    expect = hashlib.sha256(bytes(range(256)) * 30).hexdigest()
    assert plain["output_sha256"] == cut["output_sha256"] == expect
    assert cut["preempt"]["sram_zeroed"] and cut["preempt"]["keys_cleared"]


def test_stream_wrong_app(client, image):
    r = client.post("/simulate/stream", json={"image_b64": image, "app_cert_b64": b64(b"evil")})
    assert r.json()["error"] == "AppBindingMismatch"


def test_jitter_endpoint(client):
    r = client.post("/simulate/jitter", json={"profile": "orin", "seeds": [1, 2], "n_requests": 2000}).json()
    assert len(r["stats"]) == 2 and r["csv"].startswith("profile,seed")


def test_custom_profile_document(client):
    doc = {"name": "lab", "t_ks_ns": 10, "t_dram_ns": 60, "bw_ceiling": 20e9, "sram_size": 1_000_000,
           "sram_bw": 500e9}
    r = client.post("/model", json={"profile": doc}).json()
    assert r["profile"] == "lab" and r["slack_ns"] == 50
    assert client.post("/model", json={"profile": {**doc, "bogus": 1}}).status_code == 422
    assert client.post("/model", json={"profile": "nope"}).status_code == 422


def test_model_endpoint(client):
    r = client.post("/model", json={"profile": "xavier"}).json()
    assert r["direct_pct"] == 72.0 and r["tessera_pct"] == 98.5
    assert set(r["tables"]) == {"preempt_latency", "throughput", "amplification", "energy_summary"}


def test_attack_endpoint(client):
    r = client.post("/attack", json={"scenario": "rogue_dma", "seed": 1}).json()
    assert r["ok"] and len(r["verdicts"]) == 2
    assert client.post("/attack", json={"scenario": "nope"}).status_code == 422
