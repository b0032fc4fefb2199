import json

import pytest

from tessera.cli import main


@pytest.fixture
def run(tmp_path, capsys):
    dev = str(tmp_path / "device")

    def _run(*argv):
        code = main(["--device-dir", dev, *argv])
        out = capsys.readouterr()
        return code, out.out, out.err

    return _run


def test_model_json(run):
    code, out, _ = run("model", "--profile", "xavier", "--json")
    assert code == 0
    assert json.loads(out)["direct_pct"] == 72.0


def test_model_tables_out(run, tmp_path):
    code, _, _ = run("model", "--out", str(tmp_path / "tables"))
    assert code == 0
    assert (tmp_path / "tables" / "throughput.csv").exists()


def test_jitter_deterministic(run, tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    assert run("simulate", "jitter", "--n", "5000", "--seed", "3", "--out", str(a))[0] == 0
    assert run("simulate", "jitter", "--n", "5000", "--seed", "3", "--out", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_attack_all_exit_zero(run):
    code, out, _ = run("attack", "all")
    assert code == 0 and "all defended" in out


def test_flagship_end_to_end(run, tmp_path):
    weights = tmp_path / "w.bin"
    weights.write_bytes(bytes(range(256)) * 64 + b"odd tail")
    cert = tmp_path / "app.pem"
    cert.write_bytes(b"cert")
    assert run("keygen")[0] == 0
    assert run("keygen")[0] == 2  # already fused
    img = tmp_path / "w.tsra"
    assert run("pack", str(weights), "--app-cert", str(cert), "--out", str(img))[0] == 0
    code, out, _ = run("inspect", str(img), "--json")
    assert code == 0 and json.loads(out)["plaintext_len"] == 16392
    trace = tmp_path / "trace.jsonl"
    code, out, _ = run("simulate", "stream", str(img), "--app-cert", str(cert), "--tile-bytes", "2048",
                       "--preempt-after", "40", "--json", "--out", str(trace))
    doc = json.loads(out)
    import hashlib

    assert code == 0 and doc["output_sha256"] == hashlib.sha256(weights.read_bytes()).hexdigest()
    assert '"Scrubbed"' in trace.read_text()


def test_error_exit_codes(run, tmp_path):
    bad = tmp_path / "bad.tsra"
    bad.write_bytes(b"XXXX" + bytes(100))
    code, _, err = run("inspect", str(bad))
    assert code == 61 and "BadMagic" in err
    code, _, _ = run("inspect", str(tmp_path / "missing"))
    assert code == 2


def test_wrong_app_exit_code(run, tmp_path):
    (tmp_path / "w").write_bytes(b"x" * 200)
    (tmp_path / "c").write_bytes(b"c")
    (tmp_path / "evil").write_bytes(b"e")
    run("keygen")
    run("pack", str(tmp_path / "w"), "--app-cert", str(tmp_path / "c"), "--out", str(tmp_path / "w.tsra"))
    code, _, _ = run("simulate", "stream", str(tmp_path / "w.tsra"), "--app-cert", str(tmp_path / "evil"))
    assert code == 22


def test_unreachable_service(run):
    code, _, _ = run("--url", "http://127.0.0.1:9", "model")
    assert code == 3
