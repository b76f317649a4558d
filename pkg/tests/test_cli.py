import hashlib
import json
import shutil

import pytest

from conftest import FAST_TOML
from nqc import cli


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    base = tmp_path_factory.mktemp("sim")
    (base / "fast.toml").write_text(FAST_TOML)
    assert cli.main(["simulate", "--config", str(base / "fast.toml"), "--out", str(base / "out")]) == 0
    return base


@pytest.fixture
def work(simulated, tmp_path, monkeypatch):
    """Fresh copy of a simulated network; returns a runner for CLI calls."""
    shutil.copytree(simulated, tmp_path, dirs_exist_ok=True)
    monkeypatch.chdir(tmp_path)

    def nqc(*args):
        return cli.main([*args, "--config", "fast.toml", "--out", "out"])
    return nqc


def _json(capsys):
    return json.loads(capsys.readouterr().out)


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["--help"])
    assert e.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("simulate", "pairkey", "groupkey", "sign", "verify", "proxy", "replay", "export-table"):
        assert cmd in out


def test_simulate_writes_reports_and_stores(simulated):
    out = simulated / "out"
    for name in ("hub.nqck", "client-1.nqck", "client-2.nqck", "client-3.nqck", "reports.csv", "reports.json"):
        assert (out / name).exists()
    rows = json.loads((out / "reports.json").read_text())
    assert [r["client_id"] for r in rows] == [1, 2, 3] and all(r["stored_bits"] > 0 for r in rows)
    assert "wall_time" not in rows[0]


def test_pairkey_publish_and_derive_agree(work, capsys):
    assert work("pairkey", "publish", "--from", "1", "--to", "2", "--json") == 0
    pub = _json(capsys)
    assert pub["table"] == "pairkeys.nqcp" and pub["records"][0]["from"] == 1
    assert work("pairkey", "derive", "--client", "1", "--json") == 0
    a = _json(capsys)["keys"][0]
    assert work("pairkey", "derive", "--client", "2", "--json") == 0
    b = _json(capsys)["keys"][0]
    assert (a["role"], b["role"]) == ("derive", "receive")
    assert a["key_sha256"] == b["key_sha256"]
    # second derive on the same table: L and M are spent
    assert work("pairkey", "derive", "--client", "1") == 3


def test_tampered_table_with_fixed_trailer_is_a_confirmation_failure(work, capsys):
    assert work("pairkey", "publish", "--from", "1", "--to", "2") == 0
    data = bytearray(open("out/pairkeys.nqcp", "rb").read())
    body = data[:-32]
    body[10 + 16] ^= 1
    open("out/pairkeys.nqcp", "wb").write(bytes(body) + hashlib.sha256(bytes(body)).digest())
    capsys.readouterr()
    assert work("pairkey", "derive", "--client", "1") == 3
    assert "confirmation failure" in capsys.readouterr().err


def test_corrupt_trailer_is_a_protocol_failure(work, capsys):
    assert work("pairkey", "publish", "--from", "1", "--to", "2") == 0
    data = bytearray(open("out/pairkeys.nqcp", "rb").read())
    data[-1] ^= 1
    open("out/pairkeys.nqcp", "wb").write(bytes(data))
    assert work("pairkey", "derive", "--client", "1") == 3
    assert "integrity hash mismatch" in capsys.readouterr().err


def test_exhaustion_exit_code(work, capsys):
    # each client holds four triples; the fifth publication runs out
    assert work("pairkey", "publish", "--from", "1", "--to", "2", "--count", "4") == 0
    assert work("pairkey", "publish", "--from", "1", "--to", "2") == 4
    assert "key exhausted" in capsys.readouterr().err


def test_configuration_errors(work, tmp_path, capsys):
    assert cli.main(["simulate", "--config", str(tmp_path / "nope.toml")]) == 2
    assert work("pairkey", "publish", "--from", "1") == 2
    assert work("pairkey", "publish", "--from", "1", "--to", "9") == 2
    assert cli.main(["pairkey", "derive", "--client", "1", "--config", "fast.toml", "--out", "empty"]) == 2
    assert cli.main(["proxy", "serve", "--from", "1", "--to", "2"]) == 2
    assert "required" in capsys.readouterr().err


def test_group_key_sign_verify(work, capsys):
    assert work("groupkey", "publish", "--members", "1,2,3", "--json") == 0
    assert _json(capsys)["table"] == "groupkeys.nqcp"
    digests = set()
    for c in (1, 2, 3):
        assert work("groupkey", "derive", "--client", str(c), "--json") == 0
        digests.add(_json(capsys)["keys"][0]["key_sha256"])
    assert len(digests) == 1

    open("msg.txt", "wb").write(b"open breaker 7")
    assert work("sign", "--client", "1", "--message", "msg.txt", "--json") == 0
    assert _json(capsys)["key_id"] == 1 << 32
    assert work("verify", "--client", "2", "--signer", "1", "--message", "msg.txt", "--json") == 0
    assert _json(capsys)["accepted"] is True
    # the hub released that K once; a second verification is refused
    assert work("verify", "--client", "3", "--message", "msg.txt") == 3


def test_forged_message_rejected(work, capsys):
    open("msg.txt", "wb").write(b"open breaker 7")
    assert work("sign", "--client", "1", "--message", "msg.txt") == 0
    open("msg.txt", "wb").write(b"open breaker 8")
    assert work("verify", "--client", "2", "--message", "msg.txt") == 3
    assert "root mismatch" in capsys.readouterr().err
    assert work("verify", "--client", "3", "--signer", "2", "--message", "msg.txt") == 3


def test_proxy_loopback_json(work, capsys):
    assert work("pairkey", "publish", "--from", "1", "--to", "2", "--count", "2") == 0
    capsys.readouterr()
    assert work("proxy", "loopback", "--from", "1", "--to", "2", "--duration", "3", "--rekey-frames", "50",
                "--json") == 0
    out = _json(capsys)
    assert out["frames"] == 90 and out["identical"] is True
    assert out["epochs"] == [0, 1] and out["tag_failures"] == 0 and "latency_us" not in out
    assert out["source_sha256"] == out["delivered_sha256"]


def test_proxy_loopback_runs_dry(work, capsys):
    assert work("pairkey", "publish", "--from", "1", "--to", "2") == 0
    capsys.readouterr()
    assert work("proxy", "loopback", "--from", "1", "--to", "2", "--duration", "3", "--rekey-frames", "50",
                "--json") == 4
    out = _json(capsys)
    assert out["identical"] is False and out["dropped_no_key"] == 40
    assert work("proxy", "loopback", "--from", "2", "--to", "3") == 4


def test_export_import_table(work, capsys):
    assert work("export-table", "--json") == 0
    assert _json(capsys)["records"] == 6
    assert work("import-table", "--json") == 0
    recs = _json(capsys)["records"]
    assert {(r["from"], r["to"]) for r in recs} == {(1, 2), (1, 3), (2, 1), (2, 3), (3, 1), (3, 2)}


def test_trace_and_replay(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "tiny.toml").write_text(FAST_TOML.replace("pulses_per_client = 4000000",
                                                          "pulses_per_client = 300000"))
    assert cli.main(["simulate", "--config", "tiny.toml", "--trace-dir", "traces", "--out", "o"]) == 0
    capsys.readouterr()
    assert cli.main(["replay", "--config", "tiny.toml", "--trace", "traces/trace-c1-e0-r0.nqct",
                     "--client", "1", "--json"]) == 0
    row = _json(capsys)
    assert row["pulses"] == 300000 and row["session_id"] == "trace-c1-e0-r0.nqct"
    (tmp_path / "bad.nqct").write_bytes(b"NQCT\x01")
    assert cli.main(["replay", "--config", "tiny.toml", "--trace", "bad.nqct", "--client", "1"]) == 2
