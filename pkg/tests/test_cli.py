"""CLI commands, exit codes, daemon lifecycle, two-node convergence."""

import os
import signal
import subprocess
import sys
import time

import pytest

from oppweb.apps import build_board_fixture
from oppweb.cli import EXIT_CONFIG, EXIT_NETWORK, EXIT_OK, EXIT_VALIDATION, main
from oppweb.config import NodeConfig, load_config, ConfigError
from oppweb.keys import Identity
from oppweb.message import decode, encode_canonical
from oppweb.node import Node
from oppweb.store import CacheStore

IDENT = Identity.from_private_bytes(b"\x11" * 32)


def test_key_gen_and_publish(tmp_path, capsys):
    data = str(tmp_path / "n1")
    assert main(["key", "gen", "--data-dir", data]) == EXIT_OK
    out = capsys.readouterr().out
    assert "identity" in out
    assert os.path.isfile(os.path.join(data, "identity.key"))
    # refuses to clobber without --force
    assert main(["key", "gen", "--data-dir", data]) == EXIT_CONFIG
    assert main(["key", "gen", "--data-dir", data, "--force"]) == EXIT_OK
    assert main(["key", "publish", "--data-dir", data]) == EXIT_OK
    out = capsys.readouterr().out
    assert "new:" in out
    store = CacheStore.recover(os.path.join(data, "cache"), now=int(time.time()))
    assert store.services() == {"keys": 1}


def test_inject_then_inspect_roundtrip(tmp_path, capsys):
    data = str(tmp_path / "n1")
    msg = build_board_fixture(IDENT, int(time.time()), ttl_seconds=10**6)[0]
    msg_file = tmp_path / "m.owm"
    msg_file.write_bytes(encode_canonical(msg))
    assert main(["msg", "inject", str(msg_file), "--data-dir", data]) == EXIT_OK
    out = capsys.readouterr().out
    assert f"new: {msg.id}" in out
    assert main(["msg", "inspect", msg.id, "--data-dir", data]) == EXIT_OK
    text = capsys.readouterr().out
    assert msg.id in text and '"service": "board"' in text
    # inspecting the file directly gives the same identity
    assert main(["msg", "inspect", str(msg_file)]) == EXIT_OK
    assert msg.id in capsys.readouterr().out


def test_inject_duplicate_and_garbage(tmp_path, capsys):
    data = str(tmp_path / "n1")
    msg = build_board_fixture(IDENT, int(time.time()), ttl_seconds=10**6)[0]
    msg_file = tmp_path / "m.owm"
    msg_file.write_bytes(encode_canonical(msg))
    assert main(["msg", "inject", str(msg_file), "--data-dir", data]) == EXIT_OK
    assert main(["msg", "inject", str(msg_file), "--data-dir", data]) == EXIT_OK
    assert "duplicate" in capsys.readouterr().out
    bad = tmp_path / "bad.owm"
    bad.write_bytes(b"not a message")
    assert main(["msg", "inject", str(bad), "--data-dir", data]) == EXIT_VALIDATION


def test_msg_remove(tmp_path, capsys):
    data = str(tmp_path / "n1")
    msg = build_board_fixture(IDENT, int(time.time()), ttl_seconds=10**6)[0]
    msg_file = tmp_path / "m.owm"
    msg_file.write_bytes(encode_canonical(msg))
    main(["msg", "inject", str(msg_file), "--data-dir", data])
    assert main(["msg", "remove", msg.id, "--data-dir", data]) == EXIT_OK
    assert main(["msg", "remove", msg.id, "--data-dir", data]) == EXIT_VALIDATION


def test_app_pack_produces_loadable_message(tmp_path, capsys):
    from oppweb.apps import BUNDLE_ROOT

    data = str(tmp_path / "n1")
    out_file = str(tmp_path / "board.owm")
    code = main([
        "app", "pack", os.path.join(BUNDLE_ROOT, "board"),
        "--out", out_file, "--data-dir", data,
        "--meta", "tag=welcome",
        ])
    assert code == EXIT_OK
    with open(out_file, "rb") as fh:
        msg = decode(fh.read())
    assert msg.service == "board"
    assert msg.script("appSummary") is not None
    assert msg.meta_resolved("tag") == "welcome"
    assert msg.signature is not None


def test_bad_config_file_exit_code(tmp_path):
    cfg = tmp_path / "bad.conf"
    cfg.write_text("nonsense_key = 1\n")
    assert main(["key", "gen", "--config", str(cfg)]) == EXIT_CONFIG


def test_dial_unreachable_exit_code(tmp_path):
    data = str(tmp_path / "n1")
    assert main(["dial", "127.0.0.1:1", "--data-dir", data]) == EXIT_NETWORK


def test_sim_run_cli_determinism(tmp_path, capsys):
    scn = tmp_path / "tiny.scn"
    scn.write_text(
        "seed = 5\narea = 400 400\nduration = 400\nstep = 1\nttl = 100000\n"
        "message_interval = 40\nmessage_size = 2048\nruns = 2\n"
        "[group]\nname = peds\nclass = native-mobile\ncount = 8\n"
        "speed = 0.5 1.5\nrange = 60\nbitrate = 2000000\n"
    )
    out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["sim", "run", str(scn), "--out", out_a]) == EXIT_OK
    first_summary = capsys.readouterr().out
    assert main(["sim", "run", str(scn), "--out", out_b]) == EXIT_OK
    second_summary = capsys.readouterr().out
    assert first_summary == second_summary
    for name in sorted(os.listdir(out_a)):
        with open(os.path.join(out_a, name), "rb") as fa, \
             open(os.path.join(out_b, name), "rb") as fb:
            assert fa.read() == fb.read(), f"nondeterministic output {name}"


def test_sim_sweep_cli(tmp_path, capsys):
    scn_dir = tmp_path / "scns"
    scn_dir.mkdir()
    base = (
        "seed = 5\narea = 300 300\nduration = 200\nstep = 1\nttl = 100000\n"
        "message_interval = 50\nmessage_size = {size}\nruns = 1\n"
        "[group]\nname = peds\nclass = native-mobile\ncount = 5\n"
        "speed = 0.5 1.5\nrange = 70\nbitrate = 2000000\n"
    )
    (scn_dir / "small.scn").write_text(base.format(size=350))
    (scn_dir / "large.scn").write_text(base.format(size=16384))
    assert main(["sim", "sweep", str(scn_dir), "--out", str(tmp_path / "out")]) == EXIT_OK
    table = capsys.readouterr().out
    assert "small" in table and "large" in table
    assert main(["sim", "sweep", str(tmp_path / "empty"), "--out", "x"]) == EXIT_VALIDATION


def test_two_daemons_dial_converges(tmp_path):
    now = int(time.time())
    fixtures = build_board_fixture(IDENT, now - 10, ttl_seconds=10**6)
    nodes = []
    for i, subset in enumerate((fixtures[:2], fixtures[2:])):
        config = NodeConfig(
            data_dir=str(tmp_path / f"n{i}"),
            node_name=f"daemon-{i}",
            portal_listen="127.0.0.1:0",
            sync_listen="127.0.0.1:0",
        )
        node = Node(config)
        node.start()
        for msg in subset:
            node.store.insert(msg, now)
        nodes.append(node)
    try:
        a, b = nodes
        host, port = b.sync_address
        report = a.dial(f"{host}:{port}")
        assert not report.aborted
        # Each side now holds fixtures plus both nodes' key records.
        assert a.store.state_digest() == b.store.state_digest()
    finally:
        for node in nodes:
            node.stop()


@pytest.mark.slow
def test_daemon_sigterm_leaves_recoverable_cache(tmp_path):
    data = str(tmp_path / "daemon")
    msg = build_board_fixture(IDENT, int(time.time()), ttl_seconds=10**6)[0]
    msg_file = tmp_path / "seed.owm"
    msg_file.write_bytes(encode_canonical(msg))
    assert main(["msg", "inject", str(msg_file), "--data-dir", data]) == EXIT_OK
    proc = subprocess.Popen(
        [
            sys.executable, "-m", "oppweb.cli", "node", "run",
            "--data-dir", data,
            "--portal-listen", "127.0.0.1:0",
            "--sync-listen", "127.0.0.1:0",
        ],
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        text=True,
    )
    try:
        line = proc.stdout.readline()
        assert "portal" in line
        time.sleep(0.5)
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(timeout=15) == 0
    finally:
        if proc.poll() is None:
            proc.kill()
    store = CacheStore.recover(os.path.join(data, "cache"), now=int(time.time()))
    assert msg.id in store
    assert "keys" in store.services()  # daemon published its own key


def test_config_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "node.conf"
    cfg.write_text("node_name = from-file\nttl_default = 1111\n")
    monkeypatch.setenv("OPPWEB_NODE_NAME", "from-env")
    monkeypatch.setenv("OPPWEB_CPU_BUDGET", "3.5")
    loaded = load_config(str(cfg), overrides={"node_name": "from-flag"})
    assert loaded.node_name == "from-flag"  # flag beats file beats env
    assert loaded.ttl_default == 1111  # file beats default
    assert loaded.cpu_budget == 3.5  # env beats default
    no_flag = load_config(str(cfg))
    assert no_flag.node_name == "from-file"
    with pytest.raises(ConfigError):
        load_config(None, overrides={"portal_listen": "nonsense"})
