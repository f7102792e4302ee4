import random
import signal
import subprocess
import sys
import time
from pathlib import Path

import pytest
import requests

from gridhub.cli import main
from gridhub.encoding import encode_spec
from gridhub.server import GridHubServer
from gridhub.store import TableRegistry

from .conftest import make_spec, random_state

SRC = str(Path(__file__).resolve().parent.parent / "src")


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def seeded_dir(path, commits=3, seed=5):
    registry = TableRegistry(path)
    registry.open_existing()
    spec = make_spec("t1")
    store = registry.create(spec)
    rng = random.Random(seed)
    for _ in range(commits):
        store.post_full_grid(random_state(spec, rng), "ana", "table", None)
    head = store.head()
    registry.close()
    return spec, head


@pytest.fixture
def server(tmp_path):
    registry = TableRegistry(tmp_path / "srv")
    registry.open_existing()
    srv = GridHubServer(registry, heartbeat_s=0.3)
    srv.start()
    yield srv
    srv.close()


class TestUsageErrors:
    def test_no_subcommand_exits_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 1

    def test_unknown_subcommand_exits_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1

    def test_worker_requires_table_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["worker"])
        assert exc.value.code == 1

    def test_serve_rejects_bad_addr(self, capsys, tmp_path):
        code, _, err = run(
            capsys, "serve", "--addr", "nonsense", "--data-dir", str(tmp_path)
        )
        assert code == 1
        assert "host:port" in err

    def test_worker_rejects_out_of_range_sun(self, capsys):
        code, _, err = run(
            capsys, "worker", "--table", "t1", "--token", "x",
            "--sun-elevation", "91",
        )
        assert code == 1

    def test_worker_requires_token(self, capsys, monkeypatch):
        monkeypatch.delenv("WORKER_TOKEN", raising=False)
        code, _, err = run(capsys, "worker", "--table", "t1")
        assert code == 1
        assert "token" in err

    def test_export_missing_table_exits_1(self, capsys, tmp_path):
        code, _, err = run(
            capsys, "export", "--data-dir", str(tmp_path), "ghost", "out.bin"
        )
        assert code == 1
        assert "ghost" in err


class TestVerifyAndReplay:
    def test_verify_ok_counts_records(self, capsys, tmp_path):
        seeded_dir(tmp_path)
        code, out, _ = run(capsys, "verify", "--data-dir", str(tmp_path))
        assert code == 0
        assert out == "t1: OK (4 records)\n"

    def test_replay_prints_head(self, capsys, tmp_path):
        _, head = seeded_dir(tmp_path)
        code, out, _ = run(capsys, "replay", "--data-dir", str(tmp_path))
        assert code == 0
        assert out == f"t1: head version 4 grid_hash {head.grid_hash}\n"

    def test_corrupted_log_names_record(self, capsys, tmp_path):
        seeded_dir(tmp_path)
        log = tmp_path / "t1.log"
        raw = bytearray(log.read_bytes())
        lines = raw.split(b"\n")
        # flip one byte inside the third record's grid payload
        target = 2
        offset = sum(len(l) + 1 for l in lines[:target]) + 40
        raw[offset] ^= 0x01
        log.write_bytes(bytes(raw))

        code, out, _ = run(capsys, "verify", "--data-dir", str(tmp_path))
        assert code == 2
        assert "broken at record 3" in out

        code, out, _ = run(capsys, "replay", "--data-dir", str(tmp_path))
        assert code == 2
        assert "record 3" in out

        code, _, err = run(
            capsys, "export", "--data-dir", str(tmp_path), "t1",
            str(tmp_path / "out.bin"),
        )
        assert code == 2
        assert "record 3" in err

    def test_verify_selected_table_only(self, capsys, tmp_path):
        seeded_dir(tmp_path)
        code, out, _ = run(capsys, "verify", "--data-dir", str(tmp_path), "t1")
        assert code == 0
        assert out.startswith("t1: OK")


class TestExportImport:
    def test_round_trip_is_byte_identical(self, capsys, tmp_path):
        src_dir = tmp_path / "a"
        dst_dir = tmp_path / "b"
        src_dir.mkdir()
        _, head = seeded_dir(src_dir)
        export_path = tmp_path / "t1.export"

        code, out, _ = run(
            capsys, "export", "--data-dir", str(src_dir), "t1", str(export_path)
        )
        assert code == 0
        assert "4 records" in out

        code, out, _ = run(
            capsys, "import", "--data-dir", str(dst_dir), str(export_path)
        )
        assert code == 0
        assert out == "imported table t1: 4 records\n"

        code, out, _ = run(capsys, "replay", "--data-dir", str(dst_dir))
        assert code == 0
        assert head.grid_hash in out

        reexport = tmp_path / "t1.reexport"
        code, _, _ = run(
            capsys, "export", "--data-dir", str(dst_dir), "t1", str(reexport)
        )
        assert code == 0
        assert reexport.read_bytes() == export_path.read_bytes()

    def test_import_refuses_existing_table(self, capsys, tmp_path):
        seeded_dir(tmp_path)
        export_path = tmp_path / "t1.export"
        run(capsys, "export", "--data-dir", str(tmp_path), "t1", str(export_path))
        code, _, err = run(
            capsys, "import", "--data-dir", str(tmp_path), str(export_path)
        )
        assert code == 2
        assert "exists" in err

    def test_export_to_stdout(self, capsysbinary, tmp_path):
        seeded_dir(tmp_path)
        code = main(["export", "--data-dir", str(tmp_path), "t1", "-"])
        assert code == 0
        payload = capsysbinary.readouterr().out
        assert payload.count(b"\n") == 5
        assert payload.startswith(b'{"name":"t1"')


class TestServerCommands:
    def test_create_table_from_file(self, capsys, tmp_path, server):
        spec = make_spec("t9")
        spec_path = tmp_path / "t9.json"
        spec_path.write_bytes(encode_spec(spec))
        code, out, _ = run(
            capsys, "create-table", "--server", server.url, "--spec", str(spec_path)
        )
        assert code == 0
        assert out == "created table t9, head version 1\n"
        assert "t9" in server.registry.tables

    def test_create_duplicate_exits_2(self, capsys, tmp_path, server):
        spec_path = tmp_path / "t9.json"
        spec_path.write_bytes(encode_spec(make_spec("t9")))
        run(capsys, "create-table", "--server", server.url, "--spec", str(spec_path))
        code, _, err = run(
            capsys, "create-table", "--server", server.url, "--spec", str(spec_path)
        )
        assert code == 2

    def test_unreachable_server_exits_2(self, capsys, tmp_path):
        spec_path = tmp_path / "t.json"
        spec_path.write_bytes(encode_spec(make_spec("t1")))
        code, _, err = run(
            capsys, "create-table", "--server", "http://127.0.0.1:9",
            "--spec", str(spec_path),
        )
        assert code == 2
        assert "unreachable" in err

    def test_bench_comments_reports_dense_ids(self, capsys, server):
        code, out, _ = run(
            capsys, "bench-comments", "--server", server.url, "-n", "25"
        )
        assert code == 0
        assert "25 comments" in out
        assert "ids dense 1..25" in out

    def test_bench_requires_fresh_table(self, capsys, server):
        run(capsys, "bench-comments", "--server", server.url, "-n", "1")
        code, _, err = run(
            capsys, "bench-comments", "--server", server.url, "-n", "1"
        )
        assert code == 2


class TestSeedDemo:
    def test_seeding_is_deterministic(self, capsys, tmp_path):
        hashes = []
        for sub in ("one", "two"):
            registry = TableRegistry(tmp_path / sub)
            registry.open_existing()
            srv = GridHubServer(registry, heartbeat_s=0.3)
            srv.start()
            try:
                code, out, _ = run(capsys, "seed-demo", "--server", srv.url)
                assert code == 0
                assert "table demo seeded: head version 31 grid_hash " in out
                hashes.append(out.rsplit(" ", 1)[1])
            finally:
                srv.close()
        assert hashes[0] == hashes[1]

    def test_custom_seed_changes_outcome(self, capsys, tmp_path):
        registry = TableRegistry(tmp_path)
        registry.open_existing()
        srv = GridHubServer(registry, heartbeat_s=0.3)
        srv.start()
        try:
            code, out, _ = run(
                capsys, "seed-demo", "--server", srv.url, "--seed", "7",
                "--name", "alt",
            )
            assert code == 0
            assert "table alt seeded" in out
        finally:
            srv.close()


class TestServe:
    def test_serve_aborts_on_broken_chain(self, capsys, tmp_path):
        seeded_dir(tmp_path)
        log = tmp_path / "t1.log"
        raw = bytearray(log.read_bytes())
        raw[40] ^= 0x01
        log.write_bytes(bytes(raw))
        code, _, err = run(
            capsys, "serve", "--addr", "127.0.0.1:0", "--data-dir", str(tmp_path)
        )
        assert code == 2
        assert "t1" in err
        assert "record 1" in err

    def test_serve_subprocess_start_and_interrupt(self, tmp_path):
        proc = subprocess.Popen(
            [
                sys.executable, "-u", "-m", "gridhub.cli", "serve",
                "--addr", "127.0.0.1:0", "--data-dir", str(tmp_path),
            ],
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            env={"PYTHONPATH": SRC, "PATH": "/usr/bin:/bin"},
            text=True,
        )
        try:
            line = proc.stdout.readline()
            assert line.startswith("serving 0 table(s) at http://127.0.0.1:")
            url = line.split(" at ", 1)[1].split(",")[0]
            resp = requests.get(f"{url}/api/tables", timeout=5)
            assert resp.status_code == 200
            assert resp.json() == []
            proc.send_signal(signal.SIGINT)
            assert proc.wait(timeout=10) == 0
        finally:
            if proc.poll() is None:
                proc.kill()
                proc.wait()

    def test_serve_reports_recovered_tables(self, capsys, tmp_path, monkeypatch):
        seeded_dir(tmp_path)
        events = tmp_path / "t1.events.log"
        lines = events.read_bytes().splitlines(keepends=True)
        events.write_bytes(b"".join(lines[:-1]))  # lose the newest event
        # patch serve_forever so the command returns after startup
        monkeypatch.setattr(GridHubServer, "serve_forever", lambda self: None)
        code, out, err = run(
            capsys, "serve", "--addr", "127.0.0.1:0", "--data-dir", str(tmp_path)
        )
        assert code == 0
        assert "serving 1 table(s)" in out
        assert "recovered:" in err


class TestEnvDefaults:
    def test_data_dir_env_used(self, capsys, tmp_path, monkeypatch):
        seeded_dir(tmp_path)
        monkeypatch.setenv("DATA_DIR", str(tmp_path))
        code, out, _ = run(capsys, "verify")
        assert code == 0
        assert "t1: OK" in out

    def test_worker_token_env_satisfies_worker(self, capsys, monkeypatch):
        monkeypatch.setenv("WORKER_TOKEN", "secret")
        monkeypatch.setattr(
            "gridhub.cli.Worker",
            lambda *a, **kw: type("W", (), {"run": lambda self: None})(),
        )
        code, _, _ = run(capsys, "worker", "--table", "t1")
        assert code == 0
