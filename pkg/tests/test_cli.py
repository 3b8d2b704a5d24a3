import socket
from pathlib import Path

from lts.config import settings
from lts.main import EXIT_FAILURE, EXIT_MISMATCH, EXIT_OK, EXIT_USAGE, build_parser, config_from_args, main
from lts.utils import mesh_io

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_run_and_compare(tmp_path):
    first, second, third = (str(tmp_path / n) for n in ("a.csv", "b.csv", "c.csv"))
    config = str(CONFIGS / "line_4cells.env")
    assert main(["run", "--config", config, "--snapshot", first]) == EXIT_OK
    assert main(["run", "--config", config, "--mode", "tasks", "--ces", "2", "--snapshot", second]) == EXIT_OK
    assert main(["run", "--config", config, "--iterations", "2", "--snapshot", third]) == EXIT_OK
    assert main(["compare", first, second]) == EXIT_OK
    assert main(["compare", first, third]) == EXIT_MISMATCH


def test_report(tmp_path, capsys):
    trace = str(tmp_path / "trace.jsonl")
    config = str(CONFIGS / "line_4cells.env")
    assert main(["run", "--config", config, "--mode", "tasks", "--ces", "2", "--trace", trace]) == EXIT_OK
    assert main(["report", trace]) == EXIT_OK
    out = capsys.readouterr().out
    assert "executing" in out
    assert "ready tasks" in out

    assert main(["report", trace, trace, "--out-dir", str(tmp_path / "report")]) == EXIT_OK
    assert "delta" in capsys.readouterr().out
    assert (tmp_path / "report" / "gantt.csv").exists()
    assert (tmp_path / "report" / "ready.csv").exists()


def test_mesh_export(tmp_path):
    path = tmp_path / "mesh.bin"
    config = str(CONFIGS / "skewed_benchmark.env")
    assert main(["mesh", "--config", config, "--out", str(path), "--binary"]) == EXIT_OK
    mesh = mesh_io.read_binary(path)
    assert mesh.dim == 2
    assert mesh.n_cells == 8 * 8 * 16 + 3 * 64


def test_usage_errors():
    assert main(["run", "--mode", "bogus"]) == EXIT_USAGE
    assert main(["run", "--cfl", "1.5"]) == EXIT_USAGE
    assert main(["run", "--ranks", "2"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE


def test_dead_peer_exits_with_failure(monkeypatch):
    monkeypatch.setattr(settings, "SOCKET_CONNECT_TIMEOUT", 0.5)
    monkeypatch.setattr(settings, "RECV_TIMEOUT", 1.0)
    sockets = [socket.socket() for _ in range(2)]
    for s in sockets:
        s.bind(("127.0.0.1", 0))
    peers = ",".join(f"127.0.0.1:{s.getsockname()[1]}" for s in sockets)
    for s in sockets:
        s.close()
    config = str(CONFIGS / "line_4cells.env")
    # rank 1 is never started
    code = main(["run", "--config", config, "--mode", "dist", "--ranks", "2", "--transport", "socket",
                 "--rank-id", "0", "--listen", peers.split(",")[0], "--peers", peers])
    assert code == EXIT_FAILURE


def test_streaming_insertion_flag():
    parser = build_parser()
    assert config_from_args(parser.parse_args(["run"])).hold_insertion is True
    assert config_from_args(parser.parse_args(["run", "--stream-insertion"])).hold_insertion is False
