import os

from uplif.bench import load_dataset, read_report
from uplif.cli import main
from uplif.tuner import load_qtable


def test_gen_and_bulk_load(tmp_path, capsys):
    data = tmp_path / "keys.bin"
    assert main(["gen", "--dist", "lognormal", "--n", "2000", "--seed", "4", "--out", str(data)]) == 0
    assert load_dataset(data).size == 2000

    stats = tmp_path / "stats.json"
    assert main(["bulk-load", "--data", str(data), "--out-stats", str(stats)]) == 0
    assert stats.exists()
    text = stats.read_text()
    assert '"height"' in text and '"memory"' in text


def test_bench_writes_report_and_figures(tmp_path):
    data = tmp_path / "keys.bin"
    main(["gen", "--dist", "lognormal", "--n", "3000", "--seed", "5", "--out", str(data)])
    report = tmp_path / "out"
    report.mkdir()
    csv = report / "bench.csv"
    rc = main([
        "bench", "--data", str(data), "--workload", "wh", "--secs", "0.3",
        "--seed", "6", "--runs", "2", "--report", str(csv),
    ])
    assert rc == 0
    rows = read_report(csv)
    assert len(rows) == 2
    assert (report / "bench_throughput.png").exists()
    assert (report / "bench_latency.png").exists()


def test_train_agent_then_exploit(tmp_path):
    data = tmp_path / "keys.bin"
    main(["gen", "--dist", "lognormal", "--n", "3000", "--seed", "7", "--out", str(data)])
    qt = tmp_path / "agent.qtable"
    rc = main([
        "train-agent", "--data", str(data), "--workload", "wh", "--steps", "5",
        "--seed", "8", "--out-qtable", str(qt),
    ])
    assert rc == 0
    assert qt.exists()
    load_qtable(qt)
    assert (tmp_path / "agent_training.png").exists()
    csv = tmp_path / "agent_bench.csv"
    rc = main([
        "bench", "--data", str(data), "--workload", "wh", "--secs", "0.2",
        "--seed", "9", "--runs", "1", "--agent", f"qtable:{qt}", "--report", str(csv),
    ])
    assert rc == 0
    assert read_report(csv)


def test_range_bench_cli(tmp_path):
    data = tmp_path / "keys.bin"
    main(["gen", "--dist", "uniform", "--n", "2000", "--seed", "10", "--out", str(data)])
    rc = main(["range-bench", "--data", str(data), "--queries", "20", "--span", "0.05"])
    assert rc == 0


def test_validation_error_exit_code(tmp_path):
    assert main(["bench", "--data", str(tmp_path / "missing.bin"), "--workload", "wh", "--secs", "0.1"]) == 2
    assert main(["gen", "--dist", "bogus", "--n", "10", "--out", "x"]) == 2
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"\x00")
    assert main(["bulk-load", "--data", str(bad)]) == 2


def test_env_seed_override(tmp_path):
    a = tmp_path / "a.bin"
    b = tmp_path / "b.bin"
    c = tmp_path / "c.bin"
    main(["gen", "--dist", "lognormal", "--n", "500", "--seed", "1", "--out", str(a)])
    os.environ["UPLIF_SEED"] = "1"
    try:
        main(["gen", "--dist", "lognormal", "--n", "500", "--seed", "999", "--out", str(b)])
    finally:
        del os.environ["UPLIF_SEED"]
    main(["gen", "--dist", "lognormal", "--n", "500", "--seed", "999", "--out", str(c)])
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()
