import numpy as np
import pytest

from uplif.bench import (
    Metrics,
    OpStream,
    SortedKv,
    WorkloadSpec,
    emit_report,
    gen_lognormal,
    gen_uniform,
    generate_workload,
    load_dataset,
    read_report,
    run_benchmark,
    run_range_benchmark,
    write_dataset,
)
from uplif.index import IndexConfig, UplifIndex
from uplif.tuner import apply_op


# -- datasets ------------------------------------------------------------------


def test_load_dedups_and_sorts(tmp_path):
    p = tmp_path / "d.bin"
    write_dataset(p, np.array([5, 1, 5], dtype=np.uint64))
    assert list(load_dataset(p)) == [1, 5]


def test_load_empty_rejected(tmp_path):
    p = tmp_path / "d.bin"
    p.write_bytes((0).to_bytes(8, "little"))
    with pytest.raises(ValueError, match="empty dataset"):
        load_dataset(p)


def test_load_short_read(tmp_path):
    p = tmp_path / "d.bin"
    p.write_bytes((3).to_bytes(8, "little") + b"\x01" * 12)
    with pytest.raises(ValueError, match="short read at offset"):
        load_dataset(p)
    p2 = tmp_path / "d2.bin"
    p2.write_bytes(b"\x01\x02")
    with pytest.raises(ValueError, match="short read at offset"):
        load_dataset(p2)


def test_dataset_roundtrip_large(tmp_path):
    keys = gen_lognormal(1_000_000, seed=3)
    p = tmp_path / "big.bin"
    write_dataset(p, keys)
    back = load_dataset(p)
    assert np.array_equal(keys, back)


def test_gen_lognormal_basics():
    one = gen_lognormal(1, seed=5)
    assert one.size == 1
    a = gen_lognormal(5000, seed=7)
    b = gen_lognormal(5000, seed=7)
    assert np.array_equal(a, b)
    assert np.unique(a).size == a.size


def test_gen_lognormal_median_matches_closed_form():
    keys = gen_lognormal(1_000_000, mu=0.0, sigma=1.0, seed=9)
    med = float(np.median(keys.astype(np.float64)))
    assert abs(med - 1e9) / 1e9 < 0.05  # median of the law is e^mu = 1, scaled


def test_gen_uniform_unique_sorted():
    a = gen_uniform(10_000, seed=11)
    assert np.unique(a).size == a.size
    assert np.all(a[1:] > a[:-1])


# -- workload generation ------------------------------------------------------------


def _materialize(spec, keys, n):
    stream = generate_workload(spec, keys)
    out = []
    it = iter(stream)
    for _ in range(n):
        out.append(next(it))
    return stream, out


def test_read_only_has_zero_inserts():
    keys = gen_lognormal(2000, seed=13)
    _, ops = _materialize(WorkloadSpec(kind="read_only", op_count=5000, seed=1), keys, 5000)
    assert all(op[0] == "get" for op in ops)


def test_write_heavy_exact_ratio():
    keys = gen_lognormal(30_000, seed=15)
    _, ops = _materialize(WorkloadSpec(kind="write_heavy", op_count=10_000, seed=2), keys, 10_000)
    assert sum(op[0] == "insert" for op in ops) == 5000


def test_read_heavy_exact_ratio():
    keys = gen_lognormal(30_000, seed=17)
    _, ops = _materialize(WorkloadSpec(kind="read_heavy", op_count=10_000, seed=3), keys, 10_000)
    assert sum(op[0] == "insert" for op in ops) == 1000


def test_write_only_all_inserts():
    keys = gen_lognormal(30_000, seed=19)
    _, ops = _materialize(WorkloadSpec(kind="write_only", op_count=5000, seed=4), keys, 5000)
    assert all(op[0] == "insert" for op in ops)


def test_distribution_shift_inserts_above_init_max():
    keys = gen_lognormal(10_000, seed=21)
    spec = WorkloadSpec(kind="distribution_shift", op_count=8000, seed=5, init_fraction=0.5)
    stream = generate_workload(spec, keys)
    init_max = max(k for k, _ in stream.init_pairs)
    inserts = [op[1] for op in stream if op[0] == "insert"]
    assert inserts
    assert all(k > init_max for k in inserts)


def test_pool_exhaustion_flags_and_degrades_to_reads():
    keys = gen_lognormal(1000, seed=23)
    spec = WorkloadSpec(kind="write_only", op_count=2000, seed=6, init_fraction=0.5)
    stream = generate_workload(spec, keys)
    ops = list(stream)
    assert stream.pool_exhausted
    assert sum(op[0] == "insert" for op in ops) == 500  # pool size
    assert sum(op[0] == "get" for op in ops) == 1500


def test_stream_determinism():
    keys = gen_lognormal(5000, seed=25)
    spec = WorkloadSpec(kind="write_heavy", op_count=4000, seed=7)
    a = list(generate_workload(spec, keys))
    b = list(generate_workload(spec, keys))
    assert a == b


# -- run_benchmark ----------------------------------------------------------------------


def test_zero_duration_run():
    keys = gen_lognormal(500, seed=27)
    spec = WorkloadSpec(kind="read_only", seed=8)
    stream = generate_workload(spec, keys)
    idx = UplifIndex.bulk_load(stream.init_pairs)
    m = run_benchmark(idx, stream, duration_secs=0.0)
    assert m.ops_completed == 0
    assert m.throughput == 0.0
    assert m.elapsed == 0.0


def test_oracle_run_deterministic_op_count():
    keys = gen_lognormal(2000, seed=29)

    def one():
        spec = WorkloadSpec(kind="write_heavy", op_count=3000, seed=9)
        stream = generate_workload(spec, keys)
        oracle = SortedKv()
        for k, v in stream.init_pairs:
            oracle.insert(k, v)
        return run_benchmark(oracle, stream, op_count=3000).ops_completed

    assert one() == one() == 3000


def test_index_and_oracle_agree_over_stream():
    keys = gen_lognormal(5000, seed=31)
    spec = WorkloadSpec(kind="write_heavy", op_count=6000, seed=10)
    s1 = generate_workload(spec, keys)
    s2 = generate_workload(spec, keys)
    idx = UplifIndex.bulk_load(s1.init_pairs)
    oracle = SortedKv()
    for k, v in s2.init_pairs:
        oracle.insert(k, v)
    for op_a, op_b in zip(iter(s1), iter(s2)):
        assert op_a == op_b
        assert apply_op(idx, op_a) == apply_op(oracle, op_b)
    m1 = run_benchmark(idx, generate_workload(spec, keys), op_count=500, workload="wh")
    assert m1.throughput > 0


# -- range benchmark -----------------------------------------------------------------------


def test_range_bench_span_zero_and_full():
    keys = gen_lognormal(3000, seed=33)
    spec = WorkloadSpec(kind="read_only", seed=11, init_fraction=1.0)
    stream = generate_workload(spec, keys)
    idx = UplifIndex.bulk_load(stream.init_pairs)
    m0 = run_range_benchmark(idx, 50, 0.0, seed=12)
    assert m0.ops_completed == 50
    mfull = run_range_benchmark(idx, 3, 1.0, seed=13)
    assert mfull.ops_completed == 3
    lo, hi = idx.key_bounds()
    assert len(idx.range(lo, hi)) == len(stream.init_pairs)


def test_range_bench_matches_oracle():
    keys = gen_lognormal(4000, seed=35)
    spec = WorkloadSpec(kind="read_only", seed=14, init_fraction=1.0)
    stream = generate_workload(spec, keys)
    idx = UplifIndex.bulk_load(stream.init_pairs)
    oracle = SortedKv()
    for k, v in stream.init_pairs:
        oracle.insert(k, v)
    rng = np.random.default_rng(15)
    lo_d, hi_d = idx.key_bounds()
    for _ in range(200):
        a = int(rng.integers(lo_d, hi_d))
        b = a + int(rng.integers(0, (hi_d - lo_d) // 5))
        assert idx.range(a, b) == oracle.range(a, b)


# -- reports ---------------------------------------------------------------------------------


def _metric(i):
    return Metrics(
        workload="write_heavy",
        dataset="logn",
        run_id=i,
        ops_completed=1000,
        elapsed=0.5,
        throughput=2000.0,
        p50_us=3.25,
        p99_us=11.5,
        index_bytes=4096,
    )


def test_report_empty_is_header_only(tmp_path):
    p = tmp_path / "r.csv"
    emit_report([], p)
    text = p.read_text().strip().splitlines()
    assert text == ["workload,dataset,run,throughput_mops,index_bytes,p50_us,p99_us"]


def test_report_single_run_two_lines(tmp_path):
    p = tmp_path / "r.csv"
    emit_report([_metric(0)], p)
    lines = p.read_text().strip().splitlines()
    assert len(lines) == 2


def test_report_roundtrip(tmp_path):
    p = tmp_path / "r.csv"
    ms = [_metric(i) for i in range(3)]
    emit_report(ms, p)
    rows = read_report(p)
    assert len(rows) == 3
    for m, row in zip(ms, rows):
        assert row["workload"] == m.workload
        assert row["dataset"] == m.dataset
        assert int(row["run"]) == m.run_id
        assert float(row["throughput_mops"]) == pytest.approx(m.throughput / 1e6)
        assert int(row["index_bytes"]) == m.index_bytes
        assert float(row["p50_us"]) == pytest.approx(m.p50_us, abs=1e-3)
        assert float(row["p99_us"]) == pytest.approx(m.p99_us, abs=1e-3)


def test_report_figures_rendered(tmp_path):
    from uplif.plots import render_report_figures

    p = tmp_path / "r.csv"
    ms = [_metric(i) for i in range(2)]
    ms[0].bmat_height_series = [1, 2, 3]
    emit_report(ms, p)
    figs = render_report_figures(ms, p)
    assert figs
    for f in figs:
        assert f.exists()
        assert f.suffix == ".png"
    names = {f.name for f in figs}
    assert "r_throughput.png" in names
    assert "r_latency.png" in names
