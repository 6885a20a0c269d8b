"""Datasets, workload generation, the sorted-map reference oracle, and
benchmark drivers.

Dataset files are binary: an 8-byte little-endian unsigned count followed by
that many 8-byte little-endian unsigned keys, so standard u64 key dumps load
unchanged. Workload streams are fully determined by (seed, spec, dataset)
and schedule their write fraction exactly rather than sampling it.
"""

from __future__ import annotations

import bisect
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .index import IndexConfig, UplifIndex
from .tuner import QLearningTuner, StepReport, apply_op

__all__ = [
    "WORKLOAD_KINDS",
    "WRITE_RATIOS",
    "SHORT_KINDS",
    "SortedKv",
    "WorkloadSpec",
    "OpStream",
    "Metrics",
    "load_dataset",
    "write_dataset",
    "gen_lognormal",
    "gen_uniform",
    "generate_workload",
    "run_benchmark",
    "run_range_benchmark",
    "emit_report",
    "read_report",
]

WRITE_RATIOS = {
    "read_only": 0.0,
    "read_heavy": 0.1,
    "write_heavy": 0.5,
    "write_only": 1.0,
    "distribution_shift": 0.5,
}
WORKLOAD_KINDS = tuple(WRITE_RATIOS)
SHORT_KINDS = {
    "ro": "read_only",
    "rh": "read_heavy",
    "wh": "write_heavy",
    "wo": "write_only",
    "shift": "distribution_shift",
}

LOGNORMAL_KEY_SCALE = 1e9
VALUE_MAX = np.iinfo(np.uint64).max
REFRESH_EVERY = 8192
HEIGHT_SAMPLE_EVERY = 1000


class SortedKv:
    """Reference oracle: a sorted key list plus a dict, same op surface as
    the index."""

    def __init__(self):
        self._keys: list[int] = []
        self._map: dict[int, object] = {}

    def insert(self, key: int, value) -> None:
        k = int(key)
        if k not in self._map:
            bisect.insort(self._keys, k)
        self._map[k] = value

    def get(self, key: int):
        return self._map.get(int(key))

    def remove(self, key: int) -> bool:
        k = int(key)
        if k not in self._map:
            return False
        del self._map[k]
        i = bisect.bisect_left(self._keys, k)
        self._keys.pop(i)
        return True

    def range(self, lo: int, hi: int) -> list[tuple[int, object]]:
        if lo > hi:
            raise ValueError("inverted range")
        i = bisect.bisect_left(self._keys, int(lo))
        j = bisect.bisect_right(self._keys, int(hi))
        return [(k, self._map[k]) for k in self._keys[i:j]]

    @property
    def live_count(self) -> int:
        return len(self._keys)


# -- datasets -----------------------------------------------------------------


def load_dataset(path) -> np.ndarray:
    """Load, deduplicate and sort a binary u64 key file."""
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise ValueError(f"short read at offset {len(data)}")
    count = int.from_bytes(data[:8], "little")
    if count == 0:
        raise ValueError("empty dataset")
    need = 8 + 8 * count
    if len(data) < need:
        raise ValueError(f"short read at offset {len(data)}")
    keys = np.frombuffer(data, dtype="<u8", count=count, offset=8)
    return np.unique(keys)


def write_dataset(path, keys) -> None:
    arr = np.asarray(keys, dtype="<u8")
    with open(path, "wb") as fh:
        fh.write(int(arr.size).to_bytes(8, "little"))
        fh.write(arr.tobytes())


def gen_lognormal(n: int, mu: float = 0.0, sigma: float = 1.0, seed: int = 0) -> np.ndarray:
    """n unique u64 keys from a heavy-tailed log-normal law.

    Raw samples are scaled by 1e9 and rounded; duplicates are replaced by
    further deterministic draws, keeping the tail intact.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    picked = np.empty(0, dtype=np.uint64)
    while picked.size < n:
        batch = max(int((n - picked.size) * 1.2) + 16, 256)
        draws = (rng.lognormal(mu, sigma, batch) * LOGNORMAL_KEY_SCALE).astype(np.uint64)
        _, first_idx = np.unique(draws, return_index=True)
        fresh = draws[np.sort(first_idx)]
        if picked.size:
            fresh = fresh[~np.isin(fresh, picked)]
        picked = np.concatenate([picked, fresh])
    return np.sort(picked[:n])


def gen_uniform(n: int, seed: int = 0) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    picked = np.empty(0, dtype=np.uint64)
    while picked.size < n:
        batch = max(int((n - picked.size) * 1.1) + 16, 256)
        draws = rng.integers(0, VALUE_MAX, size=batch, dtype=np.uint64)
        _, first_idx = np.unique(draws, return_index=True)
        fresh = draws[np.sort(first_idx)]
        if picked.size:
            fresh = fresh[~np.isin(fresh, picked)]
        picked = np.concatenate([picked, fresh])
    return np.sort(picked[:n])


# -- workloads ------------------------------------------------------------------


@dataclass(frozen=True)
class WorkloadSpec:
    kind: str
    op_count: Optional[int] = None
    duration_secs: Optional[float] = None
    seed: int = 0
    init_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in WRITE_RATIOS:
            raise ValueError(f"unknown workload kind: {self.kind!r}")
        if not (0.0 < self.init_fraction <= 1.0):
            raise ValueError("init_fraction must be in (0, 1]")

    @property
    def write_ratio(self) -> float:
        return WRITE_RATIOS[self.kind]


class OpStream:
    """Deterministic single-pass op stream for one workload run.

    Reads target currently-live keys uniformly; inserts consume a held-out
    pool (the sorted key suffix for distribution shift, a random subset
    otherwise). On pool exhaustion the stream degrades to reads and flags it.
    """

    def __init__(self, spec: WorkloadSpec, keys: Sequence[int]):
        arr = np.unique(np.asarray(keys, dtype=np.uint64))
        if arr.size == 0:
            raise ValueError("empty key set")
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        m = min(max(int(round(spec.init_fraction * arr.size)), 1), arr.size)
        if spec.kind == "distribution_shift":
            init = arr[:m]
            pool = arr[m:]
            self.pool = pool[self.rng.permutation(pool.size)]
        else:
            perm = self.rng.permutation(arr.size)
            init = np.sort(arr[perm[:m]])
            self.pool = arr[perm[m:]]
        init_vals = self.rng.integers(0, VALUE_MAX, size=init.size, dtype=np.uint64)
        self.init_pairs: list[tuple[int, int]] = [
            (int(k), int(v)) for k, v in zip(init, init_vals)
        ]
        self._live: list[int] = [int(k) for k in init]
        self._pool_pos = 0
        self.pool_exhausted = False

    def __iter__(self) -> Iterator[tuple]:
        i = 0
        wr = self.spec.write_ratio
        limit = self.spec.op_count
        rng = self.rng
        while limit is None or i < limit:
            want_write = math.floor((i + 1) * wr) - math.floor(i * wr) >= 1
            if want_write and self._pool_pos < len(self.pool):
                k = int(self.pool[self._pool_pos])
                self._pool_pos += 1
                v = int(rng.integers(0, VALUE_MAX, dtype=np.uint64))
                self._live.append(k)
                yield ("insert", k, v)
            else:
                if want_write:
                    self.pool_exhausted = True
                j = int(rng.integers(len(self._live)))
                yield ("get", self._live[j])
            i += 1


def generate_workload(spec: WorkloadSpec, keys: Sequence[int]) -> OpStream:
    return OpStream(spec, keys)


# -- metrics and drivers ---------------------------------------------------------


@dataclass
class Metrics:
    workload: str
    dataset: str
    run_id: int
    ops_completed: int
    elapsed: float
    throughput: float
    p50_us: float
    p99_us: float
    index_bytes: int
    bmat_height_series: list[int] = field(default_factory=list)
    action_log: list[StepReport] = field(default_factory=list)
    pool_exhausted: bool = False


def _percentiles(latencies: list[float]) -> tuple[float, float]:
    if not latencies:
        return 0.0, 0.0
    arr = np.asarray(latencies)
    return float(np.percentile(arr, 50) * 1e6), float(np.percentile(arr, 99) * 1e6)


def run_benchmark(
    target,
    stream: OpStream,
    duration_secs: Optional[float] = None,
    op_count: Optional[int] = None,
    agent: Optional[QLearningTuner] = None,
    workload: str = "",
    dataset: str = "",
    run_id: int = 0,
) -> Metrics:
    """Drive ops from the stream against an index or the oracle.

    With an agent attached, the agent runs its observe/act/measure rounds and
    ops are executed inside tuning steps; otherwise ops run in a plain timed
    loop. Stops at the duration or op budget, whichever comes first.
    """
    it = iter(stream)
    latencies: list[float] = []
    heights: list[int] = []
    action_log: list[StepReport] = []
    ops = 0
    is_index = isinstance(target, UplifIndex)

    t_start = time.perf_counter()
    deadline = None if duration_secs is None else t_start + duration_secs
    budget = op_count if op_count is not None else None

    while True:
        if deadline is not None and time.perf_counter() >= deadline:
            break
        if budget is not None and ops >= budget:
            break
        if agent is not None and is_index:
            report = agent.tuning_step(target, it)
            if report.ops_run == 0:
                break
            ops += report.ops_run
            action_log.append(report)
            heights.append(target.bmat.height)
            if report.ops_run:
                latencies.append(report.elapsed / report.ops_run)
        else:
            op = next(it, None)
            if op is None:
                break
            t0 = time.perf_counter()
            apply_op(target, op)
            latencies.append(time.perf_counter() - t0)
            ops += 1
            if is_index:
                if ops % HEIGHT_SAMPLE_EVERY == 0:
                    heights.append(target.bmat.height)
                if ops % REFRESH_EVERY == 0:
                    target.refresh_density()

    elapsed = time.perf_counter() - t_start
    if duration_secs is not None and duration_secs <= 0:
        elapsed = 0.0
    p50, p99 = _percentiles(latencies)
    return Metrics(
        workload=workload or stream.spec.kind,
        dataset=dataset,
        run_id=run_id,
        ops_completed=ops,
        elapsed=elapsed,
        throughput=ops / elapsed if elapsed > 0 else 0.0,
        p50_us=p50,
        p99_us=p99,
        index_bytes=target.memory_usage() if is_index else 0,
        bmat_height_series=heights,
        action_log=action_log,
        pool_exhausted=stream.pool_exhausted,
    )


def run_range_benchmark(index: UplifIndex, n_queries: int, span_fraction: float, seed: int = 0) -> Metrics:
    """Random range scans over the live key domain; results checked sorted."""
    bounds = index.key_bounds()
    if bounds is None:
        raise ValueError("index has no live keys")
    dmin, dmax = bounds
    width = max(dmax - dmin, 1)
    span = int(span_fraction * width)
    rng = np.random.default_rng(seed)
    latencies: list[float] = []
    t_start = time.perf_counter()
    for _ in range(n_queries):
        lo = dmin + int(rng.integers(0, max(width - span, 1), dtype=np.uint64))
        hi = lo + span
        t0 = time.perf_counter()
        out = index.range(lo, hi)
        latencies.append(time.perf_counter() - t0)
        keys = [k for k, _ in out]
        if any(b <= a for a, b in zip(keys, keys[1:])):
            raise AssertionError("range result not strictly ascending")
    elapsed = time.perf_counter() - t_start
    p50, p99 = _percentiles(latencies)
    return Metrics(
        workload=f"range[{span_fraction}]",
        dataset="",
        run_id=0,
        ops_completed=n_queries,
        elapsed=elapsed,
        throughput=n_queries / elapsed if elapsed > 0 else 0.0,
        p50_us=p50,
        p99_us=p99,
        index_bytes=index.memory_usage(),
    )


# -- reporting ---------------------------------------------------------------------


REPORT_HEADER = "workload,dataset,run,throughput_mops,index_bytes,p50_us,p99_us"


def emit_report(metrics: Sequence[Metrics], path) -> None:
    """Write the delimited run summary; one row per Metrics entry."""
    lines = [REPORT_HEADER]
    for m in metrics:
        lines.append(
            f"{m.workload},{m.dataset},{m.run_id},"
            f"{m.throughput / 1e6:.6f},{m.index_bytes},{m.p50_us:.3f},{m.p99_us:.3f}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path) -> list[dict]:
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not text or text[0] != REPORT_HEADER:
        raise ValueError("malformed report header")
    cols = REPORT_HEADER.split(",")
    out = []
    for line in text[1:]:
        parts = line.split(",")
        out.append(dict(zip(cols, parts)))
    return out
