"""Public updatable-index API.

``UplifIndex`` composes the learned position model, the gapped key layout,
and the adjustment tree: lookups descend the tree for buffered hits and the
owning segment, then run a bounded last-mile search around the segment's
certified position estimate. Inserts fill placeholders when possible and
fall back to a segment split buffered in the tree.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .bmat import Backend, Bmat, DeleteOutcome, PerfMeasures, UpdateOutcome
from .model import Model, ModelConfig, train
from .nullifier import DensityModel, expand_segment, fit_update_distribution, uniform_density

__all__ = ["IndexConfig", "UplifIndex", "bulk_load"]


@dataclass(frozen=True)
class IndexConfig:
    """Index-wide knobs.

    ``d_max`` is the total placeholder budget spread over one segment
    expansion; ``xi`` is the fixed extra half-width of the last-mile window;
    ``K`` bounds the middle segment created by a split.
    """

    K: int = 64
    d_max: int = 64
    xi: int = 8
    gmm_components: int = 4
    min_fit_samples: int = 256
    shift_window: int = 8
    backend: Backend = Backend.RBMAT
    branching: int = 32
    update_log_capacity: int = 65536
    model_cfg: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.d_max < 0:
            raise ValueError("d_max must be >= 0")
        if self.xi < 0:
            raise ValueError("xi must be >= 0")
        if self.gmm_components < 1:
            raise ValueError("gmm_components must be >= 1")
        if self.min_fit_samples < 1:
            raise ValueError("min_fit_samples must be >= 1")
        if self.shift_window < 0:
            raise ValueError("shift_window must be >= 0")
        if self.branching < 4:
            raise ValueError("branching must be >= 4")


class UplifIndex:
    """Single-writer updatable index over integer keys.

    Values may be any non-None object; ``None`` marks absence throughout.
    """

    def __init__(self, base_model: Model, bmat: Bmat, config: IndexConfig, density: DensityModel):
        self.base_model = base_model
        self.bmat = bmat
        self.config = config
        self.density = density
        self.update_log: deque = deque(maxlen=config.update_log_capacity)
        self.last_probe_slots = 0
        self.last_probe_nodes = 0

    # -- construction ---------------------------------------------------

    @classmethod
    def bulk_load(cls, pairs: Sequence[tuple[int, object]], cfg: Optional[IndexConfig] = None) -> "UplifIndex":
        cfg = cfg or IndexConfig()
        if not len(pairs):
            raise ValueError("empty bulk load")
        keys = np.asarray([int(k) for k, _ in pairs], dtype=np.uint64)
        if keys.size > 1 and not np.all(keys[1:] > keys[:-1]):
            raise ValueError("bulk load requires sorted keys")

        density = uniform_density()
        root = expand_segment(pairs, density, cfg.d_max)
        positions = np.flatnonzero(root.occ)
        base_model = train(root.live_keys(), cfg.model_cfg, positions=positions)
        root.set_locator(base_model, 1.0, 0.0, float(base_model.error_bound), root.slack)
        root.key_range = (0, np.iinfo(np.uint64).max)

        tree = Bmat(cfg.backend, root, cfg.branching)
        return cls(base_model, tree, cfg, density)

    @property
    def root_segment(self):
        return self.bmat.base_segment

    # -- point and range queries -----------------------------------------

    def get(self, key: int) -> Optional[object]:
        adj = self.bmat.lookup_adjustment(key)
        self.last_probe_nodes = adj.nodes_visited
        if adj.hit is not None:
            self.last_probe_slots = 0
            return adj.hit
        slot, inspected = adj.segment.find_in_window(key, self.config.xi)
        self.last_probe_slots = inspected
        if slot is None:
            return None
        return adj.segment.vals[slot]

    def range(self, lo: int, hi: int) -> list[tuple[int, object]]:
        if lo > hi:
            raise ValueError("inverted range")
        out: list[tuple[int, object]] = []
        for k, v in self.bmat.base_segment.live_pairs(lo, hi):
            out.append((k, v))
        for e in self.bmat.entries():
            bk = e.ckey[0]
            shadow = bk if e.value is not None else None
            if e.value is not None and lo <= bk <= hi:
                out.append((bk, e.value))
            for k, v in e.seg.live_pairs(lo, hi):
                if k == shadow:
                    continue
                out.append((k, v))
        return out

    # -- updates -----------------------------------------------------------

    def insert(self, key: int, value) -> None:
        if value is None:
            raise ValueError("None values are not supported")
        self.bmat.insert_update(
            int(key), value, self.config.K, self.density, self.config.d_max, self.config.shift_window
        )
        self.update_log.append(int(key))

    def remove(self, key: int) -> bool:
        return self.bmat.delete_update(int(key)) is not DeleteOutcome.NOT_FOUND

    def refresh_density(self) -> None:
        if len(self.update_log) >= self.config.min_fit_samples:
            self.density = fit_update_distribution(
                list(self.update_log), self.config.gmm_components, self.config.min_fit_samples
            )

    # -- accounting ----------------------------------------------------------

    def memory_report(self) -> dict:
        """Byte accounting of the index structures; user values excluded."""
        models = {}
        key_slot_bytes = 0
        null_slot_bytes = 0
        for seg in self.bmat.segments():
            key_slot_bytes += 8 * seg.live_count
            null_slot_bytes += 16 * seg.null_count
            if seg.model is not None:
                models[id(seg.model)] = seg.model
        report = {
            "model_bytes": sum(m.size_bytes for m in models.values()),
            "node_bytes": self.bmat.memory_bytes(),
            "key_slot_bytes": key_slot_bytes,
            "null_slot_bytes": null_slot_bytes,
            "density_bytes": self.density.size_bytes,
        }
        report["total"] = sum(report.values())
        return report

    def memory_usage(self) -> int:
        return self.memory_report()["total"]

    def stats(self) -> PerfMeasures:
        return self.bmat.stats()

    @property
    def live_count(self) -> int:
        buffered = sum(1 for e in self.bmat.entries() if e.value is not None)
        return sum(s.live_count for s in self.bmat.segments()) + buffered

    def key_bounds(self) -> Optional[tuple[int, int]]:
        lo = None
        hi = None
        for seg in self.bmat.segments():
            live = seg.live_keys()
            if live.size:
                first, last = int(live[0]), int(live[-1])
                lo = first if lo is None else min(lo, first)
                hi = last if hi is None else max(hi, last)
        for e in self.bmat.entries():
            if e.value is not None:
                bk = e.ckey[0]
                lo = bk if lo is None else min(lo, bk)
                hi = bk if hi is None else max(hi, bk)
        return None if lo is None else (lo, hi)

    def validate(self) -> None:
        self.bmat.validate()


def bulk_load(pairs: Sequence[tuple[int, object]], cfg: Optional[IndexConfig] = None) -> UplifIndex:
    """Module-level alias for ``UplifIndex.bulk_load``."""
    return UplifIndex.bulk_load(pairs, cfg)
