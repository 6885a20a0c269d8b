"""Update-distribution estimation and placeholder allocation.

Segments are expanded with NULL slots sized proportionally to the estimated
mass of incoming updates between consecutive keys, so hot regions receive
more free slots. The estimate is a Gaussian mixture fit by EM, with a
uniform fallback until enough updates have been observed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.special import ndtr  # standard normal CDF, vectorized

__all__ = [
    "DensityModel",
    "GappedSegment",
    "fit_update_distribution",
    "gap_size",
    "expand_segment",
    "insert_in_gap",
    "place_between",
]

EM_MAX_ITER = 100
EM_LL_TOL = 1e-6
CEIL_GUARD = 1e-9  # keeps exact ratios like 0.2*10 from ceiling up to 3


@dataclass
class DensityModel:
    """Mixture density over the key axis; immutable after fitting.

    ``components`` holds (weight, mean, variance) triples. When too few
    samples were seen, ``fallback_uniform`` is set and the model behaves as
    a uniform density over any queried interval.
    """

    components: list[tuple[float, float, float]]
    sample_count: int
    fallback_uniform: bool
    log_likelihoods: list[float] = field(default_factory=list, repr=False)

    def cdf(self, x) -> np.ndarray:
        """Unnormalized CDF; only mass ratios are meaningful for uniform."""
        arr = np.asarray(x, dtype=np.float64)
        if self.fallback_uniform:
            return arr
        total = np.zeros_like(arr)
        for w, mu, var in self.components:
            total = total + w * ndtr((arr - mu) / math.sqrt(var))
        return total

    def pdf(self, x) -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64)
        if self.fallback_uniform:
            return np.ones_like(arr)
        total = np.zeros_like(arr)
        for w, mu, var in self.components:
            total = total + w * np.exp(-0.5 * (arr - mu) ** 2 / var) / math.sqrt(2 * math.pi * var)
        return total

    def mass(self, a: float, b: float) -> float:
        return float(self.cdf(b) - self.cdf(a))

    @property
    def size_bytes(self) -> int:
        return 24 * len(self.components) + 32


def uniform_density() -> DensityModel:
    return DensityModel(components=[], sample_count=0, fallback_uniform=True)


def fit_update_distribution(
    observed_updates: Sequence[int],
    k_components: int,
    min_fit_samples: int,
) -> DensityModel:
    """Fit the incoming-update density, or fall back to uniform.

    EM is seeded deterministically (component means at sample quantiles), so
    identical inputs always produce identical fits.
    """
    if k_components < 1:
        raise ValueError("invalid component count")
    x = np.asarray(observed_updates, dtype=np.float64)
    n = int(x.size)
    if n == 0 or n < min_fit_samples:
        return DensityModel(components=[], sample_count=n, fallback_uniform=True)

    k = min(k_components, n)
    span = float(x.max() - x.min())
    var_floor = 1e-9 * span * span if span > 0 else 1e-9

    means = np.quantile(x, (np.arange(k) + 0.5) / k)
    variances = np.full(k, max(float(x.var()), var_floor))
    weights = np.full(k, 1.0 / k)

    ll_trace: list[float] = []
    prev_ll = -math.inf
    xcol = x[:, None]
    for _ in range(EM_MAX_ITER):
        # E step: responsibilities in log space for stability.
        log_comp = (
            np.log(weights)[None, :]
            - 0.5 * np.log(2 * math.pi * variances)[None, :]
            - 0.5 * (xcol - means[None, :]) ** 2 / variances[None, :]
        )
        m = log_comp.max(axis=1, keepdims=True)
        log_norm = m + np.log(np.exp(log_comp - m).sum(axis=1, keepdims=True))
        ll = float(log_norm.sum())
        ll_trace.append(ll)
        resp = np.exp(log_comp - log_norm)

        # M step, with a variance floor and tiny-cluster guard.
        nk = resp.sum(axis=0)
        safe = nk > 1e-12
        weights = np.maximum(nk / n, 1e-12)
        weights = weights / weights.sum()
        means = np.where(safe, (resp * xcol).sum(axis=0) / np.maximum(nk, 1e-12), means)
        variances = np.where(
            safe,
            (resp * (xcol - means[None, :]) ** 2).sum(axis=0) / np.maximum(nk, 1e-12),
            variances,
        )
        variances = np.maximum(variances, var_floor)

        if ll - prev_ll < EM_LL_TOL and math.isfinite(prev_ll):
            break
        prev_ll = ll

    comps = [(float(w), float(mu), float(v)) for w, mu, v in zip(weights, means, variances)]
    return DensityModel(components=comps, sample_count=n, fallback_uniform=False, log_likelihoods=ll_trace)


def gap_size(
    d: DensityModel,
    k_i: int,
    k_j: int,
    d_max: int,
    domain: tuple[int, int],
) -> int:
    """Gap budget for the interval (k_i, k_j): the share of d_max matching
    the update mass of the interval relative to the whole domain, rounded up."""
    if k_i >= k_j:
        raise ValueError("empty interval")
    if d_max < 0:
        raise ValueError("d_max must be >= 0")
    ratio = _mass_ratio(d, float(k_i), float(k_j), float(domain[0]), float(domain[1]))
    return int(math.ceil(d_max * ratio - CEIL_GUARD)) if ratio > 0 else 0


def _mass_ratio(d: DensityModel, a: float, b: float, lo: float, hi: float) -> float:
    den = d.mass(lo, hi)
    if den <= 0.0:
        # Degenerate mass in the domain: fall back to interval length share.
        den_len = hi - lo
        return min(max((b - a) / den_len, 0.0), 1.0) if den_len > 0 else 1.0
    return min(max(d.mass(a, b) / den, 0.0), 1.0)


class GappedSegment:
    """Sorted key/value slots with NULL placeholders.

    Occupied slots are strictly sorted by key; unoccupied slots carry no key.
    The arrays may be views into a parent segment's buffers after a split,
    which keeps splits O(1) in the untouched parts.
    """

    __slots__ = (
        "keys", "occ", "vals", "gamma", "alpha", "live_count", "null_count",
        "key_range", "model", "scale", "offset", "model_err", "slack",
    )

    def __init__(self, keys, occ, vals, gamma, alpha, live_count, key_range):
        self.keys: np.ndarray = keys
        self.occ: np.ndarray = occ
        self.vals: np.ndarray = vals
        self.gamma: Optional[np.ndarray] = gamma
        self.alpha: float = alpha
        self.live_count: int = live_count
        self.null_count: int = len(keys) - live_count
        self.key_range: tuple[int, int] = key_range
        # Locator: local slot estimate is scale * model.predict(k) + offset,
        # certified within model_err for the keys present when it was set.
        self.model = None
        self.scale: float = 1.0
        self.offset: float = 0.0
        self.model_err: float = 0.0
        self.slack: int = 1  # covers keys inserted between certified ones

    def __len__(self) -> int:
        return len(self.keys)

    # -- locator ------------------------------------------------------------

    def set_locator(self, model, scale: float, offset: float, model_err: float, slack: int) -> None:
        self.model = model
        self.scale = scale
        self.offset = offset
        self.model_err = model_err
        self.slack = slack

    def center(self, key) -> float:
        if self.model is None:
            return (len(self.keys) - 1) / 2.0
        return self.scale * self.model.predict(key) + self.offset

    def window(self, key, xi: int) -> tuple[int, int]:
        if self.model is None:
            return 0, len(self.keys)
        c = self.center(key)
        half = self.model_err + self.slack + xi
        lo = max(int(math.floor(c - half)), 0)
        hi = min(int(math.ceil(c + half)) + 1, len(self.keys))
        return lo, hi

    # -- queries ------------------------------------------------------------

    def find_in_window(self, key, xi: int) -> tuple[Optional[int], int]:
        """Binary search over occupied slots inside the locator window.

        Returns (slot, slots_inspected). Live keys are always in-window by
        locator certification, so a miss means the key is absent.
        """
        lo, hi = self.window(key, xi)
        if lo >= hi:
            return None, 0
        occ = self.occ[lo:hi]
        live = np.flatnonzero(occ)
        if live.size == 0:
            return None, hi - lo
        kk = self.keys[lo + live]
        j = int(np.searchsorted(kk, key))
        if j < kk.size and int(kk[j]) == int(key):
            return lo + int(live[j]), hi - lo
        return None, hi - lo

    def next_live(self, j: int) -> Optional[int]:
        n = len(self.occ)
        if j < n and self.occ[j]:
            return j
        step = 64
        while j < n:
            chunk = self.occ[j : j + step]
            idx = int(chunk.argmax())
            if chunk[idx]:
                return j + idx
            j += len(chunk)
            step *= 4
        return None

    def prev_live(self, j: int) -> Optional[int]:
        if 0 <= j < len(self.occ) and self.occ[j]:
            return j
        step = 64
        hi = j + 1
        while hi > 0:
            lo = max(hi - step, 0)
            chunk = self.occ[lo:hi]
            if chunk.any():
                return lo + int(len(chunk) - 1 - chunk[::-1].argmax())
            hi = lo
            step *= 4
        return None

    def bisect_live(self, key) -> tuple[Optional[int], Optional[int], Optional[int]]:
        """(pred_slot, succ_slot, exact_slot) among occupied slots."""
        n = len(self.keys)
        if n <= 8:
            pred = succ = exact = None
            for i in range(n):
                if not self.occ[i]:
                    continue
                kv = int(self.keys[i])
                if kv < key:
                    pred = i
                else:
                    succ = i
                    if kv == key:
                        exact = i
                    break
            return pred, succ, exact
        lo, hi = 0, n
        while lo < hi:
            mid = (lo + hi) // 2
            j = self.next_live(mid)
            if j is None or int(self.keys[j]) >= int(key):
                hi = mid
            else:
                lo = j + 1
        succ = self.next_live(lo)
        exact = None
        if succ is not None and int(self.keys[succ]) == int(key):
            exact = succ
        pred_from = (succ - 1) if succ is not None else (n - 1)
        pred = self.prev_live(pred_from) if pred_from >= 0 else None
        return pred, succ, exact

    def locate(self, key) -> tuple[Optional[int], Optional[int], Optional[int]]:
        """Like ``bisect_live`` but resolved inside the certified window when
        both neighbours fall there; falls back to the exact scan otherwise."""
        if self.model is None:
            return self.bisect_live(key)
        lo, hi = self.window(key, 2)
        if lo >= hi:
            return self.bisect_live(key)
        live = np.flatnonzero(self.occ[lo:hi])
        if live.size < 2:
            return self.bisect_live(key)
        kk = self.keys[lo + live]
        j = int(np.searchsorted(kk, key))
        if j <= 0 or j >= kk.size:
            return self.bisect_live(key)
        succ = lo + int(live[j])
        pred = lo + int(live[j - 1])
        exact = succ if int(kk[j]) == int(key) else None
        return pred, succ, exact

    def find_exact(self, key) -> Optional[int]:
        return self.locate(key)[2]

    def live_pairs(self, lo=None, hi=None) -> Iterator[tuple[int, object]]:
        idx = np.flatnonzero(self.occ)
        if idx.size == 0:
            return
        kk = self.keys[idx]
        start = 0 if lo is None else int(np.searchsorted(kk, lo, side="left"))
        stop = kk.size if hi is None else int(np.searchsorted(kk, hi, side="right"))
        for j in range(start, stop):
            slot = int(idx[j])
            yield int(kk[j]), self.vals[slot]

    def live_keys(self) -> np.ndarray:
        return self.keys[self.occ]

    # -- mutation -----------------------------------------------------------

    def fill_slot(self, slot: int, key, value) -> None:
        self.keys[slot] = key
        self.occ[slot] = True
        self.vals[slot] = value
        self.live_count += 1
        self.null_count -= 1

    def nullify_slot(self, slot: int) -> None:
        self.occ[slot] = False
        self.vals[slot] = None
        self.live_count -= 1
        self.null_count += 1
        # A wider empty run may now sit between the neighbours; future
        # inserts landing there must stay within the search window.
        pred = self.prev_live(slot)
        succ = self.next_live(slot)
        left = pred if pred is not None else -1
        right = succ if succ is not None else len(self.keys)
        self.slack = max(self.slack, right - left)

    def set_value(self, slot: int, value) -> None:
        self.vals[slot] = value


def expand_segment(
    keys_values: Sequence[tuple[int, object]],
    d: DensityModel,
    d_max: int,
) -> GappedSegment:
    """Lay out sorted pairs with NULL placeholders ahead of each key.

    Each key after the first is preceded by the gap budget of its
    predecessor interval; the first key mirrors the first interval so the
    leading region is not starved.
    """
    if not len(keys_values):
        raise ValueError("empty segment")
    if len(keys_values) == 1:
        k, v = keys_values[0]
        vals = np.empty(1, dtype=object)
        vals[0] = v
        return GappedSegment(
            keys=np.array([int(k)], dtype=np.uint64),
            occ=np.ones(1, dtype=bool),
            vals=vals,
            gamma=np.zeros(1, dtype=np.int64),
            alpha=0.0,
            live_count=1,
            key_range=(int(k), int(k)),
        )
    keys = np.asarray([int(k) for k, _ in keys_values], dtype=np.uint64)
    if keys.size > 1 and not np.all(keys[1:] > keys[:-1]):
        raise ValueError("segment keys not strictly sorted")
    n = keys.size

    if n == 1 or d_max == 0:
        gamma = np.zeros(n, dtype=np.int64)
    else:
        xs = keys.astype(np.float64)
        cdf = d.cdf(xs)
        den = float(cdf[-1] - cdf[0])
        if den <= 0.0:
            span = xs[-1] - xs[0]
            ratios = np.diff(xs) / span if span > 0 else np.full(n - 1, 1.0 / (n - 1))
        else:
            ratios = np.diff(cdf) / den
        ratios = np.clip(ratios, 0.0, 1.0)
        pair_gaps = np.ceil(d_max * ratios - CEIL_GUARD).astype(np.int64)
        pair_gaps = np.maximum(pair_gaps, 0)
        gamma = np.concatenate(([pair_gaps[0]], pair_gaps))

    positions = np.cumsum(gamma) + np.arange(n, dtype=np.int64)
    total = int(n + gamma.sum())
    slot_keys = np.zeros(total, dtype=np.uint64)
    occ = np.zeros(total, dtype=bool)
    vals = np.empty(total, dtype=object)
    slot_keys[positions] = keys
    occ[positions] = True
    for i, (_, v) in enumerate(keys_values):
        vals[positions[i]] = v

    alpha = float(gamma.sum() / n)
    seg = GappedSegment(
        keys=slot_keys,
        occ=occ,
        vals=vals,
        gamma=gamma,
        alpha=alpha,
        live_count=n,
        key_range=(int(keys[0]), int(keys[-1])),
    )
    seg.slack = int(gamma.max()) + 1 if n else 1
    return seg


def _slot_certified(seg: GappedSegment, slot: int, key) -> bool:
    """True when the slot stays inside the key's certified search window.

    Placements / moves are committed only under this bound, so every live
    key is always findable by the bounded last-mile search.
    """
    if seg.model is None:
        return True
    return abs(slot - seg.center(key)) <= seg.model_err + seg.slack


def insert_in_gap(seg: GappedSegment, key, value, shift_window: int = 8) -> Optional[int]:
    """Place (key, value) in a NULL slot between its sort neighbours.

    Prefers the free slot nearest the locator's estimate. When the
    neighbouring run is full, up to ``shift_window`` occupied slots may be
    shifted toward the nearest free slot on either side. A placement or move
    that would leave any key outside its certified window is refused.
    Returns the filled slot, or None when there is no room.
    """
    pred, succ, exact = seg.locate(key)
    if exact is not None:
        raise KeyError("key exists")
    return place_between(seg, key, value, pred, succ, shift_window)


def place_between(
    seg: GappedSegment, key, value, pred: Optional[int], succ: Optional[int], shift_window: int = 8
) -> Optional[int]:
    """Gap placement with the sort neighbours already resolved."""
    left = pred if pred is not None else -1
    right = succ if succ is not None else len(seg.keys)

    if right - left > 1:
        # Every slot strictly between consecutive live slots is NULL.
        c = seg.center(key)
        slot = int(min(max(round(c), left + 1), right - 1))
        if _slot_certified(seg, slot, key):
            seg.fill_slot(slot, key, value)
            return slot
        return None

    # No room between neighbours: look for a shiftable run on each side.
    left_gap = None
    steps = 0
    j = left
    while j >= 0 and steps <= shift_window:
        if not seg.occ[j]:
            left_gap = (j, steps)
            break
        steps += 1
        j -= 1
    right_gap = None
    steps = 0
    j = right
    while j < len(seg.keys) and steps <= shift_window:
        if not seg.occ[j]:
            right_gap = (j, steps)
            break
        steps += 1
        j += 1

    sides = []
    if left_gap is not None:
        sides.append(("L", left_gap))
    if right_gap is not None:
        sides.append(("R", right_gap))
    sides.sort(key=lambda t: t[1][1])

    for side, (g, _) in sides:
        if side == "L":
            ok = _slot_certified(seg, left, key) and all(
                _slot_certified(seg, s - 1, int(seg.keys[s])) for s in range(g + 1, left + 1)
            )
            if ok:
                _shift_block(seg, g + 1, left + 1, -1)
                seg.fill_slot(left, key, value)
                return left
        else:
            ok = _slot_certified(seg, right, key) and all(
                _slot_certified(seg, s + 1, int(seg.keys[s])) for s in range(right, g)
            )
            if ok:
                _shift_block(seg, right, g, +1)
                seg.fill_slot(right, key, value)
                return right
    return None


def _shift_block(seg: GappedSegment, start: int, stop: int, direction: int) -> None:
    """Move occupied slots [start, stop) one slot left (-1) or right (+1)."""
    if start >= stop:
        return
    # Runs are short (<= shift_window); copy to sidestep overlap rules.
    if direction < 0:
        seg.keys[start - 1 : stop - 1] = seg.keys[start:stop].copy()
        seg.occ[start - 1 : stop - 1] = seg.occ[start:stop].copy()
        seg.vals[start - 1 : stop - 1] = seg.vals[start:stop].copy()
        seg.occ[stop - 1] = False
        seg.vals[stop - 1] = None
    else:
        seg.keys[start + 1 : stop + 1] = seg.keys[start:stop].copy()
        seg.occ[start + 1 : stop + 1] = seg.occ[start:stop].copy()
        seg.vals[start + 1 : stop + 1] = seg.vals[start:stop].copy()
        seg.occ[start] = False
        seg.vals[start] = None
