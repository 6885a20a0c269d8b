import math

import numpy as np
import pytest
from scipy.integrate import quad

from uplif.model import ModelConfig, train
from uplif.nullifier import (
    DensityModel,
    expand_segment,
    fit_update_distribution,
    gap_size,
    insert_in_gap,
    uniform_density,
)


def _gauss(mean, var):
    return DensityModel(components=[(1.0, mean, var)], sample_count=10**6, fallback_uniform=False)


def _quad_mass(d: DensityModel, a: float, b: float) -> float:
    val, _ = quad(lambda x: float(d.pdf(x)), a, b, limit=200)
    return val


def quad_gap_oracle(d: DensityModel, ki, kj, d_max, domain) -> int:
    num = _quad_mass(d, ki, kj)
    den = _quad_mass(d, domain[0], domain[1])
    return math.ceil(d_max * num / den - 1e-9)


# -- fitting ------------------------------------------------------------------


def test_no_updates_gives_uniform_fallback():
    d = fit_update_distribution([], 3, 256)
    assert d.fallback_uniform
    assert d.sample_count == 0


def test_below_threshold_gives_uniform_fallback():
    d = fit_update_distribution(list(range(100)), 3, 256)
    assert d.fallback_uniform


def test_single_gaussian_recovered():
    rng = np.random.default_rng(5)
    samples = rng.normal(100.0, 5.0, 10_000)
    d = fit_update_distribution(samples, 1, 256)
    assert not d.fallback_uniform
    (w, mu, var) = d.components[0]
    assert w == pytest.approx(1.0, abs=1e-9)
    assert abs(mu - 100.0) < 0.5
    assert abs(var - 25.0) / 25.0 < 0.10


def test_degenerate_cluster_floors_variance():
    d = fit_update_distribution([7.0] * 300, 1, 256)
    (w, mu, var) = d.components[0]
    assert mu == pytest.approx(7.0)
    assert var == pytest.approx(1e-9)


def test_invalid_component_count():
    with pytest.raises(ValueError, match="invalid component count"):
        fit_update_distribution([1.0, 2.0], 0, 1)


def test_fit_is_deterministic():
    rng = np.random.default_rng(9)
    samples = rng.normal(0.0, 1.0, 2000) * 100 + 500
    d1 = fit_update_distribution(samples, 4, 256)
    d2 = fit_update_distribution(samples, 4, 256)
    assert d1.components == d2.components


def test_em_loglikelihood_nondecreasing():
    rng = np.random.default_rng(13)
    samples = np.concatenate([rng.normal(0, 1, 1500), rng.normal(50, 3, 1500)])
    d = fit_update_distribution(samples, 2, 256)
    lls = d.log_likelihoods
    assert len(lls) >= 2
    assert all(b >= a - 1e-6 for a, b in zip(lls, lls[1:]))


def test_weights_sum_to_one():
    rng = np.random.default_rng(17)
    samples = rng.lognormal(0, 1, 4000)
    d = fit_update_distribution(samples, 4, 256)
    assert sum(w for w, _, _ in d.components) == pytest.approx(1.0, abs=1e-9)
    assert all(v > 0 for _, _, v in d.components)


# -- gap sizing ----------------------------------------------------------------


def test_uniform_gap_share():
    d = uniform_density()
    assert gap_size(d, 100, 120, 10, (100, 200)) == 2


def test_full_domain_gap_is_dmax():
    for d in (uniform_density(), _gauss(50, 100.0)):
        assert gap_size(d, 0, 100, 37, (0, 100)) == 37


def test_gaussian_gap_against_closed_form():
    d = _gauss(50.0, 100.0)
    assert gap_size(d, 40, 60, 100, (0, 100)) == 69


def test_gap_empty_interval_rejected():
    with pytest.raises(ValueError, match="empty interval"):
        gap_size(uniform_density(), 10, 10, 5, (0, 100))


def test_gap_against_quadrature_oracle():
    rng = np.random.default_rng(21)
    for _ in range(40):
        k = int(rng.integers(1, 4))
        comps = []
        for _ in range(k):
            comps.append((float(rng.random()), float(rng.uniform(0, 1000)), float(rng.uniform(1, 400)) ** 2))
        total = sum(w for w, _, _ in comps)
        comps = [(w / total, m, v) for w, m, v in comps]
        d = DensityModel(components=comps, sample_count=1000, fallback_uniform=False)
        lo, hi = 0.0, 1000.0
        a = float(rng.uniform(lo, hi - 1))
        b = float(rng.uniform(a + 0.5, hi))
        got = gap_size(d, a, b, 100, (lo, hi))
        want = quad_gap_oracle(d, a, b, 100, (lo, hi))
        assert abs(got - want) <= 1


def test_gap_additivity_slack_one():
    rng = np.random.default_rng(25)
    d = _gauss(500.0, 200.0**2)
    for _ in range(200):
        pts = np.sort(rng.uniform(0, 1000, 3))
        a, b, c = (float(x) for x in pts)
        if b - a < 1e-6 or c - b < 1e-6:
            continue
        whole = gap_size(d, a, c, 64, (0, 1000))
        parts = gap_size(d, a, b, 64, (0, 1000)) + gap_size(d, b, c, 64, (0, 1000))
        assert parts - 1 <= whole <= parts


# -- expansion -------------------------------------------------------------------


def test_uniform_expansion_layout():
    seg = expand_segment([(1, "a"), (2, "b"), (3, "c")], uniform_density(), 4)
    assert len(seg.keys) == 9
    assert seg.alpha == pytest.approx(2.0)
    assert list(seg.gamma) == [2, 2, 2]
    occ_slots = list(np.flatnonzero(seg.occ))
    assert occ_slots == [2, 5, 8]
    assert [int(k) for k in seg.keys[seg.occ]] == [1, 2, 3]


def test_single_key_expansion():
    seg = expand_segment([(9, "x")], _gauss(9, 4.0), 50)
    assert len(seg.keys) == 1
    assert seg.alpha == 0.0
    assert seg.live_count == 1


def test_concentrated_density_gets_more_gaps():
    d = _gauss(25.0, 3.0**2)  # mass concentrated between 20 and 30
    seg = expand_segment([(10, 0), (20, 1), (30, 2), (40, 3)], d, 64)
    g = {int(k): int(gm) for k, gm in zip([10, 20, 30, 40], seg.gamma)}
    assert g[30] > g[20]
    assert g[30] > g[40]
    # Per-interval quadrature oracle.
    for kk, (a, b) in [(20, (10, 20)), (30, (20, 30)), (40, (30, 40))]:
        assert g[kk] == quad_gap_oracle(d, a, b, 64, (10, 40))


def test_expansion_sum_bound():
    rng = np.random.default_rng(33)
    keys = np.unique(rng.integers(0, 10**6, 500))
    pairs = [(int(k), None) for k in keys]
    d = _gauss(5 * 10**5, (10**5) ** 2)
    d_max = 64
    seg = expand_segment(pairs, d, d_max)
    pair_sum = int(seg.gamma[1:].sum())
    assert pair_sum <= d_max + (len(keys) - 1)


def test_expansion_projection_roundtrip():
    rng = np.random.default_rng(37)
    keys = np.unique(rng.integers(0, 10**9, 300))
    pairs = [(int(k), int(k) * 2) for k in keys]
    seg = expand_segment(pairs, uniform_density(), 32)
    assert [int(k) for k in seg.live_keys()] == [k for k, _ in pairs]
    assert [v for _, v in seg.live_pairs()] == [v for _, v in pairs]
    assert len(seg.keys) == seg.live_count + int(seg.gamma.sum())


def test_expansion_rejects_unsorted():
    with pytest.raises(ValueError):
        expand_segment([(3, 0), (1, 1)], uniform_density(), 4)
    with pytest.raises(ValueError):
        expand_segment([], uniform_density(), 4)


# -- gap insertion -----------------------------------------------------------------


def test_insert_into_leading_gap():
    seg = expand_segment([(10, "a"), (20, "b")], uniform_density(), 4)
    slot = insert_in_gap(seg, 5, "z")
    assert slot is not None
    assert [int(k) for k in seg.live_keys()] == [5, 10, 20]


def test_insert_no_gaps_reports_no_room():
    seg = expand_segment([(1, "a"), (2, "b"), (3, "c")], uniform_density(), 0)
    assert len(seg.keys) == 3
    assert insert_in_gap(seg, 5, "x") is None


def test_insert_duplicate_rejected():
    seg = expand_segment([(1, "a"), (2, "b")], uniform_density(), 4)
    with pytest.raises(KeyError, match="key exists"):
        insert_in_gap(seg, 2, "again")


def test_insert_preserves_relative_order():
    rng = np.random.default_rng(41)
    keys = sorted(rng.choice(10**6, 200, replace=False))
    seg = expand_segment([(int(k), int(k)) for k in keys], uniform_density(), 400)
    inserted = []
    for _ in range(150):
        k = int(rng.integers(0, 10**6))
        if k in inserted or k in keys:
            continue
        if insert_in_gap(seg, k, k) is not None:
            inserted.append(k)
    live = [int(x) for x in seg.live_keys()]
    assert live == sorted(set(keys) | set(inserted))


def test_insert_fills_middle_placeholder_without_growth():
    seg = expand_segment([(1, "a"), (6, "b"), (8, "c")], uniform_density(), 6)
    total = len(seg.keys)
    slot = insert_in_gap(seg, 5, "v5")
    assert slot is not None
    assert len(seg.keys) == total
    assert seg.vals[slot] == "v5"


def test_shift_window_respected():
    # A full run longer than shift_window on both sides -> no room.
    pairs = [(i, i) for i in range(1, 30)]
    seg = expand_segment(pairs, uniform_density(), 0)
    assert insert_in_gap(seg, 0, "x", shift_window=8) is None


def test_nullify_reuses_slot():
    seg = expand_segment([(1, "a"), (2, "b"), (3, "c")], uniform_density(), 0)
    slot = seg.find_exact(2)
    seg.nullify_slot(slot)
    assert seg.find_exact(2) is None
    back = insert_in_gap(seg, 2, "b2")
    assert back == slot
    assert seg.vals[slot] == "b2"
