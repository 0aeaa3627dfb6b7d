import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmfsdm.counting import (
    CountingConfig,
    EventStream,
    accidental_rate,
    add_background,
    count_coincidences,
    derive_rng,
    fractional_quantum_power,
    group_fqp,
    output_ratio,
    poisson_times,
    simulate_pair_stream,
    snr,
    thin_stream,
)
from fmfsdm.errors import ContractError, DomainError, NoSignalError


def brute_force_greedy(a, b, w):
    used = set()
    n = 0
    for t in a:
        for j, u in enumerate(b):
            if j not in used and abs(u - t) <= w:
                used.add(j)
                n += 1
                break
    return n


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 100), max_size=30), st.lists(st.floats(0, 100), max_size=30),
       st.floats(0.01, 5))
def test_greedy_matches_brute_force(a, b, w):
    a, b = sorted(a), sorted(b)
    assert count_coincidences(a, b, w, 100.0).count == brute_force_greedy(a, b, w)


def test_all_pairs_counts_every_pair():
    a = [1.0, 1.05]
    b = [1.02]
    assert count_coincidences(a, b, 0.1, 10.0).count == 1
    assert count_coincidences(a, b, 0.1, 10.0, all_pairs=True).count == 2


def test_unsorted_stream_rejected():
    with pytest.raises(ContractError):
        count_coincidences([2.0, 1.0], [1.0], 0.1, 10.0)
    with pytest.raises(ContractError):
        EventStream(np.array([0.5, 0.2]), 1.0)


def test_rng_determinism_and_independence():
    a = derive_rng(5, 1, 2).random(4)
    assert np.array_equal(a, derive_rng(5, 1, 2).random(4))
    assert not np.array_equal(a, derive_rng(5, 1, 3).random(4))
    with pytest.raises(DomainError):
        derive_rng(-1)


def test_poisson_count_concentration():
    # count ~ Poisson(rate*T); 5 sigma band
    rate, T = 2e4, 2.0
    n = poisson_times(rate, T, derive_rng(11)).size
    assert abs(n - rate * T) < 5 * math.sqrt(rate * T)


def test_poisson_interarrivals_exponential():
    t = poisson_times(1000.0, 50.0, derive_rng(3))
    gaps = np.diff(t)
    assert gaps.mean() == pytest.approx(1e-3, rel=5 * 1 / math.sqrt(gaps.size))
    assert np.all(gaps >= 0)


def test_thinning_binomial_bound():
    s = EventStream(np.linspace(0, 0.99, 20000), 1.0)
    kept = len(thin_stream(s, 0.3, derive_rng(9)))
    sd = math.sqrt(20000 * 0.3 * 0.7)
    assert abs(kept - 6000) < 5 * sd


def test_background_merges_sorted():
    s = EventStream(np.array([0.1, 0.5]), 1.0)
    merged = add_background(s, 100.0, 1.0, derive_rng(2))
    assert np.all(np.diff(merged.timestamps) >= 0)
    assert len(merged) >= 2


def test_pair_stream_fully_correlated():
    h, i = simulate_pair_stream(CountingConfig(pair_rate_in=500.0, acquisition=2.0, seed=4), 1)
    assert np.array_equal(h.timestamps, i.timestamps)
    assert count_coincidences(h, i, 1e-9).count == len(h)


def test_counting_config_collects_errors():
    with pytest.raises(DomainError) as info:
        CountingConfig(window=0, acquisition=-1, repetitions=0)
    assert str(info.value).count(";") == 2


def test_accidentals_and_ratio():
    assert accidental_rate(1e5, 1e5, 4e-9) == pytest.approx(80.0)
    assert output_ratio(120.0, 20.0, 1000.0) == (0.1, 0.02)
    with pytest.raises(DomainError):
        output_ratio(1.0, 0.0, 0.0)


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.floats(1e-3, 1e4), min_size=1, max_size=15), st.floats(1e-6, 1e6),
       st.floats(-30, 0))
def test_fqp_unit_sum_and_scale_invariance(net, scale, il):
    # net rates enter directly (R_ap = 0) so the rescaling itself is exact up to rounding
    net = np.array(net)
    zero = np.zeros(net.size)
    il_db = np.full(net.size, il)
    a = fractional_quantum_power(net, zero, 2600.0, il_db)
    b = fractional_quantum_power(net * scale, zero, 2600.0, il_db)
    assert a.fqp.sum() == 1.0
    assert b.fqp.sum() == 1.0
    np.testing.assert_allclose(a.fqp, b.fqp, rtol=1e-12, atol=1e-15)


def test_fqp_clamps_negative_net():
    res = fractional_quantum_power([10.0, 1.0, 30.0], [2.0, 2.0, 2.0], 100.0, [-3.0, -3.0, -6.0])
    assert res.clamped.tolist() == [False, True, False]
    assert res.fqp[1] == 0.0
    # u_p = net / (R_in T_p)
    np.testing.assert_allclose(res.u, [8 / (100 * 10 ** -0.3), 0.0, 28 / (100 * 10 ** -0.6)])
    with pytest.raises(NoSignalError):
        fractional_quantum_power([1.0], [2.0], 100.0, [0.0])


def test_group_fqp():
    assert group_fqp([0.1, 0.2, 0.3, 0.4], (1, 2, 2, 3)).tolist() == pytest.approx([0.1, 0.5, 0.4])


def test_snr_cases():
    s = snr(110.0, 111.0, 10.0)
    assert s.exact == pytest.approx(20.0)
    assert s.approximate == pytest.approx(10 * math.log10(110.0))
    assert snr(110.0, 110.0, 10.0).unbounded


@given(st.floats(1, 100), st.floats(1, 100))
def test_snr_strictly_decreasing(a, b):
    lo, hi = sorted((a, b))
    # gaps below the resolution of 100 + x vanish on addition
    if hi > lo * (1 + 1e-9):
        assert snr(100.0, 100.0 + hi, 5.0).exact < snr(100.0, 100.0 + lo, 5.0).exact
