import math

import numpy as np
import pytest

from conftest import SHIPPED, toy_dict
from fmfsdm.errors import DomainError
from fmfsdm.pipeline import (
    calibrate_extinction,
    link_paths,
    max_baud_rate,
    normalization_il_db,
    run_scenario,
    snr_vs_power_sweep,
    with_classical_output_power,
)
from fmfsdm.scenario import load_scenario, scenario_from_dict


def ideal_dict():
    d = toy_dict()
    d["fiber"] = {"length": 10.0, "groups": 2, "intra_group_rate": 0.0, "inter_group_d": {}}
    d["mux"] = {"insertion_loss_db": 0.0}
    d["demux"] = {"insertion_loss_db": 0.0}
    d["wdm_filters"] = [{"center": 1540, "passband_loss_db": 0.0, "extinction_db": 60}]
    d["detectors"] = {"herald": {"efficiency": 1.0, "dark_rate": 0.0}, "idler": {"efficiency": 1.0, "dark_rate": 0.0}}
    d["channels"] = [{"kind": "quantum", "mode": "HG00", "wavelength": 1540, "pair_rate": 1000.0}]
    d["counting"]["pair_rate_in"] = 1000.0
    d["normalization"] = {"insertion_loss_db": [0.0, 0.0, 0.0]}
    return d


def test_identity_pipeline():
    res = run_scenario(scenario_from_dict(ideal_dict()))
    np.testing.assert_allclose(res.fqp.fqp, [1.0, 0.0, 0.0], atol=1e-15)
    # accidentals are subtracted, so the ideal link returns L_p = 1
    assert res.stats[0].L_p == pytest.approx(1.0, rel=1e-12)
    snr = next(iter(res.snr.values()))
    assert snr.unbounded


def test_analytic_true_coincidences(toy):
    res = run_scenario(toy)
    paths = link_paths(toy)
    t_f = 10 ** -0.05
    pairs = np.array([20000.0, 10000.0, 0.0])
    true = 0.8 * 0.5 * t_f * (paths.composite @ pairs)
    got = np.array([s.R_cp - s.R_ap for s in res.stats])
    np.testing.assert_allclose(got, true, rtol=1e-12)
    # R_ap = 2 R1 R2 t_c
    for s in res.stats:
        assert s.R_ap == pytest.approx(2 * s.R_1p * s.R_2p * 4e-9)


def test_stage_passivity(toy):
    res = run_scenario(toy)
    totals = [res.stages[k].sum() for k in ("launched", "mux", "fiber", "demux", "filter", "detected")]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(totals, totals[1:]))
    assert res.group_fqp.sum() == pytest.approx(1.0, abs=1e-15)


def test_leakage_rate_formula(toy):
    res = run_scenario(toy)
    paths = link_paths(toy)
    h, c = 6.62607015e-34, 299792458.0
    expect = paths.composite[:, 2] * 1e-6 * 1e-6 / (h * c / 1565e-9)
    np.testing.assert_allclose(res.leakage_photon_rate, expect, rtol=1e-12)


def test_normalization_from_back_to_back(toy):
    il = normalization_il_db(toy)
    ref = link_paths(toy, toy.reference_length).composite.sum(axis=0)
    np.testing.assert_allclose(10 ** (il / 10), ref)


def test_classical_output_power_backcomputed(toy):
    s = with_classical_output_power(toy, 5e-9)
    paths = link_paths(s)
    ch = s.plan.classical[0]
    assert ch.power * paths.composite[ch.mode.index, ch.mode.index] == pytest.approx(5e-9)


def test_sweep_monotone_and_slope(toy):
    powers = [0.0, 1e-9, 1e-8, 1e-7, 1e-6]
    pts = snr_vs_power_sweep(toy, powers, "HG00")
    assert pts[0].unbounded
    vals = [p.snr_exact for p in pts[1:]]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] - vals[-2] == pytest.approx(-10.0, abs=1e-6)
    with pytest.raises(DomainError):
        snr_vs_power_sweep(toy, [1e-6, 1e-9], "HG00")


def test_sweep_jobs_do_not_change_results(toy):
    powers = [1e-9, 1e-8, 1e-7]
    assert snr_vs_power_sweep(toy, powers, "HG00", jobs=3) == snr_vs_power_sweep(toy, powers, "HG00")


def test_monte_carlo_deterministic_and_parallel_safe(toy):
    a = run_scenario(toy, "monte-carlo")
    b = run_scenario(toy, "monte-carlo", jobs=4)
    assert [s.R_cp for s in a.stats] == [s.R_cp for s in b.stats]
    c = run_scenario(toy, "monte-carlo", seed=99)
    assert [s.R_cp for s in a.stats] != [s.R_cp for s in c.stats]
    assert a.provenance["scenario_hash"] == b.provenance["scenario_hash"]


def test_monte_carlo_close_to_analytic(toy):
    ana = run_scenario(toy)
    mc = run_scenario(toy, "monte-carlo")
    for a, m in zip(ana.stats, mc.stats):
        for key in ("R_2p", "R_cp"):
            se = m.stderr[key]
            assert abs(getattr(a, key) - getattr(m, key)) <= 5 * se + 1e-9


def test_extinction_calibration_hits_anchor(toy):
    cal = calibrate_extinction(toy, 1e-8, 15.0)
    ext = cal.devices.filter_for(1540).extinction_db
    worst = min(s.exact for s in run_scenario(with_classical_output_power(cal, 1e-8)).snr.values())
    assert worst >= 15.0
    less = calibrate_extinction(toy.replace(), 1e-8, 14.95)
    assert less.devices.filter_for(1540).extinction_db <= ext
    assert round(ext * 10) == pytest.approx(ext * 10)


def test_baud_budget():
    b = max_baud_rate(20e-9, 1565.0)
    assert b.max_baud * b.photons_per_pulse * b.photon_energy == pytest.approx(20e-9, rel=1e-15)
    assert max_baud_rate(40e-9, 1565.0).max_baud == pytest.approx(2 * b.max_baud)
    for bad in [(0, 1565.0), (1e-9, -1.0), (1e-9, 1565.0, 0)]:
        with pytest.raises(DomainError):
            max_baud_rate(*bad)


def test_shipped_link_group_pattern():
    res = run_scenario(load_scenario(SHIPPED / "link_8km.json"))
    g = res.group_fqp
    assert math.isclose(g.sum(), 1.0, abs_tol=1e-15)
    assert g[1] < g[0] and g[3] < g[2]
