"""End-to-end link execution: source -> MUX -> fiber -> DeMUX -> WDM filter ->
detectors -> coincidence estimators.

Two execution modes share one report schema. ``analytic`` pushes expected
rates through the transfer matrices; true coincidences are the pair rate
times the composite path survival and accidentals follow ``2 R1 R2 t_c``.
``monte-carlo`` draws time-tagged streams for every repetition and measures
the same quantities.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .calibration import calibrate_coupling, coupling_parameters, expand_parameters, fit_log_parameters
from .constants import photon_energy
from .counting import (
    STREAM_KEYS,
    CoincidenceStats,
    EventStream,
    FqpResult,
    SnrResult,
    coincidence_stats,
    count_coincidences,
    derive_rng,
    fractional_quantum_power,
    group_fqp,
    poisson_times,
    snr,
)
from .devices import detect, filter_transmittance, mux_from_measurements
from .errors import CalibrationError, DomainError, NoSignalError, StageError
from .model import CLASSICAL, Channel, ChannelPlan, ModeId, WdmFilterSpec, hg_modes, parse_mode
from .powerflow import build_coupling_matrix, fiber_transfer_matrix
from .scenario import Scenario, scenario_hash

ANALYTIC = "analytic"
MONTE_CARLO = "monte-carlo"
MODES = (ANALYTIC, MONTE_CARLO)
DEFAULT_PHOTONS_PER_PULSE = 20


# ----------------------------------------------------------------------------
# Baud-rate budget
# ----------------------------------------------------------------------------
@dataclass(frozen=True)
class BaudBudget:
    classical_power: float
    wavelength: float
    photons_per_pulse: float
    photon_energy: float
    max_baud: float


def max_baud_rate(classical_power, wavelength_nm, photons_per_pulse=DEFAULT_PHOTONS_PER_PULSE) -> BaudBudget:
    """Shot-noise-limited pulse rate ``B = P_c / (N_p h nu)``.

    ``wavelength_nm`` is in nanometers.
    """
    for name, value in (("power", classical_power), ("wavelength", wavelength_nm),
                        ("photons per pulse", photons_per_pulse)):
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            raise DomainError(f"{name} must be a positive finite number, got {value!r}")
    e = photon_energy(wavelength_nm)
    return BaudBudget(classical_power, wavelength_nm, photons_per_pulse, e,
                      classical_power / (photons_per_pulse * e))


# ----------------------------------------------------------------------------
# Transfer paths
# ----------------------------------------------------------------------------
@dataclass(frozen=True)
class LinkPaths:
    """Mode-level power transfer of every stage, ``t[q, p]`` (output, input)."""

    mux: np.ndarray
    fiber: np.ndarray
    demux: np.ndarray

    @property
    def composite(self) -> np.ndarray:
        return self.demux @ self.fiber @ self.mux


def link_paths(scenario: Scenario, length=None) -> LinkPaths:
    fiber = scenario.fiber
    length = fiber.length if length is None else length
    f = fiber_transfer_matrix(build_coupling_matrix(fiber), fiber.attenuation, length)
    return LinkPaths(
        mux_from_measurements(scenario.devices.mux).t,
        f,
        mux_from_measurements(scenario.devices.demux).t,
    )


def normalization_il_db(scenario: Scenario) -> np.ndarray:
    """Per-mode insertion loss (signed dB) used to normalize fractional power.

    Uses the scenario's explicit values when present, otherwise the total
    transmission of each input channel through a back-to-back link of
    ``reference_length`` meters.
    """
    if scenario.normalization_il_db is not None:
        return np.array(scenario.normalization_il_db)
    total = link_paths(scenario, scenario.reference_length).composite.sum(axis=0)
    return 10.0 * np.log10(total)


def quantum_wavelength(scenario: Scenario) -> float | None:
    waves = sorted({c.wavelength for c in scenario.plan.quantum})
    if len(waves) > 1:
        raise DomainError(f"quantum channels must share one wavelength, got {waves}")
    return waves[0] if waves else None


def _detection_filter(scenario, wavelength) -> WdmFilterSpec | None:
    return None if wavelength is None else scenario.devices.filter_for(wavelength)


def own_path_transmittance(scenario: Scenario, channel: Channel, paths: LinkPaths | None = None) -> float:
    """Transmittance from a channel's MUX input to the DeMUX output of its
    own mode."""
    paths = paths or link_paths(scenario)
    p = channel.mode.index
    return float(paths.composite[p, p])


# ----------------------------------------------------------------------------
# Results
# ----------------------------------------------------------------------------
@dataclass
class SimulationResult:
    """Per-mode rates, fractional power and SNR of one scenario run.

    ``stages`` maps stage names to expected per-mode photon rates (Hz) of the
    quantum band; ``classical_stages`` to classical powers (W).
    """

    mode: str
    modes: tuple[ModeId, ...]
    stats: tuple[CoincidenceStats, ...]
    fqp: FqpResult | None
    group_fqp: np.ndarray | None
    snr: dict
    il_db: np.ndarray
    stages: dict = field(default_factory=dict)
    classical_stages: dict = field(default_factory=dict)
    leakage_photon_rate: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def rate_table(self) -> list[dict]:
        rows = []
        for i, (m, st) in enumerate(zip(self.modes, self.stats)):
            rows.append({
                "p": m.p, "mode": m.label, "group": m.g,
                "R_1p": st.R_1p, "R_2p": st.R_2p, "R_cp": st.R_cp, "R_ap": st.R_ap,
                "L_p": st.L_p, "eps_Lp": st.eps_Lp,
                "FQP": None if self.fqp is None else float(self.fqp.fqp[i]),
                "eps_FQP": None if self.fqp is None else float(self.fqp.eps[i]),
            })
        return rows


def _check_stage(name, values):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise StageError(name, "(NaN or infinite)")
    if np.any(values < 0):
        raise StageError(name, f"(negative: min {values.min():g})")
    return values


def _launch(scenario: Scenario, m: int):
    pairs = np.zeros(m)
    classical = {}
    for ch in scenario.plan:
        if ch.kind == CLASSICAL:
            classical.setdefault(ch.wavelength, np.zeros(m))[ch.mode.index] += ch.power
        else:
            pairs[ch.mode.index] += ch.pair_rate
    return pairs, classical


def _expected(scenario: Scenario, paths: LinkPaths):
    """Expected singles, true coincidences and stage rates for every output."""
    m = scenario.fiber.mode_count
    dev = scenario.devices
    lam_q = quantum_wavelength(scenario)
    filt = _detection_filter(scenario, lam_q)
    pairs, classical = _launch(scenario, m)

    stages = {"launched": _check_stage("source", pairs)}
    stages["mux"] = _check_stage("mux", paths.mux @ pairs)
    stages["fiber"] = _check_stage("fiber", paths.fiber @ stages["mux"])
    stages["demux"] = _check_stage("demux", paths.demux @ stages["fiber"])
    t_filter = 1.0 if filt is None else filter_transmittance(filt, lam_q)
    stages["filter"] = _check_stage("wdm-filter", stages["demux"] * t_filter)
    # per-output photon survival from each quantum input
    survival = paths.composite * t_filter

    classical_stages = {}
    leak = np.zeros(m)
    for lam, powers in sorted(classical.items()):
        out = paths.composite @ powers
        key = f"{lam:g}nm"
        classical_stages[f"launched@{key}"] = _check_stage("classical source", powers)
        classical_stages[f"demux@{key}"] = _check_stage("classical demux", out)
        t_leak = 1.0 if filt is None else filter_transmittance(filt, lam)
        filtered = _check_stage("classical wdm-filter", out * t_leak)
        classical_stages[f"filter@{key}"] = filtered
        leak += filtered / photon_energy(lam)

    herald = dev.herald
    r1 = detect(herald, float(pairs.sum())).click_rate
    true = herald.efficiency * dev.idler.efficiency * stages["filter"]
    r2 = np.array([detect(dev.idler, stages["filter"][p], leak[p]).click_rate for p in range(m)])
    stages["detected"] = _check_stage("detector", dev.idler.efficiency * stages["filter"])
    return {
        "pairs": pairs, "survival": survival, "leak": leak, "r1": r1, "r2": r2, "true": true,
        "stages": stages, "classical_stages": classical_stages,
    }


def _finish(scenario, mode, stats, exp, il_db, snr_map, seed):
    modes = hg_modes(scenario.groups)[: scenario.fiber.mode_count]
    fqp = gfqp = None
    if scenario.plan.quantum and scenario.counting.pair_rate_in > 0:
        try:
            fqp = fractional_quantum_power([s.R_cp for s in stats], [s.R_ap for s in stats],
                                           scenario.counting.pair_rate_in, il_db)
            gfqp = group_fqp(fqp.fqp, scenario.fiber.group_of)
        except NoSignalError:
            pass
    return SimulationResult(
        mode=mode,
        modes=modes,
        stats=tuple(stats),
        fqp=fqp,
        group_fqp=gfqp,
        snr=snr_map,
        il_db=il_db,
        stages=exp["stages"],
        classical_stages=exp["classical_stages"],
        leakage_photon_rate=exp["leak"],
        provenance={"scenario_hash": scenario_hash(scenario), "seed": seed, "version": __version__,
                    "mode": mode},
    )


def _without_classical(scenario: Scenario) -> Scenario:
    chans = tuple(
        Channel(c.kind, c.mode, c.wavelength, 0.0, None) if c.kind == CLASSICAL else c for c in scenario.plan
    )
    return scenario.replace(plan=ChannelPlan(chans))


def _snr_map(scenario, r_cp, r_cp0, r_ap0):
    out = {}
    if not scenario.plan.quantum:
        return out
    for mode in scenario.monitored_outputs():
        p = mode.index
        out[mode] = snr(r_cp0[p], r_cp[p], r_ap0[p])
    return out


def _analytic_rates(scenario, paths):
    exp = _expected(scenario, paths)
    t_c = scenario.counting.window
    r_ap = 2.0 * exp["r1"] * exp["r2"] * t_c
    return exp, exp["true"] + r_ap, r_ap


def run_scenario(scenario: Scenario, mode: str = ANALYTIC, jobs: int = 1, paths: LinkPaths | None = None,
                 seed: int | None = None) -> SimulationResult:
    """Execute a scenario.

    Parameters
    ----------
    scenario : Scenario
    mode : {"analytic", "monte-carlo"}
    jobs : int
        Worker threads for Monte Carlo repetitions.
    seed : int, optional
        Overrides ``scenario.counting.seed``.
    """
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}, got {mode!r}")
    paths = paths or link_paths(scenario)
    il_db = normalization_il_db(scenario)
    seed = scenario.counting.seed if seed is None else seed
    r_in = scenario.counting.pair_rate_in
    t_c = scenario.counting.window
    has_classical = any(c.power for c in scenario.plan.classical)

    if mode == ANALYTIC:
        exp, r_cp, r_ap = _analytic_rates(scenario, paths)
        if has_classical:
            _, r_cp0, r_ap0 = _analytic_rates(_without_classical(scenario), paths)
        else:
            r_cp0, r_ap0 = r_cp, r_ap
        stats = [coincidence_stats(exp["r1"], exp["r2"][p], r_cp[p], r_in, t_c) if r_in > 0 else
                 _stats_no_reference(exp["r1"], exp["r2"][p], r_cp[p], t_c)
                 for p in range(len(r_cp))]
        return _finish(scenario, mode, stats, exp, il_db, _snr_map(scenario, r_cp, r_cp0, r_ap0), seed)

    exp = _expected(scenario, paths)
    samples = _monte_carlo(scenario, exp, seed, jobs, with_leakage=True)
    stats = _mc_stats(samples, r_in, t_c)
    if has_classical:
        base = _mc_stats(_monte_carlo(scenario, exp, seed, jobs, with_leakage=False), r_in, t_c)
    else:
        base = stats
    snr_map = _snr_map(scenario, [s.R_cp for s in stats], [s.R_cp for s in base], [s.R_ap for s in base])
    return _finish(scenario, mode, stats, exp, il_db, snr_map, seed)


def _stats_no_reference(r1, r2, r_cp, t_c):
    r_ap = 2.0 * r1 * r2 * t_c
    return CoincidenceStats(r1, r2, r_cp, r_ap, math.nan, math.nan)


def _mc_stats(samples, r_in, t_c):
    r1 = samples["R_1p"]
    r2 = samples["R_2p"]
    rc = samples["R_cp"]
    out = []
    for p in range(r2.shape[1]):
        per = {"R_1p": r1, "R_2p": r2[:, p], "R_cp": rc[:, p]}
        if r_in > 0:
            out.append(coincidence_stats(float(r1.mean()), float(r2[:, p].mean()), float(rc[:, p].mean()),
                                         r_in, t_c, per))
        else:
            out.append(_stats_no_reference(float(r1.mean()), float(r2[:, p].mean()), float(rc[:, p].mean()), t_c))
    return out


def _one_repetition(scenario: Scenario, exp, seed, rep, with_leakage):
    """Singles and coincidence rates of every output for repetition ``rep``."""
    cfg = scenario.counting
    dur = cfg.acquisition
    dev = scenario.devices
    m = scenario.fiber.mode_count
    eta_i = dev.idler.efficiency

    herald_times = []
    routed = [[] for _ in range(m)]
    for c in np.flatnonzero(exp["pairs"]):
        rate = exp["pairs"][c]
        t = poisson_times(rate, dur, derive_rng(seed, STREAM_KEYS["pairs"], int(c), rep))
        keep = derive_rng(seed, STREAM_KEYS["herald"], int(c), rep).random(t.size) < dev.herald.efficiency
        herald_times.append(t[keep])
        # each idler ends in one output (or is lost): categorical routing
        probs = exp["survival"][:, c] * eta_i
        cum = np.cumsum(probs)
        dest = np.searchsorted(cum, derive_rng(seed, STREAM_KEYS["route"], int(c), rep).random(t.size), side="right")
        for p in range(m):
            routed[p].append(t[dest == p])

    herald = np.concatenate(herald_times + [poisson_times(
        dev.herald.dark_rate, dur, derive_rng(seed, STREAM_KEYS["dark"], 0, rep))])
    herald = EventStream(np.sort(herald, kind="mergesort"), dur, "herald")

    r2 = np.empty(m)
    rc = np.empty(m)
    for p in range(m):
        parts = routed[p] + [poisson_times(dev.idler.dark_rate, dur,
                                           derive_rng(seed, STREAM_KEYS["dark"], p + 1, rep))]
        if with_leakage and exp["leak"][p] > 0:
            parts.append(poisson_times(eta_i * exp["leak"][p], dur,
                                       derive_rng(seed, STREAM_KEYS["leakage"], p, rep)))
        idler = EventStream(np.sort(np.concatenate(parts), kind="mergesort"), dur, f"idler{p + 1}")
        r2[p] = len(idler) / dur
        rc[p] = count_coincidences(herald, idler, cfg.window, dur).rate
    return len(herald) / dur, r2, rc


def _monte_carlo(scenario, exp, seed, jobs, with_leakage):
    reps = range(scenario.counting.repetitions)

    def task(rep):
        return _one_repetition(scenario, exp, seed, rep, with_leakage)

    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(task, reps))
    else:
        results = [task(r) for r in reps]
    return {
        "R_1p": np.array([r[0] for r in results]),
        "R_2p": np.array([r[1] for r in results]),
        "R_cp": np.array([r[2] for r in results]),
    }


# ----------------------------------------------------------------------------
# Classical power sweep
# ----------------------------------------------------------------------------
@dataclass(frozen=True)
class SweepPoint:
    power: float
    snr_exact: float | None
    snr_approx: float | None
    unbounded: bool


def with_classical_output_power(scenario: Scenario, output_power: float, paths: LinkPaths | None = None) -> Scenario:
    """Set every classical channel so that ``output_power`` W leaves the
    DeMUX port of its own mode; the launch power is back-computed."""
    paths = paths or link_paths(scenario)
    chans = []
    for c in scenario.plan:
        if c.kind == CLASSICAL:
            t = own_path_transmittance(scenario, c, paths)
            if not t > 0:
                raise DomainError(f"classical channel on {c.mode} has zero own-mode transmittance")
            c = Channel(c.kind, c.mode, c.wavelength, output_power / t, None)
        chans.append(c)
    return scenario.replace(plan=ChannelPlan(tuple(chans)))


def snr_vs_power_sweep(scenario: Scenario, powers, output, mode: str = ANALYTIC, jobs: int = 1) -> list[SweepPoint]:
    """SNR of quantum output ``output`` versus classical output power.

    Every point reuses the scenario seed, so Monte Carlo points share their
    random streams with the zero-power baseline. ``P = 0`` gives the
    unbounded marker.
    """
    powers = [float(p) for p in powers]
    if any(p < 0 for p in powers) or any(b < a for a, b in zip(powers, powers[1:])):
        raise DomainError("powers must be non-negative and non-decreasing")
    out_mode = parse_mode(output, scenario.groups)
    p = out_mode.index
    paths = link_paths(scenario)
    base = run_scenario(with_classical_output_power(scenario, 0.0, paths), mode, jobs=jobs, paths=paths).stats[p]
    # parallelism goes to the points; each point then runs its repetitions serially
    inner = 1 if jobs and jobs > 1 else jobs

    def point(power):
        if power == 0:
            return SweepPoint(power, None, None, True)
        run = run_scenario(with_classical_output_power(scenario, power, paths), mode, jobs=inner, paths=paths)
        s = snr(base.R_cp, run.stats[p].R_cp, base.R_ap)
        return SweepPoint(power, s.exact, s.approximate, s.unbounded)

    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(point, powers))
    return [point(pw) for pw in powers]


# ----------------------------------------------------------------------------
# Scenario-level calibration
# ----------------------------------------------------------------------------
@dataclass
class GroupFqpFit:
    inter_group_d: dict
    scenario: Scenario
    group_fqp: np.ndarray
    residuals: np.ndarray
    evaluations: int


def calibrate_group_fqp(scenario: Scenario, targets: dict, parameterization: str = "uniform-adjacent") -> GroupFqpFit:
    """Fit inter-group D so the analytic group fractional power matches
    ``targets`` (``{group: fraction}``)."""
    groups = sorted(int(g) for g in targets)
    want = np.array([float(targets[g]) if g in targets else float(targets[str(g)]) for g in groups])
    layout = coupling_parameters(scenario.groups, parameterization)
    lo, hi = (math.log10(v) for v in scenario.fiber.d_range)
    base = _without_classical(scenario)

    def trial(x):
        fiber = base.fiber.with_coupling(expand_parameters(10.0 ** np.asarray(x), layout))
        return base.replace(fiber=fiber)

    def residuals(x):
        res = run_scenario(trial(x), ANALYTIC)
        return res.group_fqp[np.array(groups) - 1] - want

    fit = fit_log_parameters(residuals, len(layout), (lo, hi))
    calibrated = scenario.replace(fiber=scenario.fiber.with_coupling(expand_parameters(10.0 ** fit.x, layout)))
    gf = run_scenario(_without_classical(calibrated), ANALYTIC).group_fqp
    return GroupFqpFit(dict(calibrated.fiber.inter_group_d), calibrated, gf, fit.residuals, fit.evaluations)


def calibrate_extinction(scenario: Scenario, output_power: float, snr_db: float, step_db: float = 0.1) -> Scenario:
    """Smallest quantum-filter extinction (on a ``step_db`` grid) for which
    every monitored output keeps SNR >= ``snr_db`` at ``output_power``."""
    lam_q = quantum_wavelength(scenario)
    filt = _detection_filter(scenario, lam_q)
    if filt is None:
        raise CalibrationError("no quantum-band WDM filter to calibrate")

    def with_ext(ext):
        filters = tuple(
            WdmFilterSpec(f.center, f.bandwidth, f.passband_loss_db, ext) if f == filt else f
            for f in scenario.devices.wdm_filters
        )
        dev = scenario.devices
        return scenario.replace(devices=type(dev)(dev.mux, dev.demux, filters, dev.herald, dev.idler))

    def worst(ext):
        run = run_scenario(with_classical_output_power(with_ext(ext), output_power), ANALYTIC)
        vals = [s.exact for s in run.snr.values() if not s.unbounded]
        return min(vals) if vals else math.inf

    # out-of-band leakage scales as 10^(-ext/10), so SNR moves 1 dB per dB
    ext0 = filt.extinction_db
    ext = ext0 + (snr_db - worst(ext0))
    ext = max(step_db, math.ceil(round(ext / step_db, 9)) * step_db)
    for _ in range(100):
        if worst(ext) >= snr_db:
            return with_ext(round(ext, 10))
        ext += step_db
    raise CalibrationError(f"no extinction up to {ext:g} dB reaches {snr_db} dB SNR")


def calibrate_scenario(scenario: Scenario) -> tuple[Scenario, dict]:
    """Apply the scenario's ``calibration`` section: group-FQP coupling fit
    then the SNR extinction anchor. Returns the calibrated scenario and a
    summary dict."""
    cal = scenario.calibration
    summary = {}
    if cal.get("crosstalk_targets_db"):
        paths = link_paths(scenario)
        composite = cal.get("crosstalk_model", "fiber") == "composite"
        res = calibrate_coupling(cal["crosstalk_targets_db"], scenario.fiber,
                                 parameterization=cal.get("parameterization", "pairwise"),
                                 mux=paths.mux if composite else None, demux=paths.demux if composite else None)
        scenario = scenario.replace(fiber=res.fiber)
        summary["inter_group_d"] = {f"{a}-{b}": v for (a, b), v in res.inter_group_d.items()}
        summary["crosstalk_rms_residual_db"] = res.rms_residual_db
        summary["crosstalk_max_residual_db"] = res.max_residual_db
    if cal.get("group_fqp_targets"):
        fit = calibrate_group_fqp(scenario, {int(k): v for k, v in cal["group_fqp_targets"].items()},
                                  cal.get("parameterization", "uniform-adjacent"))
        scenario = fit.scenario
        summary["inter_group_d"] = {f"{a}-{b}": v for (a, b), v in fit.inter_group_d.items()}
        summary["group_fqp"] = [float(x) for x in fit.group_fqp]
        summary["group_fqp_residuals"] = [float(x) for x in fit.residuals]
    anchor = cal.get("snr_anchor")
    if anchor and scenario.plan.classical:
        scenario = calibrate_extinction(scenario, anchor["output_power"], anchor["snr_db"],
                                        anchor.get("extinction_step_db", 0.1))
        filt = _detection_filter(scenario, quantum_wavelength(scenario))
        summary["quantum_filter_extinction_db"] = filt.extinction_db
    return scenario, summary
