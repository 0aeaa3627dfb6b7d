"""Scenario documents: JSON loading, validation, canonical form and hashing."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .counting import CountingConfig
from .errors import FmfsdmError, ScenarioError
from .model import (
    CLASSICAL,
    DEFAULT_D_RANGE,
    QUANTUM,
    Channel,
    ChannelPlan,
    DetectorSpec,
    FiberSpec,
    ModeId,
    MuxDemuxSpec,
    WdmFilterSpec,
    db_per_km_to_per_m,
    hg_group_of,
    mode_from_flat,
    parse_mode,
)


def scenarios_dir() -> Path:
    """Directory holding the shipped example scenarios and the JSON schema."""
    return Path(str(resources.files("fmfsdm") / "scenarios"))


def load_schema() -> dict:
    return json.loads((scenarios_dir() / "scenario.schema.json").read_text())


@dataclass(frozen=True)
class Devices:
    mux: MuxDemuxSpec
    demux: MuxDemuxSpec
    wdm_filters: tuple[WdmFilterSpec, ...] = ()
    herald: DetectorSpec = DetectorSpec(1.0, 0.0, "herald")
    idler: DetectorSpec = DetectorSpec(1.0, 0.0, "idler")

    def __post_init__(self):
        object.__setattr__(self, "wdm_filters", tuple(self.wdm_filters))

    def filter_for(self, wavelength) -> WdmFilterSpec | None:
        """First WDM filter whose passband contains ``wavelength``."""
        for f in self.wdm_filters:
            if f.passes(wavelength):
                return f
        return None


@dataclass(frozen=True)
class Scenario:
    """A validated, cross-referenced simulation input."""

    plan: ChannelPlan
    fiber: FiberSpec
    devices: Devices
    counting: CountingConfig = CountingConfig()
    reference_length: float = 40.0
    normalization_il_db: tuple[float, ...] | None = None
    sweep_powers: tuple[float, ...] = ()
    monitor: tuple[ModeId, ...] = ()
    calibration: dict = field(default_factory=dict)
    name: str = ""
    notes: tuple[str, ...] = ()

    @property
    def groups(self) -> int:
        return self.fiber.group_count

    def replace(self, **changes) -> "Scenario":
        kwargs = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kwargs.update(changes)
        return validate_scenario(
            kwargs.pop("plan"), kwargs.pop("fiber"), kwargs.pop("devices"), kwargs.pop("counting"), **kwargs
        )

    def monitored_outputs(self) -> tuple[ModeId, ...]:
        """Output modes whose SNR is reported: ``monitor`` or the quantum inputs."""
        if self.monitor:
            return self.monitor
        return tuple(sorted({c.mode for c in self.plan.quantum}))


def validate_scenario(
    plan: ChannelPlan,
    fiber: FiberSpec,
    devices: Devices,
    counting: CountingConfig | None = None,
    **options,
) -> Scenario:
    """Cross-check a channel plan against the fiber and devices.

    Returns the normalized :class:`Scenario`; raises :class:`ScenarioError`
    listing every violation found. Validating the components of a returned
    scenario yields an equal scenario.
    """
    problems = list(fiber.violations())
    m = fiber.mode_count
    groups = fiber.group_count
    for role, dev in (("mux", devices.mux), ("demux", devices.demux)):
        if dev.mode_count != m:
            problems.append(f"{role} describes {dev.mode_count} modes but the fiber has {m}")
    problems.extend(plan.violations())
    for ch in plan:
        if ch.mode.p > m or ch.mode.g > groups:
            problems.append(f"channel mode {ch.mode} (p={ch.mode.p}) is not guided by the {m}-mode fiber")
        for role, dev in (("mux", devices.mux), ("demux", devices.demux)):
            if not dev.covers(ch.wavelength):
                lo, hi = dev.wavelength_range
                problems.append(
                    f"{ch.kind} channel on {ch.mode} at {ch.wavelength:g} nm is outside the {role} validity [{lo:g}, {hi:g}] nm"
                )
        if ch.kind == QUANTUM and devices.filter_for(ch.wavelength) is None:
            problems.append(
                f"quantum channel on {ch.mode} at {ch.wavelength:g} nm has no WDM filter passband covering it"
            )
    waves = sorted({ch.wavelength for ch in plan.quantum})
    if len(waves) > 1:
        problems.append(f"quantum channels must share one wavelength, got {', '.join(f'{w:g}' for w in waves)} nm")
    for mode in options.get("monitor", ()):
        if mode.p > m:
            problems.append(f"monitored output {mode} is not guided by the {m}-mode fiber")
    il = options.get("normalization_il_db")
    if il is not None:
        il = tuple(il)
        if len(il) != m:
            problems.append(f"normalization insertion_loss_db has {len(il)} entries for {m} modes")
        elif any(not (math.isfinite(x) and x <= 0) for x in il):
            problems.append("normalization insertion_loss_db must be signed dB transmissions <= 0")
        options["normalization_il_db"] = il
    if not options.get("reference_length", 40.0) > 0:
        problems.append("normalization reference_length must be > 0 m")
    if any(not p >= 0 for p in options.get("sweep_powers", ())):
        problems.append("sweep output_powers must be >= 0 W")
    if problems:
        raise ScenarioError(problems)
    options["sweep_powers"] = tuple(float(p) for p in options.get("sweep_powers", ()))
    options["monitor"] = tuple(options.get("monitor", ()))
    options["notes"] = tuple(options.get("notes", ()))
    options["calibration"] = copy.deepcopy(dict(options.get("calibration", {})))
    return Scenario(plan, fiber, devices, counting or CountingConfig(), **options)


# ----------------------------------------------------------------------------
# JSON <-> Scenario
# ----------------------------------------------------------------------------
def apply_overrides(data: dict, overrides: dict | None) -> dict:
    """Return a copy of ``data`` with dotted-path overrides applied,
    e.g. ``{"counting.seed": 7, "fiber.length": 40}``."""
    out = copy.deepcopy(data)
    for path, value in (overrides or {}).items():
        if value is None:
            continue
        node = out
        keys = path.split(".")
        for key in keys[:-1]:
            node = node.setdefault(key, {})
        node[keys[-1]] = value
    return out


def _guard(problems, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ScenarioError as exc:
        problems.extend(exc.violations)
    except (FmfsdmError, ValueError, TypeError) as exc:
        problems.append(str(exc))
    return None


def _pair_key(key: str):
    a, b = key.split("-")
    return int(a), int(b)


def _fiber_from(d, problems):
    groups = d.get("groups", 5)
    group_of = hg_group_of(groups)
    if "mode_attenuation_db_per_km" in d:
        att = [db_per_km_to_per_m(x) for x in d["mode_attenuation_db_per_km"]]
    else:
        att = [db_per_km_to_per_m(d.get("attenuation_db_per_km", 0.0))] * len(group_of)
    return _guard(
        problems,
        FiberSpec,
        length=d["length"],
        group_of=group_of,
        intra_group_rate=d.get("intra_group_rate", 1.0),
        inter_group_d={_pair_key(k): v for k, v in d.get("inter_group_d", {}).items()},
        attenuation=tuple(att),
        d_range=tuple(d.get("d_range", DEFAULT_D_RANGE)),
    )


def _muxdemux_from(d, role, group_of, problems):
    m = len(group_of)
    groups = max(group_of)
    sign = -1.0 if d.get("loss_is_positive", False) else 1.0
    il = d["insertion_loss_db"]
    il = [sign * float(il)] * m if isinstance(il, (int, float)) else [sign * float(x) for x in il]
    if len(il) != m:
        problems.append(f"{role} insertion_loss_db has {len(il)} entries for {m} modes")
        return None
    band = tuple(d.get("wavelength_range", (1500.0, 1600.0)))
    if "group_crosstalk_db" in d:
        table = d["group_crosstalk_db"]
        if len(table) != groups or any(len(row) != groups for row in table):
            problems.append(f"{role} group_crosstalk_db must be {groups}x{groups}")
            return None
        base = _guard(problems, MuxDemuxSpec.from_group_table, il, table, group_of, band)
        if base is None:
            return None
        xt = dict(base.crosstalk_db)
    else:
        xt = {}
    for entry in d.get("crosstalk_db", []):
        a = _guard(problems, parse_mode, entry["from"], groups)
        b = _guard(problems, parse_mode, entry["to"], groups)
        if a is not None and b is not None:
            xt[(a.p, b.p)] = entry["db"]
    return _guard(problems, MuxDemuxSpec, tuple(il), xt, band)


def scenario_from_dict(data: dict, overrides: dict | None = None) -> Scenario:
    """Build and validate a :class:`Scenario` from its JSON document."""
    data = apply_overrides(data, overrides)
    validator = jsonschema.Draft202012Validator(load_schema())
    structural = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if structural:
        raise ScenarioError(
            [f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}" for e in structural]
        )
    problems: list[str] = []
    fiber = _fiber_from(data["fiber"], problems)
    groups = data["fiber"].get("groups", 5)
    group_of = hg_group_of(groups)
    mux = _muxdemux_from(data["mux"], "mux", group_of, problems)
    demux = _muxdemux_from(data["demux"], "demux", group_of, problems)
    filters = [_guard(problems, WdmFilterSpec, **{k: v for k, v in f.items() if k != "notes"})
               for f in data["wdm_filters"]]
    dets = {}
    for role in ("herald", "idler"):
        spec = {k: v for k, v in data["detectors"][role].items() if k != "notes"}
        spec.setdefault("label", role)
        dets[role] = _guard(problems, DetectorSpec, **spec)
    channels = []
    for ch in data["channels"]:
        mode = _guard(problems, parse_mode, ch["mode"], groups)
        if mode is not None:
            channels.append(Channel(ch["kind"], mode, float(ch["wavelength"]), ch.get("power"), ch.get("pair_rate")))
    counting = _guard(problems, CountingConfig, **data["counting"])
    norm = data.get("normalization", {})
    il = norm.get("insertion_loss_db")
    if isinstance(il, (int, float)):
        il = [float(il)] * len(group_of)
    sweep = data.get("sweep", {})
    monitor = [_guard(problems, parse_mode, x, groups) for x in sweep.get("monitor", [])]
    if None in (fiber, mux, demux, counting, *filters, *dets.values()):
        raise ScenarioError(problems or ["scenario could not be built"])
    try:
        scenario = validate_scenario(
            ChannelPlan(tuple(channels)),
            fiber,
            Devices(mux, demux, tuple(filters), dets["herald"], dets["idler"]),
            counting,
            reference_length=float(norm.get("reference_length", 40.0)),
            normalization_il_db=None if il is None else tuple(float(x) for x in il),
            sweep_powers=tuple(sweep.get("output_powers", ())),
            monitor=tuple(m for m in monitor if m is not None),
            calibration=data.get("calibration", {}),
            name=data.get("name", ""),
            notes=tuple(data.get("notes", ())),
        )
    except ScenarioError as exc:
        # cross-checks on the parts that did parse
        raise ScenarioError(problems + exc.violations) from None
    if problems:
        raise ScenarioError(problems)
    return scenario


def load_scenario(path, overrides: dict | None = None) -> Scenario:
    """Read a scenario file. ``OSError``/``json.JSONDecodeError`` propagate
    for unreadable files; domain problems raise :class:`ScenarioError`."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ScenarioError(["scenario document must be a JSON object"])
    return scenario_from_dict(data, overrides)


def _label(p, groups):
    return mode_from_flat(p, groups).label


def _muxdemux_to(dev: MuxDemuxSpec, groups):
    return {
        "insertion_loss_db": list(dev.insertion_loss_db),
        "crosstalk_db": [
            {"from": _label(a, groups), "to": _label(b, groups), "db": v}
            for (a, b), v in dev.crosstalk_db.items()
        ],
        "wavelength_range": list(dev.wavelength_range),
    }


def scenario_to_dict(s: Scenario) -> dict:
    """Canonical JSON form (mode-level, signed dB); reloading it gives an
    equal scenario."""
    groups = s.groups
    f = s.fiber
    out = {
        "name": s.name,
        "notes": list(s.notes),
        "fiber": {
            "length": f.length,
            "groups": groups,
            "intra_group_rate": f.intra_group_rate,
            "inter_group_d": {f"{a}-{b}": v for (a, b), v in f.inter_group_d.items()},
            "mode_attenuation_db_per_km": [a * 1e4 / math.log(10.0) for a in f.attenuation],
            "d_range": list(f.d_range),
        },
        "mux": _muxdemux_to(s.devices.mux, groups),
        "demux": _muxdemux_to(s.devices.demux, groups),
        "wdm_filters": [
            {"center": w.center, "bandwidth": w.bandwidth, "passband_loss_db": w.passband_loss_db,
             "extinction_db": w.extinction_db}
            for w in s.devices.wdm_filters
        ],
        "detectors": {
            role: {"efficiency": d.efficiency, "dark_rate": d.dark_rate, "label": d.label}
            for role, d in (("herald", s.devices.herald), ("idler", s.devices.idler))
        },
        "channels": [
            {"kind": c.kind, "mode": c.mode.label, "wavelength": c.wavelength,
             **({"power": c.power} if c.kind == CLASSICAL else {"pair_rate": c.pair_rate})}
            for c in s.plan
        ],
        "counting": {
            "pair_rate_in": s.counting.pair_rate_in,
            "window": s.counting.window,
            "acquisition": s.counting.acquisition,
            "repetitions": s.counting.repetitions,
            "seed": s.counting.seed,
        },
        "normalization": {"reference_length": s.reference_length},
        "sweep": {"output_powers": list(s.sweep_powers), "monitor": [m.label for m in s.monitor]},
    }
    if s.normalization_il_db is not None:
        out["normalization"]["insertion_loss_db"] = list(s.normalization_il_db)
    if s.calibration:
        out["calibration"] = copy.deepcopy(s.calibration)
    return out


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


def scenario_hash(s: Scenario) -> str:
    """SHA-256 of the canonical JSON form."""
    return hashlib.sha256(canonical_json(scenario_to_dict(s)).encode()).hexdigest()

