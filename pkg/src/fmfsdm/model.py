"""Domain types: Hermite-Gauss mode labels, fiber and device specifications,
channel plans and dB conversions.

Modes are abstract indexed channels. A fiber with ``Q`` groups of
quasi-degenerate HG modes carries ``M = Q (Q + 1) / 2`` modes; group ``g``
holds the ``g`` modes with ``m + n + 1 = g``. The flat index ``p`` (1-based)
orders modes by group and, within a group, by descending ``m``::

    p:  1     2     3     4     5     6     7 ...
        HG00  HG10  HG01  HG20  HG11  HG02  HG30 ...
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, ModeNotSupportedError, ScenarioError

DEFAULT_GROUPS = 5
DEFAULT_D_RANGE = (1e-7, 1e-2)

_HG_LABEL = re.compile(r"^\s*HG\s*(\d)\s*,?\s*(\d)\s*$", re.IGNORECASE)


# ----------------------------------------------------------------------------
# dB helpers
# ----------------------------------------------------------------------------
def db_to_linear(x):
    """Convert a power ratio in dB to a linear ratio, ``10 ** (x / 10)``."""
    if np.ndim(x) == 0:
        return 10.0 ** (float(x) / 10.0)
    return np.power(10.0, np.asarray(x, dtype=float) / 10.0)


def linear_to_db(r):
    """Convert a positive linear power ratio to dB.

    Raises
    ------
    DomainError
        If any ratio is zero or negative.
    """
    arr = np.asarray(r, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError(f"linear_to_db needs ratios > 0, got {r!r}")
    if arr.ndim == 0:
        return 10.0 * math.log10(float(arr))
    return 10.0 * np.log10(arr)


def db_per_km_to_per_m(alpha_db_km):
    """Power attenuation coefficient in 1/m from a dB/km figure."""
    return alpha_db_km * math.log(10.0) / 10.0 / 1000.0


# ----------------------------------------------------------------------------
# Modes
# ----------------------------------------------------------------------------
@dataclass(frozen=True, order=True)
class ModeId:
    """A Hermite-Gauss mode ``HG_mn`` with its flat index ``p`` and group ``g``."""

    p: int
    m: int
    n: int
    g: int

    @property
    def label(self) -> str:
        return f"HG{self.m}{self.n}"

    @property
    def index(self) -> int:
        """0-based position in mode-ordered arrays."""
        return self.p - 1

    def __str__(self):
        return self.label


def mode_index(m: int, n: int, groups: int = DEFAULT_GROUPS) -> ModeId:
    """Return the :class:`ModeId` for ``HG_mn`` in a ``groups``-group fiber."""
    max_order = groups - 1
    if int(m) != m or int(n) != n or m < 0 or n < 0 or m + n > max_order:
        raise ModeNotSupportedError(m, n, max_order)
    m, n = int(m), int(n)
    g = m + n + 1
    p = g * (g - 1) // 2 + (g - 1 - m) + 1
    return ModeId(p=p, m=m, n=n, g=g)


def mode_from_flat(p: int, groups: int = DEFAULT_GROUPS) -> ModeId:
    """Inverse of :func:`mode_index`: look a mode up by its flat index."""
    total = groups * (groups + 1) // 2
    if int(p) != p or not 1 <= p <= total:
        raise DomainError(f"flat mode index {p} outside 1..{total}")
    p = int(p)
    g = 1
    while g * (g + 1) // 2 < p:
        g += 1
    offset = p - g * (g - 1) // 2 - 1
    m = g - 1 - offset
    return ModeId(p=p, m=m, n=g - 1 - m, g=g)


def hg_modes(groups: int = DEFAULT_GROUPS) -> tuple[ModeId, ...]:
    """All modes of a ``groups``-group fiber in flat-index order."""
    return tuple(mode_from_flat(p, groups) for p in range(1, groups * (groups + 1) // 2 + 1))


def hg_group_of(groups: int = DEFAULT_GROUPS) -> tuple[int, ...]:
    return tuple(mode.g for mode in hg_modes(groups))


def parse_mode(value, groups: int = DEFAULT_GROUPS) -> ModeId:
    """Accept ``"HG21"``, ``"HG2,1"``, ``[2, 1]`` or a flat index ``p``."""
    if isinstance(value, ModeId):
        return value
    if isinstance(value, str):
        match = _HG_LABEL.match(value)
        if not match:
            raise DomainError(f"cannot parse mode label {value!r}")
        return mode_index(int(match.group(1)), int(match.group(2)), groups)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return mode_index(value[0], value[1], groups)
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return mode_from_flat(int(value), groups)
    raise DomainError(f"cannot parse mode {value!r}")


# ----------------------------------------------------------------------------
# Fiber
# ----------------------------------------------------------------------------
def _normalize_pairs(mapping) -> Mapping[tuple[int, int], float]:
    out: dict[tuple[int, int], float] = {}
    for (a, b), value in dict(mapping or {}).items():
        key = (min(a, b), max(a, b))
        value = float(value)
        if key in out and out[key] != value:
            raise ScenarioError([f"inter_group_D({a},{b}) given twice with different values"])
        out[key] = value
    return MappingProxyType(dict(sorted(out.items())))


@dataclass(frozen=True)
class FiberSpec:
    """Few-mode fiber described by its group structure and coupling rates.

    Parameters
    ----------
    length : float
        Fiber length in meters.
    group_of : sequence of int
        Group (1-based) of each mode, in flat-index order.
    intra_group_rate : float
        Coupling rate between modes of the same group, 1/m.
    inter_group_d : mapping
        ``{(g, g'): D}`` in 1/m. Stored with ``g < g'``; absent pairs are
        uncoupled. Non-zero values must lie inside ``d_range``.
    attenuation : sequence of float, optional
        Per-mode power attenuation coefficient in 1/m (default zero).
    """

    length: float
    group_of: tuple[int, ...]
    intra_group_rate: float = 1.0
    inter_group_d: Mapping[tuple[int, int], float] = field(default_factory=dict)
    attenuation: tuple[float, ...] | None = None
    d_range: tuple[float, float] = DEFAULT_D_RANGE

    def __post_init__(self):
        object.__setattr__(self, "group_of", tuple(int(g) for g in self.group_of))
        object.__setattr__(self, "inter_group_d", _normalize_pairs(self.inter_group_d))
        att = self.attenuation
        att = (0.0,) * len(self.group_of) if att is None else tuple(float(a) for a in att)
        object.__setattr__(self, "attenuation", att)
        object.__setattr__(self, "d_range", (float(self.d_range[0]), float(self.d_range[1])))
        problems = self.violations()
        if problems:
            raise ScenarioError(problems)

    def violations(self) -> list[str]:
        out = []
        if not self.length > 0:
            out.append(f"fiber length must be > 0 m, got {self.length}")
        if not self.group_of:
            out.append("fiber has no modes")
        elif sorted(set(self.group_of)) != list(range(1, max(self.group_of) + 1)):
            out.append(f"group labels must be contiguous from 1, got {sorted(set(self.group_of))}")
        if len(self.attenuation) != len(self.group_of):
            out.append(
                f"attenuation has {len(self.attenuation)} entries for {len(self.group_of)} modes"
            )
        if any(not a >= 0 for a in self.attenuation):
            out.append("attenuation must be >= 0 for every mode")
        if not self.intra_group_rate >= 0:
            out.append(f"intra_group_rate must be >= 0, got {self.intra_group_rate}")
        lo, hi = self.d_range
        q = self.group_count
        for (a, b), value in self.inter_group_d.items():
            if a == b or not (1 <= a <= q and 1 <= b <= q):
                out.append(f"inter_group_D({a},{b}) does not name two distinct groups in 1..{q}")
            elif value != 0 and not lo <= value <= hi:
                out.append(f"inter_group_D({a},{b}) = {value:g} 1/m outside admissible [{lo:g}, {hi:g}]")
        return out

    @classmethod
    def hermite_gauss(
        cls,
        length,
        groups=DEFAULT_GROUPS,
        intra_group_rate=1.0,
        inter_group_d=None,
        attenuation_db_per_km=0.0,
        mode_attenuation=None,
        d_range=DEFAULT_D_RANGE,
    ) -> "FiberSpec":
        """HG fiber with ``groups`` groups and uniform attenuation unless
        ``mode_attenuation`` (1/m per mode) is given."""
        group_of = hg_group_of(groups)
        if mode_attenuation is None:
            mode_attenuation = [db_per_km_to_per_m(attenuation_db_per_km)] * len(group_of)
        return cls(
            length=length,
            group_of=group_of,
            intra_group_rate=intra_group_rate,
            inter_group_d=inter_group_d or {},
            attenuation=tuple(mode_attenuation),
            d_range=d_range,
        )

    @property
    def mode_count(self) -> int:
        return len(self.group_of)

    @property
    def group_count(self) -> int:
        return max(self.group_of) if self.group_of else 0

    def members(self, g: int) -> np.ndarray:
        """0-based indices of the modes in group ``g``."""
        return np.flatnonzero(np.asarray(self.group_of) == g)

    def with_coupling(self, inter_group_d) -> "FiberSpec":
        return FiberSpec(
            self.length, self.group_of, self.intra_group_rate, inter_group_d,
            self.attenuation, self.d_range,
        )

    def with_length(self, length) -> "FiberSpec":
        return FiberSpec(
            length, self.group_of, self.intra_group_rate, self.inter_group_d,
            self.attenuation, self.d_range,
        )


# ----------------------------------------------------------------------------
# Devices
# ----------------------------------------------------------------------------
@dataclass(frozen=True)
class MuxDemuxSpec:
    """Measured modal multiplexer (or demultiplexer).

    ``insertion_loss_db`` holds signed dB transmissions (``-4.2`` means 4.2 dB
    of loss). ``crosstalk_db`` maps 1-based ``(p_in, p_out)`` pairs to the dB
    fraction of the input power leaking into ``p_out``; ``-inf`` entries are
    dropped.
    """

    insertion_loss_db: tuple[float, ...]
    crosstalk_db: Mapping[tuple[int, int], float] = field(default_factory=dict)
    wavelength_range: tuple[float, float] = (1500.0, 1600.0)

    def __post_init__(self):
        object.__setattr__(self, "insertion_loss_db", tuple(float(x) for x in self.insertion_loss_db))
        xt = {
            (int(a), int(b)): float(v)
            for (a, b), v in dict(self.crosstalk_db).items()
            if not (math.isinf(v) and v < 0)
        }
        object.__setattr__(self, "crosstalk_db", MappingProxyType(dict(sorted(xt.items()))))
        object.__setattr__(self, "wavelength_range", tuple(float(w) for w in self.wavelength_range))
        problems = self.violations()
        if problems:
            raise ScenarioError(problems)

    def violations(self) -> list[str]:
        out = []
        m = len(self.insertion_loss_db)
        for p, il in enumerate(self.insertion_loss_db, start=1):
            if not (math.isfinite(il) and il <= 0):
                out.append(f"insertion_loss_db[{p}] = {il} gives transmittance outside (0, 1]")
        for (a, b), v in self.crosstalk_db.items():
            if a == b or not (1 <= a <= m and 1 <= b <= m):
                out.append(f"crosstalk_db({a}->{b}) must name two distinct modes in 1..{m}")
            elif not v <= 0 or math.isnan(v):
                out.append(f"crosstalk_db({a}->{b}) = {v} gives transmittance outside (0, 1]")
        lo, hi = self.wavelength_range
        if not lo < hi:
            out.append(f"wavelength_range {self.wavelength_range} is empty")
        return out

    @property
    def mode_count(self) -> int:
        return len(self.insertion_loss_db)

    def covers(self, wavelength_nm) -> bool:
        lo, hi = self.wavelength_range
        return lo <= wavelength_nm <= hi

    @classmethod
    def uniform(cls, mode_count, insertion_loss_db, wavelength_range=(1500.0, 1600.0)):
        return cls((insertion_loss_db,) * mode_count, {}, wavelength_range)

    @classmethod
    def from_group_table(
        cls,
        insertion_loss_db,
        group_crosstalk_db,
        group_of: Sequence[int],
        wavelength_range=(1500.0, 1600.0),
    ) -> "MuxDemuxSpec":
        """Expand a group-level cross-talk table to mode pairs.

        ``group_crosstalk_db[g_in - 1][g_out - 1]`` is the dB fraction of the
        power launched in any mode of ``g_in`` that reaches group ``g_out``;
        it is split evenly across the modes of ``g_out``. Diagonal cells and
        ``None``/NaN cells are ignored.
        """
        group_of = list(group_of)
        if np.ndim(insertion_loss_db) == 0:
            insertion_loss_db = [float(insertion_loss_db)] * len(group_of)
        table = np.array(
            [[np.nan if v is None else v for v in row] for row in group_crosstalk_db], dtype=float
        )
        sizes = {g: group_of.count(g) for g in set(group_of)}
        xt = {}
        for i, gi in enumerate(group_of):
            for j, gj in enumerate(group_of):
                if gi == gj:
                    continue
                v = table[gi - 1, gj - 1]
                if np.isnan(v) or np.isneginf(v):
                    continue
                xt[(i + 1, j + 1)] = v - 10.0 * math.log10(sizes[gj])
        return cls(tuple(insertion_loss_db), xt, wavelength_range)


@dataclass(frozen=True)
class WdmFilterSpec:
    """Rectangular band-pass filter with finite out-of-band extinction."""

    center: float
    bandwidth: float = 1.0
    passband_loss_db: float = 0.0
    extinction_db: float = 30.0

    def __post_init__(self):
        problems = []
        if not self.bandwidth > 0:
            problems.append(f"filter bandwidth must be > 0 nm, got {self.bandwidth}")
        if not self.extinction_db > 0:
            problems.append(f"filter extinction_db must be > 0, got {self.extinction_db}")
        if not (math.isfinite(self.passband_loss_db) and self.passband_loss_db <= 0):
            problems.append(f"passband_loss_db {self.passband_loss_db} gives transmittance outside (0, 1]")
        if problems:
            raise ScenarioError(problems)

    def passes(self, wavelength_nm) -> bool:
        return abs(wavelength_nm - self.center) <= self.bandwidth / 2


@dataclass(frozen=True)
class DetectorSpec:
    efficiency: float
    dark_rate: float
    label: str = ""

    def __post_init__(self):
        problems = []
        if not 0 <= self.efficiency <= 1:
            problems.append(f"detector '{self.label}' efficiency {self.efficiency} outside [0, 1]")
        if not self.dark_rate >= 0:
            problems.append(f"detector '{self.label}' dark_rate {self.dark_rate} must be >= 0")
        if problems:
            raise ScenarioError(problems)


QUANTUM = "quantum"
CLASSICAL = "classical"


@dataclass(frozen=True)
class Channel:
    """One launched signal: a quantum pair stream or a classical CW carrier."""

    kind: str
    mode: ModeId
    wavelength: float
    power: float | None = None
    pair_rate: float | None = None

    def violations(self) -> list[str]:
        where = f"{self.kind} channel on {self.mode} @ {self.wavelength:g} nm"
        if self.kind == QUANTUM:
            if self.power is not None:
                return [f"{where} must not carry an optical power"]
            if self.pair_rate is None or not self.pair_rate >= 0:
                return [f"{where} needs a pair_rate >= 0 Hz"]
        elif self.kind == CLASSICAL:
            if self.pair_rate is not None:
                return [f"{where} must not carry a pair_rate"]
            if self.power is None or not self.power >= 0:
                return [f"{where} needs a power >= 0 W"]
        else:
            return [f"channel kind must be 'quantum' or 'classical', got {self.kind!r}"]
        return []


@dataclass(frozen=True)
class ChannelPlan:
    channels: tuple[Channel, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))

    def __iter__(self):
        return iter(self.channels)

    def __len__(self):
        return len(self.channels)

    @property
    def quantum(self) -> tuple[Channel, ...]:
        return tuple(c for c in self.channels if c.kind == QUANTUM)

    @property
    def classical(self) -> tuple[Channel, ...]:
        return tuple(c for c in self.channels if c.kind == CLASSICAL)

    def violations(self) -> list[str]:
        out = []
        seen = set()
        for ch in self.channels:
            out.extend(ch.violations())
            key = (ch.mode.p, ch.wavelength)
            if key in seen:
                out.append(f"duplicate assignment of ({ch.mode}, {ch.wavelength:g} nm)")
            seen.add(key)
        return out
