"""Time-tag Monte Carlo for heralded photon pairs and coincidence estimators.

Random streams
--------------
Every random draw comes from :func:`derive_rng`, a PCG64 generator seeded by
``SeedSequence(seed, spawn_key=keys)``. The pipeline uses the keys
``(purpose, channel, repetition)`` with the purpose codes in
:data:`STREAM_KEYS`, so each (channel, repetition) task owns an independent
stream and results do not depend on execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError, NoSignalError
from .model import db_to_linear

STREAM_KEYS = {"pairs": 1, "herald": 2, "idler": 3, "dark": 4, "leakage": 5, "route": 6, "thin": 7}


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; identical inputs give
    identical streams."""
    if int(seed) != seed or not 0 <= seed < 2**64:
        raise DomainError(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(keys))))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return derive_rng(seed)


@dataclass(frozen=True)
class CountingConfig:
    """Acquisition settings: input pair rate ``R_in`` (Hz), coincidence
    window ``t_c`` (s), acquisition time ``Δt`` (s), repetitions ``N_test``."""

    pair_rate_in: float = 2600.0
    window: float = 4.0e-9
    acquisition: float = 3.0
    repetitions: int = 100
    seed: int = 0

    def __post_init__(self):
        problems = []
        if not self.pair_rate_in >= 0:
            problems.append(f"pair_rate_in must be >= 0 Hz, got {self.pair_rate_in}")
        if not self.window > 0:
            problems.append(f"window must be > 0 s, got {self.window}")
        if not self.acquisition > 0:
            problems.append(f"acquisition must be > 0 s, got {self.acquisition}")
        if int(self.repetitions) != self.repetitions or self.repetitions < 1:
            problems.append(f"repetitions must be a positive integer, got {self.repetitions}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            problems.append(f"seed must be an explicit integer in [0, 2**64), got {self.seed!r}")
        if problems:
            raise DomainError("; ".join(problems))


@dataclass(frozen=True)
class EventStream:
    """Sorted detection times (s) inside ``[0, duration)``."""

    timestamps: np.ndarray
    duration: float
    label: str = ""

    def __post_init__(self):
        t = np.array(self.timestamps, dtype=float).reshape(-1)
        t.setflags(write=False)
        object.__setattr__(self, "timestamps", t)
        if t.size and (np.any(np.diff(t) < 0) or t[0] < 0 or t[-1] >= self.duration):
            raise ContractError(f"stream '{self.label}' must be sorted and inside [0, {self.duration})")

    def __len__(self):
        return self.timestamps.size

    @property
    def rate(self) -> float:
        return self.timestamps.size / self.duration


def poisson_times(rate, duration, rng) -> np.ndarray:
    """Sorted arrival times of a homogeneous Poisson process on ``[0, duration)``."""
    if rate < 0:
        raise DomainError(f"rate must be >= 0, got {rate}")
    n = rng.poisson(rate * duration) if rate > 0 else 0
    return np.sort(rng.random(n) * duration)


def simulate_pair_stream(cfg: CountingConfig, *keys: int) -> tuple[EventStream, EventStream]:
    """Herald and idler streams of a perfectly correlated pair source."""
    rng = derive_rng(cfg.seed, STREAM_KEYS["pairs"], *keys)
    t = poisson_times(cfg.pair_rate_in, cfg.acquisition, rng)
    return EventStream(t, cfg.acquisition, "herald"), EventStream(t, cfg.acquisition, "idler")


def thin_stream(s: EventStream, survival: float, seed) -> EventStream:
    """Keep each event independently with probability ``survival``."""
    if not 0 <= survival <= 1:
        raise DomainError(f"survival must be in [0, 1], got {survival}")
    if survival == 1:
        return s
    keep = _rng(seed).random(len(s)) < survival
    return EventStream(s.timestamps[keep], s.duration, s.label)


def add_background(s: EventStream, rate: float, duration: float, seed) -> EventStream:
    """Merge an independent Poisson process of ``rate`` Hz into ``s``."""
    if rate < 0:
        raise DomainError(f"rate must be >= 0, got {rate}")
    if rate == 0:
        return s
    extra = poisson_times(rate, duration, _rng(seed))
    return EventStream(np.sort(np.concatenate([s.timestamps, extra]), kind="mergesort"), duration, s.label)


@dataclass(frozen=True)
class CoincidenceCount:
    count: int
    rate: float


def _require_sorted(t, name):
    if t.size > 1 and np.any(np.diff(t) < 0):
        raise ContractError(f"stream {name} is not sorted ascending")


def count_coincidences(a, b, window: float, duration: float | None = None, all_pairs=False) -> CoincidenceCount:
    """Count coincidences between two sorted streams.

    The default greedy discipline walks ``a`` in time order and pairs each
    event with the earliest unmatched event of ``b`` within ``±window``;
    each event is used at most once. ``all_pairs=True`` instead counts every
    pair within the window.
    """
    ta = np.asarray(getattr(a, "timestamps", a), dtype=float)
    tb = np.asarray(getattr(b, "timestamps", b), dtype=float)
    _require_sorted(ta, "a")
    _require_sorted(tb, "b")
    if duration is None:
        duration = getattr(a, "duration", None) or getattr(b, "duration", None) or 1.0
    if ta.size == 0 or tb.size == 0:
        return CoincidenceCount(0, 0.0)

    first = np.searchsorted(tb, ta - window, side="left")
    if all_pairs:
        last = np.searchsorted(tb, ta + window, side="right")
        count = int(np.sum(last - first))
        return CoincidenceCount(count, count / duration)

    # only events with some b inside their window can change the outcome;
    # skipping the others leaves the greedy pointer walk unchanged
    nb = tb.size
    has = first < nb
    has[has] = tb[first[has]] <= ta[has] + window
    count = 0
    ptr = 0
    for i in np.flatnonzero(has):
        if first[i] > ptr:
            ptr = first[i]
        if ptr < nb and tb[ptr] <= ta[i] + window:
            count += 1
            ptr += 1
    return CoincidenceCount(count, count / duration)


def accidental_rate(r1, r2, window):
    """Accidental coincidence rate ``2 R1 R2 t_c``."""
    if np.any(np.asarray(r1) < 0) or np.any(np.asarray(r2) < 0) or window < 0:
        raise DomainError("rates and window must be >= 0")
    return 2.0 * r1 * r2 * window


def output_ratio(r_cp, r_ap, r_in):
    """``(L_p, eps_Lp) = ((R_cp - R_ap) / R_in, R_ap / R_in)``."""
    if not r_in > 0:
        raise DomainError(f"R_in must be > 0, got {r_in}")
    return (r_cp - r_ap) / r_in, r_ap / r_in


@dataclass(frozen=True)
class CoincidenceStats:
    R_1p: float
    R_2p: float
    R_cp: float
    R_ap: float
    L_p: float
    eps_Lp: float
    samples: dict = field(default_factory=dict, repr=False)
    stderr: dict = field(default_factory=dict)


def coincidence_stats(r_1p, r_2p, r_cp, r_in, window, samples=None) -> CoincidenceStats:
    """Assemble the per-channel statistics; ``samples`` holds per-repetition
    arrays for ``R_1p``, ``R_2p`` and ``R_cp`` when they are measured."""
    r_ap = accidental_rate(r_1p, r_2p, window)
    l_p, eps = output_ratio(r_cp, r_ap, r_in)
    samples = dict(samples or {})
    stderr = {}
    for key, values in samples.items():
        values = np.asarray(values, dtype=float)
        stderr[key] = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else math.nan
    return CoincidenceStats(r_1p, r_2p, r_cp, r_ap, l_p, eps, samples, stderr)


@dataclass(frozen=True)
class FqpResult:
    """Fractional quantum power: ``fqp`` sums to one, ``u`` is unnormalized."""

    fqp: np.ndarray
    eps: np.ndarray
    u: np.ndarray
    clamped: np.ndarray
    total: float


def fractional_quantum_power(r_cp, r_ap, r_in, il_db) -> FqpResult:
    """Loss-normalized share of net coincidences per output mode.

    ``u_p = (R_cp - R_ap) / (R_in 10^(IL_p/10))`` with negative values
    clamped to zero (flagged in ``clamped``); ``FQP_p = u_p / sum(u)`` and
    ``eps_p = (R_ap / R_in) / (10^(IL_p/10) sum(u))``.
    """
    r_cp = np.asarray(r_cp, dtype=float)
    r_ap = np.broadcast_to(np.asarray(r_ap, dtype=float), r_cp.shape)
    trans = db_to_linear(np.broadcast_to(np.asarray(il_db, dtype=float), r_cp.shape))
    if not r_in > 0:
        raise DomainError(f"R_in must be > 0, got {r_in}")
    if np.any(~(trans > 0)):
        raise DomainError("every transmittance must be > 0")
    u = (r_cp - r_ap) / (r_in * trans)
    clamped = u < 0
    u = np.where(clamped, 0.0, u)
    total = float(u.sum())
    if not total > 0:
        raise NoSignalError("all net coincidence rates are <= 0")
    fqp = u / total
    _close_unit_sum(fqp)
    eps = (r_ap / r_in) / (trans * total)
    return FqpResult(fqp, eps, u, clamped, total)


def _close_unit_sum(x: np.ndarray) -> None:
    """Nudge non-zero entries (largest first) until ``x.sum() == 1.0``.

    The rounding residue goes onto one entry; if the rounded sum starts to
    oscillate around 1, the next entry, with a finer ulp, takes over.
    """
    for i in np.argsort(-x, kind="stable"):
        if x[i] == 0.0:
            break
        seen = set()
        for _ in range(64):
            s = float(x.sum())
            if s == 1.0:
                return
            if s in seen:
                break
            seen.add(s)
            nxt = x[i] + (1.0 - s)
            if nxt == x[i]:
                nxt = np.nextafter(x[i], np.inf if s < 1.0 else -np.inf)
            if nxt < 0.0:
                break
            x[i] = nxt


def group_fqp(fqp, group_of) -> np.ndarray:
    """Sum per-mode fractions over each group (groups are 1-based)."""
    fqp = np.asarray(fqp, dtype=float)
    g = np.asarray(group_of)
    return np.array([fqp[g == k].sum() for k in range(1, int(g.max()) + 1)])


@dataclass(frozen=True)
class SnrResult:
    """Quantum-to-classical SNR in dB. ``unbounded`` marks excess noise at or
    below zero, in which case both values are ``None``."""

    exact: float | None
    approximate: float | None
    unbounded: bool = False


def snr(rc_0, rc_p, ra) -> SnrResult:
    excess = rc_p - rc_0
    if not excess > 0:
        return SnrResult(None, None, True)
    net = rc_0 - ra
    exact = 10.0 * math.log10(net / excess) if net > 0 else math.nan
    approx = 10.0 * math.log10(rc_0 / excess) if rc_0 > 0 else math.nan
    return SnrResult(exact, approx, False)
