"""Linear power models of the MUX/DeMUX, WDM filters and photon detectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import photon_energy
from .errors import DomainError, InfeasibleDeviceError
from .model import DetectorSpec, MuxDemuxSpec, WdmFilterSpec, db_to_linear

_SLACK = 1e-12


@dataclass(frozen=True)
class TransferMatrix:
    """Power transmittances ``t[q, p]`` from input ``p`` to output ``q``.

    Columns index inputs, so ``apply_transfer`` is ``t @ x`` and cascading
    ``A`` after ``B`` is ``A.t @ B.t``.
    """

    t: np.ndarray
    wavelength_band: tuple[float, float] = (1500.0, 1600.0)

    def __post_init__(self):
        t = np.array(self.t, dtype=float)
        t.setflags(write=False)
        object.__setattr__(self, "t", t)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise DomainError(f"transfer matrix must be square, got shape {t.shape}")
        if np.any(t < 0) or np.any(t > 1 + _SLACK):
            raise DomainError("transfer matrix entries must lie in [0, 1]")
        if np.any(t.sum(axis=0) > 1 + 1e-9):
            raise DomainError("transfer matrix is not passive: a column sums above 1")

    @property
    def mode_count(self) -> int:
        return self.t.shape[0]

    def __matmul__(self, other: "TransferMatrix") -> "TransferMatrix":
        lo = max(self.wavelength_band[0], other.wavelength_band[0])
        hi = min(self.wavelength_band[1], other.wavelength_band[1])
        return TransferMatrix(self.t @ other.t, (lo, hi))

    @classmethod
    def identity(cls, m, band=(1500.0, 1600.0)):
        return cls(np.eye(m), band)


@dataclass(frozen=True)
class DetectorResponse:
    click_rate: float
    signal: float
    dark: float
    leakage: float


def mux_from_measurements(spec: MuxDemuxSpec) -> TransferMatrix:
    """Build the transfer matrix of a measured MUX or DeMUX.

    Column ``p`` carries a total transmittance ``10 ** (IL_p / 10)``; the
    cross-talk entries are taken as given and the diagonal receives the
    remainder.

    Raises
    ------
    InfeasibleDeviceError
        If the cross-talk leaving a channel exceeds its total transmittance.
    """
    m = spec.mode_count
    t = np.zeros((m, m))
    for (p_in, p_out), xt in spec.crosstalk_db.items():
        t[p_out - 1, p_in - 1] = db_to_linear(xt)
    total = db_to_linear(np.array(spec.insertion_loss_db))
    leak = t.sum(axis=0)
    bad = np.flatnonzero(leak > total * (1 + _SLACK))
    if bad.size:
        p = bad[0]
        raise InfeasibleDeviceError(
            f"channel {p + 1}: cross-talk leakage {leak[p]:.6g} exceeds total transmittance {total[p]:.6g}"
        )
    t[np.arange(m), np.arange(m)] = np.maximum(total - leak, 0.0)
    return TransferMatrix(t, spec.wavelength_range)


def apply_transfer(tm: TransferMatrix, input_powers) -> np.ndarray:
    x = np.asarray(getattr(input_powers, "powers", input_powers), dtype=float)
    if x.shape[0] != tm.mode_count:
        raise DomainError(f"input has {x.shape[0]} modes, transfer matrix has {tm.mode_count}")
    if np.any(x < 0):
        raise DomainError("input powers must be >= 0")
    return tm.t @ x


def filter_transmittance(f: WdmFilterSpec, wavelength) -> float:
    if f.passes(wavelength):
        return db_to_linear(f.passband_loss_db)
    return db_to_linear(-f.extinction_db)


def apply_wdm_filter(f: WdmFilterSpec, wavelength, power):
    """Power after the filter: passband loss in band, extinction out of band."""
    if np.any(np.asarray(power) < 0):
        raise DomainError("power must be >= 0")
    return power * filter_transmittance(f, wavelength)


def photon_rate(power, wavelength_nm):
    """Photons per second carried by ``power`` watts at ``wavelength_nm``."""
    return power / photon_energy(wavelength_nm)


def detect(d: DetectorSpec, incident_rate, leakage_rate=0.0) -> DetectorResponse:
    """Click rate of a linear detector (no dead time or afterpulsing)."""
    if incident_rate < 0 or leakage_rate < 0:
        raise DomainError("rates must be >= 0")
    signal = d.efficiency * incident_rate
    leakage = d.efficiency * leakage_rate
    return DetectorResponse(signal + d.dark_rate + leakage, signal, d.dark_rate, leakage)
