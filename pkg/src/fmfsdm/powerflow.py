"""Linear power-flow model of random mode coupling.

Modal powers evolve as::

    dP_p/dz = -alpha_p P_p + sum_q d_pq (P_q - P_p)

with a symmetric, non-negative coupling matrix ``d``. The equations are
integrated with the classical fixed-step fourth-order Runge-Kutta scheme.
Because the system is linear and autonomous, one RK4 step is the matrix
polynomial ``S = I + hA + (hA)^2/2 + (hA)^3/6 + (hA)^4/24`` of the generator
``A``; repeated steps are applied either one by one (when a trace is
requested) or by binary powering of ``S``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import DomainError, InstabilityError, NonUniqueSteadyStateError
from .model import FiberSpec

NEGATIVE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class CouplingMatrix:
    """Per-unit-length coupling rates ``d[p, q]`` (1/m) plus the group labels."""

    d: np.ndarray
    group_of: tuple[int, ...]

    def __post_init__(self):
        d = np.array(self.d, dtype=float)
        d.setflags(write=False)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "group_of", tuple(self.group_of))
        if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] != len(self.group_of):
            raise DomainError(f"coupling matrix shape {d.shape} does not match {len(self.group_of)} modes")
        if np.any(d < 0) or np.any(np.diag(d) != 0) or not np.array_equal(d, d.T):
            raise DomainError("coupling matrix must be symmetric, non-negative with zero diagonal")

    @property
    def mode_count(self) -> int:
        return self.d.shape[0]

    @property
    def group_count(self) -> int:
        return max(self.group_of)

    def generator(self, attenuation=None) -> np.ndarray:
        """Matrix ``A`` with ``dP/dz = A P``."""
        a = self.d - np.diag(self.d.sum(axis=1))
        if attenuation is not None:
            a = a - np.diag(_attenuation(attenuation, self.mode_count))
        return a


@dataclass(frozen=True)
class PowerVector:
    powers: np.ndarray
    z: float = 0.0

    @property
    def total(self):
        return self.powers.sum(axis=0)


@dataclass(frozen=True)
class PropagationResult:
    final: PowerVector
    step_used: float
    steps: int
    trace: tuple[PowerVector, ...] | None = None


def _attenuation(attenuation, m):
    if attenuation is None:
        return np.zeros(m)
    att = np.broadcast_to(np.asarray(attenuation, dtype=float), (m,)).copy()
    if np.any(att < 0):
        raise DomainError("attenuation must be >= 0")
    return att


def build_coupling_matrix(fiber: FiberSpec) -> CouplingMatrix:
    """Block-structured coupling matrix of ``fiber``."""
    g = np.asarray(fiber.group_of)
    m = len(g)
    d = np.zeros((m, m))
    same = g[:, None] == g[None, :]
    d[same] = fiber.intra_group_rate
    for (a, b), value in fiber.inter_group_d.items():
        block = np.outer(g == a, g == b)
        d[block] = value
        d[block.T] = value
    np.fill_diagonal(d, 0.0)
    return CouplingMatrix(d, fiber.group_of)


def auto_step(cm: CouplingMatrix, attenuation, length) -> float:
    """Default step ``min(0.1 / max_row_sum(d + diag(alpha)), length / 100)``."""
    att = _attenuation(attenuation, cm.mode_count)
    rate = float(np.max(cm.d.sum(axis=1) + att))
    step = length / 100.0
    if rate > 0:
        step = min(step, 0.1 / rate)
    return step


def rk4_step_operator(generator: np.ndarray, step: float) -> np.ndarray:
    """One classical RK4 step for ``dP/dz = A P`` as a matrix."""
    ha = step * generator
    eye = np.eye(generator.shape[0])
    return eye + ha @ (eye + ha @ (eye + ha @ (eye + ha / 4.0) / 3.0) / 2.0)


def _check(powers, total_in, step, where):
    if not np.all(np.isfinite(powers)):
        raise InstabilityError(step, f"non-finite power {where}")
    scale = np.maximum(np.abs(total_in), np.finfo(float).tiny)
    if np.any(powers.min(axis=0) < -NEGATIVE_TOLERANCE * scale):
        raise InstabilityError(step, f"negative power {where}")
    if np.any(powers.sum(axis=0) > total_in * (1 + 1e-9) + 1e-300):
        raise InstabilityError(step, f"total power grew {where} (divergence)")


def propagate_power(
    cm: CouplingMatrix,
    attenuation,
    p0,
    length: float,
    step: float | None = None,
    samples: int | None = None,
) -> PropagationResult:
    """Integrate the power-flow equations over ``length`` meters.

    Parameters
    ----------
    cm : CouplingMatrix
    attenuation : array_like or None
        Per-mode power attenuation in 1/m.
    p0 : array_like
        Initial modal powers, shape ``(M,)`` or a batch ``(M, K)``.
    length : float
        Propagation distance in meters (>= 0).
    step : float, optional
        Integration step in meters. Defaults to :func:`auto_step`. The step
        is shrunk so that an integer number of steps lands exactly on
        ``length``.
    samples : int, optional
        If given, record ``samples`` evenly spaced snapshots (including both
        ends) in ``trace``.

    Raises
    ------
    InstabilityError
        When the step produces negative or diverging powers.
    """
    p0 = np.asarray(p0, dtype=float)
    if p0.shape[0] != cm.mode_count:
        raise DomainError(f"initial vector has {p0.shape[0]} entries for {cm.mode_count} modes")
    if np.any(p0 < 0) or not np.all(np.isfinite(p0)):
        raise DomainError("initial powers must be finite and >= 0")
    if not length >= 0:
        raise DomainError(f"length must be >= 0, got {length}")
    if step is not None and not step > 0:
        raise DomainError(f"step must be > 0, got {step}")

    if length == 0:
        trace = (PowerVector(p0.copy(), 0.0),) * (samples or 0) or None
        return PropagationResult(PowerVector(p0.copy(), 0.0), 0.0, 0, trace)

    h = auto_step(cm, attenuation, length) if step is None else float(step)
    n_steps = max(1, math.ceil(length / h - 1e-9))
    h = length / n_steps
    s = rk4_step_operator(cm.generator(attenuation), h)
    total_in = p0.sum(axis=0)

    trace = None
    if samples:
        marks = set(np.unique(np.round(np.linspace(0, n_steps, samples)).astype(int)).tolist())
        snaps = [PowerVector(p0.copy(), 0.0)] if 0 in marks else []
        p = p0.copy()
        for k in range(1, n_steps + 1):
            p = s @ p
            if k in marks:
                _check(p, total_in, h, f"at z = {k * h:g} m")
                snaps.append(PowerVector(p.copy(), k * h))
        trace = tuple(snaps)
    else:
        p = np.linalg.matrix_power(s, n_steps) @ p0

    _check(p, total_in, h, f"at z = {length:g} m")
    p = np.where(p < 0, 0.0, p)
    return PropagationResult(PowerVector(p, float(length)), h, n_steps, trace)


def fiber_transfer_matrix(cm: CouplingMatrix, attenuation, length, step=None) -> np.ndarray:
    """``F[q, p]``: power exiting mode ``q`` per unit power launched in ``p``."""
    return propagate_power(cm, attenuation, np.eye(cm.mode_count), length, step).final.powers


def group_aggregate(transfer: np.ndarray, group_of) -> np.ndarray:
    """Collapse a mode-level ``transfer[q, p]`` to a group table.

    Entry ``(g_in, g_out)`` is the fraction of power launched uniformly across
    the modes of ``g_in`` that exits in ``g_out``.
    """
    g = np.asarray(group_of)
    q = int(g.max())
    out = np.zeros((q, q))
    for gi in range(1, q + 1):
        cols = g == gi
        launched = transfer[:, cols].sum(axis=1) / cols.sum()
        for go in range(1, q + 1):
            out[gi - 1, go - 1] = launched[g == go].sum()
    return out


def group_transfer_fractions(cm: CouplingMatrix, attenuation, length, step=None) -> np.ndarray:
    """Q x Q table of group-to-group power fractions after ``length`` meters."""
    return group_aggregate(fiber_transfer_matrix(cm, attenuation, length, step), cm.group_of)


def steady_state_distribution(cm: CouplingMatrix, attenuation=None, tol=1e-12, max_iter=200) -> np.ndarray:
    """Normalized dominant eigenvector of the power-flow generator.

    Power iteration on ``E = exp(A * 1 m)`` (computed with the RK4 kernel)
    where each sweep squares the operator, so sweep ``k`` applies
    ``E ** (2 ** k)``; this reaches the slow inter-group time scales in a few
    dozen sweeps. Stops when the normalized operator changes by less than
    ``tol``.

    Raises
    ------
    NonUniqueSteadyStateError
        If the coupling graph is disconnected.
    """
    m = cm.mode_count
    if m == 1:
        return np.ones(1)
    n_comp, _ = connected_components(cm.d > 0, directed=False)
    if n_comp > 1:
        raise NonUniqueSteadyStateError(
            f"coupling graph has {n_comp} disconnected components; steady state is not unique"
        )
    e = fiber_transfer_matrix(cm, attenuation, 1.0)
    e /= e.max()
    for _ in range(max_iter):
        nxt = e @ e
        nxt /= nxt.max()
        change = np.max(np.abs(nxt - e))
        e = nxt
        if change < tol:
            break
    else:
        raise NonUniqueSteadyStateError(f"power iteration did not converge in {max_iter} sweeps")
    v = e.sum(axis=1)
    return v / v.sum()
