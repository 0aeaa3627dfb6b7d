"""Fit inter-group coupling coefficients to measured group cross-talk.

The search runs in ``log10(D)`` inside the admissible range: a few
coordinate-wise golden-section sweeps give a derivative-free start, then a
bounded trust-region least-squares solve (a damped Gauss-Newton method)
polishes it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import CalibrationError, DomainError
from .model import FiberSpec
from .powerflow import build_coupling_matrix, fiber_transfer_matrix, group_aggregate

PARAMETERIZATIONS = ("pairwise", "adjacent", "uniform", "uniform-adjacent")
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_FLOOR = 1e-30


def coupling_parameters(groups: int, parameterization: str = "pairwise") -> list[list[tuple[int, int]]]:
    """Group pairs driven by each free parameter.

    ``pairwise`` gives one D per unordered pair, ``adjacent`` one per
    neighbouring pair (others fixed at zero), ``uniform`` one D shared by all
    pairs and ``uniform-adjacent`` one D shared by neighbouring pairs.
    """
    pairs = [(a, b) for a in range(1, groups + 1) for b in range(a + 1, groups + 1)]
    adjacent = [(a, b) for a, b in pairs if b - a == 1]
    if parameterization == "pairwise":
        return [[p] for p in pairs]
    if parameterization == "adjacent":
        return [[p] for p in adjacent]
    if parameterization == "uniform":
        return [pairs]
    if parameterization == "uniform-adjacent":
        return [adjacent]
    raise DomainError(f"unknown parameterization {parameterization!r}; use one of {PARAMETERIZATIONS}")


def expand_parameters(values, layout) -> dict[tuple[int, int], float]:
    return {pair: float(v) for v, pairs in zip(values, layout) for pair in pairs}


def golden_section(f, lo, hi, tol=1e-4, max_iter=200):
    """Minimize a unimodal scalar ``f`` on ``[lo, hi]``; the endpoints are
    checked too so boundary optima are returned exactly."""
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    n = 2
    while b - a > tol and n < max_iter:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
        n += 1
    x, fx = (c, fc) if fc <= fd else (d, fd)
    for end in (lo, hi):
        fe = f(end)
        n += 1
        if fe <= fx:
            x, fx = end, fe
    return x, fx, n


@dataclass
class FitResult:
    x: np.ndarray
    cost: float
    residuals: np.ndarray
    evaluations: int
    converged: bool
    message: str = ""


def fit_log_parameters(residual_fn, n_params, bounds, sweeps=2, max_nfev=400, x0=None) -> FitResult:
    """Least-squares fit of ``n_params`` parameters living in ``bounds``.

    ``residual_fn(x)`` returns the residual vector for parameter vector ``x``
    (already in log space). Raises :class:`CalibrationError` carrying the
    best-so-far :class:`FitResult` when the polish runs out of evaluations.
    """
    lo, hi = bounds
    evals = 0

    def cost(x):
        nonlocal evals
        evals += 1
        r = residual_fn(x)
        return 0.5 * float(r @ r)

    x = np.full(n_params, 0.5 * (lo + hi)) if x0 is None else np.clip(np.asarray(x0, float), lo, hi)
    for _ in range(sweeps):
        for i in range(n_params):
            def along(t, i=i):
                trial = x.copy()
                trial[i] = t
                return cost(trial)
            x[i], _, _ = golden_section(along, lo, hi)

    best = FitResult(x.copy(), cost(x), residual_fn(x), evals, False, "golden-section start")
    if not np.any(best.residuals):
        best.converged = True
        return best
    try:
        sol = least_squares(
            residual_fn, x, bounds=(lo, hi), method="trf", jac="3-point",
            xtol=1e-13, ftol=1e-13, gtol=1e-13, max_nfev=max_nfev,
        )
    except ValueError as exc:
        raise CalibrationError(f"least-squares polish failed: {exc}", best) from exc
    evals += sol.nfev * (1 + 2 * n_params)
    if sol.cost <= best.cost:
        best = FitResult(sol.x.copy(), float(sol.cost), sol.fun.copy(), evals, sol.status > 0, sol.message)
    else:
        best.evaluations = evals
        best.converged = sol.status > 0
        best.message = sol.message
    if sol.status <= 0:
        raise CalibrationError(f"calibration did not converge: {sol.message}", best)
    return best


@dataclass
class CalibrationResult:
    """Fitted couplings; ``inter_group_d`` maps ``(g, g')`` to D in 1/m."""

    inter_group_d: dict
    fiber: FiberSpec
    residuals_db: np.ndarray
    rms_residual_db: float
    max_residual_db: float
    iterations: int
    parameterization: str
    model_db: np.ndarray = field(repr=False, default=None)


def composite_group_fractions(fiber: FiberSpec, length=None, mux=None, demux=None, normalize=True):
    """Group-to-group fractions of fiber (optionally wrapped by MUX/DeMUX).

    ``mux`` and ``demux`` are mode-level transfer matrices ``t[q, p]``. With
    ``normalize`` each row is divided by its total so loss does not bias the
    cross-talk.
    """
    length = fiber.length if length is None else length
    transfer = fiber_transfer_matrix(build_coupling_matrix(fiber), fiber.attenuation, length)
    if mux is not None:
        transfer = transfer @ np.asarray(mux)
    if demux is not None:
        transfer = np.asarray(demux) @ transfer
    table = group_aggregate(transfer, fiber.group_of)
    if normalize:
        table = table / table.sum(axis=1, keepdims=True)
    return table


def calibrate_coupling(
    targets_db,
    fiber: FiberSpec,
    length: float | None = None,
    parameterization: str = "pairwise",
    mux=None,
    demux=None,
    sweeps: int = 2,
    max_nfev: int = 400,
) -> CalibrationResult:
    """Fit inter-group D values to a Q x Q group cross-talk table in dB.

    Cells that are NaN, ``None`` or ``-inf`` are masked. Passing ``mux`` and
    ``demux`` transfer matrices selects the composite (device + fiber) model;
    otherwise the fiber alone is fitted.
    """
    targets = np.array(
        [[np.nan if v is None else v for v in row] for row in targets_db], dtype=float
    )
    q = fiber.group_count
    if targets.shape != (q, q):
        raise DomainError(f"targets must be {q}x{q}, got {targets.shape}")
    if np.any(np.isposinf(targets)):
        raise DomainError("targets must be finite or masked")
    mask = np.isfinite(targets)
    layout = coupling_parameters(q, parameterization)
    lo, hi = (math.log10(v) for v in fiber.d_range)

    def model(x):
        trial = fiber.with_coupling(expand_parameters(10.0 ** np.asarray(x), layout))
        frac = composite_group_fractions(trial, length, mux, demux)
        return 10.0 * np.log10(np.maximum(frac, _FLOOR))

    def residuals(x):
        return (model(x) - targets)[mask]

    if not mask.any():
        values = np.full(len(layout), lo)
        fit = FitResult(values, 0.0, np.zeros(0), 0, True, "no targets")
    else:
        try:
            fit = fit_log_parameters(residuals, len(layout), (lo, hi), sweeps, max_nfev)
        except CalibrationError as exc:
            exc.best = _result(exc.best, layout, fiber, parameterization, model)
            raise
    return _result(fit, layout, fiber, parameterization, model)


def _result(fit, layout, fiber, parameterization, model):
    d = expand_parameters(10.0 ** fit.x, layout)
    r = np.asarray(fit.residuals)
    return CalibrationResult(
        inter_group_d=d,
        fiber=fiber.with_coupling(d),
        residuals_db=r,
        rms_residual_db=float(np.sqrt(np.mean(r**2))) if r.size else 0.0,
        max_residual_db=float(np.max(np.abs(r))) if r.size else 0.0,
        iterations=fit.evaluations,
        parameterization=parameterization,
        model_db=model(fit.x),
    )
