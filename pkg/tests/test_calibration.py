import math

import numpy as np
import pytest

from fmfsdm.calibration import (
    calibrate_coupling,
    composite_group_fractions,
    coupling_parameters,
    expand_parameters,
    fit_log_parameters,
    golden_section,
)
from fmfsdm.errors import CalibrationError, DomainError
from fmfsdm.model import FiberSpec


def test_layouts():
    assert len(coupling_parameters(5, "pairwise")) == 10
    assert len(coupling_parameters(5, "adjacent")) == 4
    assert len(coupling_parameters(5, "uniform")) == 1
    assert len(coupling_parameters(5, "uniform-adjacent")) == 1
    d = expand_parameters([2e-5], coupling_parameters(5, "uniform-adjacent"))
    assert set(d) == {(1, 2), (2, 3), (3, 4), (4, 5)}
    with pytest.raises(DomainError):
        coupling_parameters(5, "bogus")


def test_golden_section_interior_and_edge():
    x, _, _ = golden_section(lambda t: (t - 0.3) ** 2, 0.0, 1.0, tol=1e-8)
    assert x == pytest.approx(0.3, abs=1e-6)
    x, _, _ = golden_section(lambda t: t, 0.0, 1.0)
    assert x == 0.0


def synthetic(values, scheme, length=40.0):
    layout = coupling_parameters(5, scheme)
    fiber = FiberSpec.hermite_gauss(length, inter_group_d=expand_parameters(values, layout))
    return fiber, 10 * np.log10(composite_group_fractions(fiber))


@pytest.mark.parametrize("scheme", ["adjacent", "pairwise"])
def test_roundtrip(scheme):
    rng = np.random.default_rng(7)
    n = len(coupling_parameters(5, scheme))
    values = 10 ** rng.uniform(-6, -3, n)
    fiber, targets = synthetic(values, scheme)
    res = calibrate_coupling(targets, fiber.with_coupling({}), parameterization=scheme)
    got = np.array([res.inter_group_d[k[0]] for k in coupling_parameters(5, scheme)])
    np.testing.assert_allclose(got, values, rtol=1e-3)
    assert res.max_residual_db < 1e-3


def test_masked_cells_are_ignored():
    fiber, targets = synthetic([3e-5], "uniform-adjacent")
    targets = targets.tolist()
    targets[0][4] = None
    targets[4][0] = float("nan")
    targets[1][3] = -math.inf
    res = calibrate_coupling(targets, fiber.with_coupling({}), parameterization="uniform-adjacent")
    assert res.inter_group_d[(1, 2)] == pytest.approx(3e-5, rel=1e-4)
    # diagonal cells are fitted too; only the three masked cells drop out
    assert res.residuals_db.size == 25 - 3


def test_composite_mode_uses_devices():
    fiber, _ = synthetic([1e-4], "uniform-adjacent")
    mux = np.eye(15) * 0.9 + 0.001
    mux = mux / mux.sum(axis=0) * 0.5
    plain = composite_group_fractions(fiber)
    wrapped = composite_group_fractions(fiber, mux=mux, demux=mux)
    assert not np.allclose(plain, wrapped)
    targets = 10 * np.log10(wrapped)
    res = calibrate_coupling(targets, fiber.with_coupling({}), parameterization="uniform-adjacent",
                             mux=mux, demux=mux)
    assert res.inter_group_d[(1, 2)] == pytest.approx(1e-4, rel=1e-4)


def test_target_shape_checked():
    fiber, _ = synthetic([1e-4], "uniform")
    with pytest.raises(DomainError):
        calibrate_coupling(np.zeros((3, 3)), fiber)


def test_nonconvergence_carries_best():
    with pytest.raises(CalibrationError) as info:
        fit_log_parameters(lambda x: np.array([10 * (x[1] - x[0] ** 2), 1 - x[0], np.sin(3 * x[1])]), 2,
                           (-7, -2), sweeps=1, max_nfev=1)
    assert info.value.best is not None
