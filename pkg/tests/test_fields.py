import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wavecip.config import RunConfig, build_setup
from wavecip.exceptions import ConfigError, ShapeError
from wavecip.fields import (P_BOUNDS, RHO_BOUNDS, TEST_CENTERS, CoefficientField, contrast_error,
                            count_maxima, gaussian_target, locate_blobs, max_over_free,
                            peak_prominences, project_admissible)
from wavecip.geometry import make_grid


@pytest.fixture(scope="module")
def setup():
    return build_setup(RunConfig())


def test_test1_peak_values(setup):
    f = gaussian_target(1, setup.grid, setup.mask)
    mr, mp = max_over_free(f)
    assert mr == pytest.approx(5.0, abs=1e-12)
    assert mp == pytest.approx(3.0, abs=1e-12)
    j, i = np.unravel_index(np.argmax(f.rho), f.rho.shape)
    assert setup.grid.coord(i, j) == pytest.approx((0.0, 0.4), abs=1e-12) or \
        setup.grid.coord(i, j) == pytest.approx((0.3, 0.3), abs=1e-12)
    assert np.all(f.rho[~setup.mask] == 1.0)
    assert f.is_admissible()


def test_unknown_test_id(setup):
    with pytest.raises(ConfigError):
        gaussian_target(5, setup.grid, setup.mask)


@pytest.mark.parametrize("test_id, expected", [(1, 2), (2, 3), (3, 4), (4, 4)])
def test_truth_maxima_count(setup, test_id, expected):
    f = gaussian_target(test_id, setup.grid, setup.mask)
    assert count_maxima(f.rho, f.mask, 0.5) == expected
    assert len(TEST_CENTERS[test_id]) == expected


def test_truth_blobs_located(setup):
    f = gaussian_target(3, setup.grid, setup.mask)
    # (-0.15, 0.3) falls between nodes of the h = 0.02 grid, half a spacing off
    dist, ok = locate_blobs(f.rho, f.mask, setup.grid, TEST_CENTERS[3], tol=0.5 * setup.grid.h)
    assert ok
    assert sorted(dist)[:3] == pytest.approx([0.0, 0.0, 0.0], abs=1e-9)


def test_project_clamps():
    grid = make_grid((0, 1, 0, 1), 0.5)
    mask = np.zeros(grid.shape, bool)
    mask[1, 1] = mask[2, 1] = True
    rho = np.full(grid.shape, 7.0)
    p = np.full(grid.shape, 7.0)
    rho[1, 1], p[1, 1] = 0.2, -3.0
    f = project_admissible(CoefficientField(grid, rho, p, mask))
    assert f.rho[1, 1] == 1.0 and f.p[1, 1] == 1.0
    assert f.rho[2, 1] == 7.0 and f.p[2, 1] == 5.0
    assert np.all(f.rho[~mask] == 1.0) and np.all(f.p[~mask] == 1.0)
    assert f.is_admissible()


_vals = arrays(float, (5, 5), elements=st.floats(-20, 20, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(rho=_vals, p=_vals, rho2=_vals, p2=_vals)
def test_projection_idempotent_and_nonexpansive(rho, p, rho2, p2):
    grid = make_grid((0, 1, 0, 1), 0.25)
    mask = np.zeros(grid.shape, bool)
    mask[1:4, 1:4] = True
    a = project_admissible(CoefficientField(grid, rho, p, mask))
    b = project_admissible(CoefficientField(grid, rho2, p2, mask))
    assert a.is_admissible()
    aa = project_admissible(a)
    np.testing.assert_array_equal(aa.rho, a.rho)
    np.testing.assert_array_equal(aa.p, a.p)
    d_in = np.hypot(np.linalg.norm((rho - rho2)[mask]), np.linalg.norm((p - p2)[mask]))
    d_out = np.hypot(np.linalg.norm((a.rho - b.rho)[mask]), np.linalg.norm((a.p - b.p)[mask]))
    assert d_out <= d_in + 1e-12


def test_bounds_values():
    assert RHO_BOUNDS == (1.0, 10.0)
    assert P_BOUNDS == (1.0, 5.0)


def test_contrast_error_values(setup):
    truth = gaussian_target(1, setup.grid, setup.mask)
    rec = CoefficientField.homogeneous(setup.grid, setup.mask)
    rec.rho[setup.mask] = 5.87
    rec.p[setup.mask] = 3.09
    er, ep = contrast_error(rec, truth)
    assert er == pytest.approx(17.4, abs=1e-9)
    assert ep == pytest.approx(3.0, abs=1e-9)


def test_contrast_error_shape_mismatch(setup):
    truth = gaussian_target(1, setup.grid, setup.mask)
    other = make_grid((0, 1, 0, 1), 0.5)
    rec = CoefficientField.homogeneous(other, np.ones(other.shape, bool))
    with pytest.raises(ShapeError):
        contrast_error(rec, truth)


def test_field_shape_checked():
    grid = make_grid((0, 1, 0, 1), 0.5)
    with pytest.raises(ShapeError):
        CoefficientField(grid, np.ones((2, 2)), np.ones(grid.shape), np.ones(grid.shape, bool))


def test_prominence_two_peaks_oracle():
    # two peaks of height 3 and 2 joined by a saddle at 1.5, floor at 0
    v = np.zeros((3, 7))
    v[1] = [0.0, 3.0, 1.5, 1.5, 1.5, 2.0, 0.0]
    mask = np.ones_like(v, dtype=bool)
    peaks = peak_prominences(v, mask)
    assert peaks[0][:2] == pytest.approx((3.0, 3.0))
    assert peaks[1][:2] == pytest.approx((0.5, 2.0))
    assert (peaks[1][2], peaks[1][3]) == (1, 5)
    assert count_maxima(v, mask, 0.5) == 2
    assert count_maxima(v, mask, 0.51) == 1


def test_prominence_respects_mask():
    v = np.zeros((3, 7))
    v[1] = [0.0, 3.0, 1.5, 1.5, 1.5, 2.0, 0.0]
    mask = np.ones_like(v, dtype=bool)
    mask[:, 5:] = False
    assert count_maxima(v, mask, 0.1) == 1
    assert peak_prominences(v, np.zeros_like(mask)) == []


@settings(max_examples=40, deadline=None)
@given(v=arrays(np.int64, (6, 6), elements=st.integers(0, 10)),
       shift=st.floats(-5, 5), scale=st.floats(0.1, 10))
def test_prominence_affine_invariance(v, shift, scale):
    v = v.astype(float)
    mask = np.ones(v.shape, bool)
    a = peak_prominences(v, mask)
    b = peak_prominences(scale * v + shift, mask)
    assert len(a) == len(b)
    np.testing.assert_allclose([x[0] * scale for x in a], [x[0] for x in b], rtol=1e-9, atol=1e-9)
    # the global maximum always has the largest prominence
    assert a[0][1] == pytest.approx(v.max())
