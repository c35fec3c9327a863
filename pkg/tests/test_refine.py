import numpy as np
import pytest

from wavecip.config import RunConfig, build_setup
from wavecip.fields import CoefficientField, gaussian_target
from wavecip.lattice import base_level
from wavecip.optimizer import invert
from wavecip.refine import (SUMMARY_COLUMNS, error_indicator, flag_cells, nodal_indicator,
                            refine_and_reinvert)
from wavecip.synthdata import add_noise, generate_observations


class _State:
    def __init__(self, field, level):
        self.field, self.level = field, level


@pytest.fixture(scope="module")
def setup():
    return build_setup(RunConfig())


def test_flat_field_flags_nothing(setup):
    flat = CoefficientField.homogeneous(setup.grid, setup.mask)
    assert np.all(nodal_indicator(flat) == 0.0)
    ind = error_indicator(_State(flat, base_level(setup.grid, setup.domain, 2)))
    assert set(ind.values()) == {0.0}
    assert flag_cells(ind, 0.6) == set()
    assert flag_cells({}, 0.6) == set()


def test_indicator_peaks_on_blob_flank(setup):
    truth = gaussian_target(1, setup.grid, setup.mask)
    ind = nodal_indicator(truth)
    assert ind.max() == pytest.approx(2.0)  # rho and p share the shape
    X1, X2 = setup.grid.mesh
    r = np.hypot(X1 - 0.3, X2 - 0.3)
    near = r < 0.15
    j, i = np.unravel_index(np.argmax(np.where(near, ind, 0.0)), ind.shape)
    # |grad exp(-r^2 / w)| peaks at r = sqrt(w / 2) ~ 0.022, one spacing out
    assert 0.01 < r[j, i] < 0.05
    jc, ic = setup.grid.index(0.3, 0.3)[::-1]
    assert ind[jc, ic] == pytest.approx(0.0, abs=1e-12)


def test_indicator_scale_invariant(setup):
    truth = gaussian_target(3, setup.grid, setup.mask)
    scaled = truth.with_values(1 + 0.5 * (truth.rho - 1), 1 + 1.7 * (truth.p - 1))
    np.testing.assert_allclose(nodal_indicator(scaled), nodal_indicator(truth), atol=1e-12)


def test_flag_threshold():
    ind = {(0, 0): 1.0, (1, 0): 0.6, (2, 0): 0.59, (3, 0): 0.0}
    assert flag_cells(ind, 0.6) == {(0, 0), (1, 0)}
    assert flag_cells(ind, 1.0) == {(0, 0)}


def test_zero_levels_equals_plain_inversion(small_cfg):
    obs = add_noise(generate_observations(1, small_cfg, fine=False), 0.03, 1)
    res = refine_and_reinvert(obs, small_cfg, L_max=0, test_id=1)
    plain = invert(obs, small_cfg)
    assert len(res) == 1 and res[0].level == 0
    np.testing.assert_array_equal(res[0].state.field.rho, plain.field.rho)
    np.testing.assert_array_equal(res[0].state.field.p, plain.field.p)
    assert set(res[0].summary) == set(SUMMARY_COLUMNS)
    assert res[0].summary["test"] == 1 and res[0].summary["delta"] == 0.03


def test_refined_levels_nested_and_admissible(small_cfg):
    obs = add_noise(generate_observations(2, small_cfg, fine=False), 0.03, 1)
    res = refine_and_reinvert(obs, small_cfg, L_max=2, test_id=2)
    assert [r.level for r in res] == [0, 1, 2]
    for parent, child in zip(res, res[1:]):
        assert child.mesh.parent is parent.mesh
        assert child.mesh.is_nested()
        assert child.mesh.spacing == pytest.approx(0.5 * parent.mesh.spacing)
        assert 0 < child.n_flagged <= parent.mesh.n_cells
        assert child.state.field.is_admissible()
    assert res[-1].state.field.grid.h == pytest.approx(0.5 * small_cfg.domain.h)


def test_flat_result_stops_refinement(small_cfg):
    # exact flat data: the start is already optimal, nothing varies, nothing is flagged
    s = build_setup(small_cfg)
    from wavecip.synthdata import forward_trace

    obs = forward_trace(CoefficientField.homogeneous(s.grid, s.mask), small_cfg, s)
    res = refine_and_reinvert(obs, small_cfg, L_max=2)
    assert len(res) == 1
    assert "no cells flagged" in res[0].note


@pytest.mark.slow
def test_noiseless_contrast_error_does_not_grow():
    cfg = RunConfig().with_section("inversion", n_max=15).with_section("refine", n_max=8)
    obs = generate_observations(1, cfg, fine=False)
    res = refine_and_reinvert(obs, cfg, L_max=2, test_id=1)
    errs = [r.summary["err_rho_pct"] for r in res]
    assert len(errs) == 3
    assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:])), errs
