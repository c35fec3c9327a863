"""Adaptive re-inversion on locally refined parameter lattices.

After an inversion on one level, cells where the reconstruction varies
fastest are split 2x2 and the inversion is restarted from the previous
result with the new, finer unknowns.  The indicator is the normalized
magnitude of the reconstructed coefficient gradients, which tracks the
flanks of the recovered inclusions.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import build_setup
from .fields import contrast_error, free_mask, gaussian_target, max_over_free
from .lattice import MeshLevel, base_level, prolong_field
from .optimizer import block_iterations, invert

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("test", "delta", "level", "max_rho", "err_rho_pct", "N_rho", "max_p",
                   "err_p_pct", "N_p")


def _normalized_grad(values, grid, mask):
    gy, gx = np.gradient(values, grid.h)
    mag = np.hypot(gx, gy)
    top = float(mag[mask].max()) if mask.any() else 0.0
    return mag / top if top > 0 else np.zeros_like(mag)


def nodal_indicator(fld):
    """``|grad rho| / max |grad rho| + |grad p| / max |grad p|`` on the solver grid, zero off the free set."""
    m = fld.mask
    ind = _normalized_grad(fld.rho, fld.grid, m) + _normalized_grad(fld.p, fld.grid, m)
    return np.where(m, ind, 0.0)


def error_indicator(state, level=None):
    """Per-cell refinement indicator for the cells of the state's lattice level.

    Returns ``{cell: value}``: the maximum of :func:`nodal_indicator` over
    the solver nodes of each cell.
    """
    level = level or state.level
    ind = nodal_indicator(state.field)
    return {cell: float(ind[level.cell_slices(cell)].max()) for cell in level.sorted_cells()}


def flag_cells(indicator, kappa):
    if not indicator:
        return set()
    top = max(indicator.values())
    if top <= 0:
        return set()
    return {c for c, v in indicator.items() if v >= kappa * top}


@dataclass
class LevelResult:
    level: int
    state: object
    mesh: MeshLevel
    n_flagged: int = 0
    note: str = ""
    summary: dict = field(default_factory=dict)


def summarize(state, truth, test_id, delta, level, tol):
    mr, mp = max_over_free(state.field)
    er, ep = contrast_error(state.field, truth) if truth is not None else (float("nan"),) * 2
    n_rho, n_p = block_iterations(state.log, tol)
    return dict(test=test_id, delta=delta, level=level, max_rho=mr, err_rho_pct=er, N_rho=n_rho,
                max_p=mp, err_p_pct=ep, N_p=n_p)


def refine_and_reinvert(observed, cfg, L_max=None, *, test_id=None, base_state=None):
    """Level-0 inversion followed by up to ``L_max`` refine-and-reinvert rounds.

    Returns a list of :class:`LevelResult`, one per completed level.  When
    ``test_id`` is known, contrast errors against the Gaussian target on
    each level's solver grid are logged.  Stops early when a round flags
    no cells.
    """
    L_max = cfg.refine.levels if L_max is None else int(L_max)
    setup = build_setup(cfg)
    delta = float(observed.meta.get("delta", cfg.noise.delta))
    tol = cfg.inversion.block_tol

    def truth_on(grid):
        if test_id is None:
            return None
        return gaussian_target(test_id, grid, free_mask(grid, setup.domain))

    mesh = base_level(setup.grid, setup.domain, cfg.inversion.base_factor)
    truth = truth_on(mesh.grid)
    state = base_state or invert(observed, cfg, level=mesh, truth=truth, setup=setup)
    results = [LevelResult(0, state, mesh, summary=summarize(state, truth, test_id, delta, 0, tol))]
    n_refined = cfg.refine.n_max if cfg.refine.n_max is not None else cfg.inversion.n_max

    for ell in range(1, L_max + 1):
        flagged = flag_cells(error_indicator(state, mesh), cfg.refine.kappa)
        if not flagged:
            results[-1].note = "no cells flagged; refinement stopped"
            log.info("level %d: nothing to refine", ell)
            break
        child = mesh.refined(flagged)
        assert child.is_nested()
        start = prolong_field(state.field, child.grid, setup.domain)
        truth = truth_on(child.grid)
        log.info("level %d: %d of %d cells refined, spacing %.4g", ell, len(flagged),
                 mesh.n_cells, child.spacing)
        state = invert(observed, cfg, level=child, start=start, truth=truth, setup=setup,
                       n_max=n_refined)
        mesh = child
        results.append(LevelResult(ell, state, mesh, len(flagged),
                                   summary=summarize(state, truth, test_id, delta, ell, tol)))
    return results
