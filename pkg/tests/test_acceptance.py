"""End-to-end acceptance checks, one test per criterion.

The reconstruction criteria share one set of runs (4 targets x 2 noise
levels, 2 refinement levels each), computed once per session.  Each test
records a PASS/FAIL line that is printed in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from conftest import record
from wavecip import cli
from wavecip import stability as S
from wavecip.adjoint import MisfitConfig, functional_and_gradient
from wavecip.config import RunConfig, build_setup
from wavecip.exceptions import CFLError, InstabilityError
from wavecip.fields import (TEST_CENTERS, CoefficientField, count_maxima, free_mask,
                            gaussian_target, locate_blobs)
from wavecip.forward import discrete_energy, make_time_grid, solve_forward
from wavecip.geometry import build_domain
from wavecip.optimizer import invert
from wavecip.refine import refine_and_reinvert
from wavecip.synthdata import add_noise, generate_observations

SEED = 1
LEVELS = 2
DELTAS = (0.03, 0.10)


def acceptance_config():
    return (RunConfig()
            .with_section("noise", seed=SEED, fine_data=True)
            .with_section("refine", levels=LEVELS, n_max=30))


@pytest.fixture(scope="module")
def runs():
    """``{(test, delta): (results, level-0 seconds)}`` for all targets and noise levels."""
    cfg0 = acceptance_config()
    out = {}
    for test_id in (1, 2, 3, 4):
        clean = generate_observations(test_id, cfg0)
        for delta in DELTAS:
            cfg = cfg0.with_section("noise", delta=delta)
            obs = add_noise(clean, delta, SEED)
            setup = build_setup(cfg)
            t0 = time.perf_counter()
            base = invert(obs, cfg, truth=gaussian_target(test_id, setup.grid, setup.mask),
                          setup=setup)
            elapsed = time.perf_counter() - t0
            results = refine_and_reinvert(obs, cfg, test_id=test_id, base_state=base)
            out[test_id, delta] = (results, elapsed)
    return out


def _fd_problem():
    dom, grid = build_domain((-0.75, 0.75, -0.45, 0.45), (-0.65, 0.65, -0.35, 0.35), h=0.05)
    assert grid.shape == (19, 31)
    mask = free_mask(grid, dom)
    tg = make_time_grid(1.0, 0.005, omega_f=40.0)
    X1, X2 = grid.mesh
    truth = CoefficientField(
        grid, np.where(mask, 1 + 2 * np.exp(-((X1 - 0.2) ** 2 + (X2 - 0.15) ** 2) / 0.02), 1),
        np.where(mask, 1 + np.exp(-((X1 + 0.2) ** 2 + (X2 - 0.2) ** 2) / 0.02), 1), mask)
    obs = solve_forward(grid, truth, tg).traces
    rng = np.random.default_rng(2024)
    base = CoefficientField(grid, np.where(mask, 1 + 0.5 * rng.random(grid.shape), 1),
                            np.where(mask, 1 + 0.5 * rng.random(grid.shape), 1), mask)
    return grid, mask, tg, obs, base, rng


def test_01_adjoint_gradient_matches_finite_differences():
    t0 = time.perf_counter()
    grid, mask, tg, obs, base, rng = _fd_problem()
    mcfg = MisfitConfig(alpha1=1e-3, alpha2=2e-3)
    _, _, d_rho, d_p, _ = functional_and_gradient(grid, base, obs, tg, mcfg, 40.0)

    def J(f):
        return functional_and_gradient(grid, f, obs, tg, mcfg, 40.0)[0]

    eps = 1e-4
    worst = 0.0
    for _ in range(5):
        a = np.where(mask, rng.standard_normal(grid.shape), 0.0)
        b = np.where(mask, rng.standard_normal(grid.shape), 0.0)
        for sa, sb in ((1, 0), (0, 1)):
            fp = base.with_values(base.rho + eps * sa * a, base.p + eps * sb * b)
            fm = base.with_values(base.rho - eps * sa * a, base.p - eps * sb * b)
            fd = (J(fp) - J(fm)) / (2 * eps)
            ad = sa * np.sum(d_rho * a) + sb * np.sum(d_p * b)
            worst = max(worst, abs(fd - ad) / abs(fd))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-3 and elapsed < 60
    record(1, "adjoint gradient vs central FD", ok, f"max rel err {worst:.2e}, {elapsed:.1f} s")
    assert ok


def test_02_zero_residual_fixed_point():
    cfg = RunConfig()
    setup = build_setup(cfg)
    obs = generate_observations(1, cfg, fine=False)
    truth = gaussian_target(1, setup.grid, setup.mask)
    flat = CoefficientField.homogeneous(setup.grid, setup.mask)
    mcfg = MisfitConfig(s_z=cfg.inversion.s_z)
    J0, _, r0, p0, _ = functional_and_gradient(setup.grid, flat, obs, setup.time_grid, mcfg, 40.0)
    J, _, r, p, _ = functional_and_gradient(setup.grid, truth, obs, setup.time_grid, mcfg, 40.0)
    g0 = max(np.abs(r0).max(), np.abs(p0).max())
    g = max(np.abs(r).max(), np.abs(p).max())
    ok = J < 1e-10 * J0 and g < 1e-8 * g0
    record(2, "zero-residual fixed point", ok, f"J/J0 = {J / J0:.1e}, |g|/|g0| = {g / g0:.1e}")
    assert ok


def test_03_cfl_contract():
    dom, grid = build_domain(h=0.02)
    mask = free_mask(grid, dom)
    flat = CoefficientField.homogeneous(grid, mask)
    tg = make_time_grid(2.0, 0.002, omega_f=40.0)
    hist = solve_forward(grid, flat, tg, 40.0, keep_history=True)
    E = discrete_energy(grid, flat, tg, hist.u)
    start = int(math.ceil(tg.t1 / tg.tau)) + 1
    rel = np.diff(E[start:]) / np.abs(E[start:-1])
    bounded = tg.nt == 1000 and np.all(np.isfinite(hist.u)) and rel.max() <= 1e-10

    refused = False
    try:
        solve_forward(grid, flat, make_time_grid(2.0, 0.02, omega_f=40.0), 40.0)
    except CFLError:
        refused = True
    blown_at = None
    try:
        solve_forward(grid, flat, make_time_grid(2.0, 0.02, omega_f=40.0), 40.0, check_cfl=False)
    except InstabilityError as exc:
        blown_at = exc.step
    ok = bounded and refused and blown_at is not None and blown_at <= 100
    record(3, "CFL contract", ok, f"max rel energy increase {rel.max():.1e}; tau=0.02 refused="
           f"{refused}, blow-up at step {blown_at}")
    assert ok


def test_04_reconstruction_quality_test1(runs):
    results, elapsed = runs[1, 0.03]
    st = results[0].state
    fld = st.field
    tol = 3 * fld.grid.h
    ok_loc, dist = [], []
    for arr in (fld.rho, fld.p):
        d, ok = locate_blobs(arr, fld.mask, fld.grid, TEST_CENTERS[1], tol)
        ok_loc.append(ok)
        dist.append(max(d))
    err = st.log[-1]["err_rho_pct"]
    ok = all(ok_loc) and err <= 35.0 and st.n <= 50 and elapsed <= 900
    record(4, "Test 1 reconstruction at 3%", ok,
           f"err_rho {err:.1f}%, max rho {fld.rho[fld.mask].max():.2f}, center distances "
           f"rho {dist[0]:.3f} / p {dist[1]:.3f} (tol {tol:.2f}), n={st.n}, {elapsed:.0f} s")
    assert ok


def test_05_refinement_improves_contrast(runs, tmp_path):
    from wavecip import io as wio

    rows = []
    for (test_id, delta), (results, _) in sorted(runs.items()):
        d = tmp_path / f"t{test_id}_d{delta}"
        wio.write_table(d / "summary.csv", wio.provenance(acceptance_config(), seed=SEED),
                        wio.SUMMARY_COLUMNS,
                        [r.summary for r in results])
        rows.append(d)
    table = cli.collect_report(rows)
    for row in table:
        print(",".join(row[c] for c in wio.REPORT_COLUMNS))
    improved = runs[1, 0.03][0]
    coarse = improved[0].summary["err_rho_pct"]
    fine = improved[-1].summary["err_rho_pct"]
    # location recovery is required of every reported reconstruction, coarse and refined
    located = {}
    for (test_id, delta), (results, _) in sorted(runs.items()):
        for r in (results[0], results[-1]):
            fld = r.state.field
            dist, ok = locate_blobs(fld.rho, fld.mask, fld.grid, TEST_CENTERS[test_id], 3 * 0.02)
            located[test_id, delta, r.level] = ok
            print(f"test {test_id} delta {delta} level {r.level}: center distances "
                  + " ".join(f"{v:.3f}" for v in dist))
    ok = (len(improved) - 1 >= 2 and fine <= coarse and len(table) == 16
          and all(located.values()))
    missed = [k for k, v in located.items() if not v]
    record(5, "refinement improves contrast", ok,
           f"Test 1 3%: err_rho {coarse:.1f}% -> {fine:.1f}% over {len(improved) - 1} levels; "
           f"{len(table)} report rows; location misses {missed}")
    assert ok


def test_06_test4_superposition(runs):
    results, _ = runs[4, 0.03]
    counts = [count_maxima(r.state.field.rho, r.state.field.mask, 0.5) for r in results]
    ok = counts[0] <= 3
    record(6, "Test 4 stacked pair merges", ok,
           f"rho maxima with prominence >= 0.5: {counts[0]} (levels: {counts})")
    assert ok


def test_07_stability_constants():
    cfg = RunConfig()
    geom = S.geometry_from_config(cfg)
    lam = geom.Lambda
    beta = S.max_beta(geom)
    closed = S.max_beta_closed_form(geom)
    t_min = S.min_time(lam, beta)
    sep = S.build_weights(geom, 1.0, 1.1 * t_min, beta=beta)
    fail = S.build_weights(geom, 1.0, 0.9 * t_min, beta=beta)
    ok = (abs(lam - math.sqrt(6.17)) < 1e-6 and abs(lam - 2.4840) < 1e-4
          and abs(beta - closed) < 1e-6 and t_min == lam / math.sqrt(beta)
          and sep.separated and S.check_weights(sep)["separated"]
          and not fail.separated and not S.check_weights(fail)["separated"])
    record(7, "stability constants", ok,
           f"Lambda {lam:.6f}, beta* {beta:.7f} (closed form {closed:.7f}), T_min {t_min:.4f}")
    assert ok


def test_08_carleman_probe_bounded():
    cfg = RunConfig()
    st = cfg.stability
    geom = S.geometry_from_config(cfg)
    grid = S.probe_grid(geom, st.probe_h)
    X1, X2 = grid.mesh
    A = (X1 - geom.x0[0], X2 - geom.x0[1])
    rng = np.random.default_rng(SEED)
    bounded, worst_scale, peak = [], 0.0, 0.0
    for k in range(st.probe_functions):
        f = S.sine_mode(grid) if k == 0 else S.random_h10(grid, rng)
        rows = S.carleman_probe(f, A, 0.0, st.probe_s, geom, grid, lam=st.probe_lambda)
        rows10 = S.carleman_probe(10.0 * f, A, 0.0, st.probe_s, geom, grid, lam=st.probe_lambda)
        bounded.append(S.probe_bounded(rows))
        worst_scale = max(worst_scale, max(abs(a["ratio"] - b["ratio"]) / a["ratio"]
                                           for a, b in zip(rows, rows10)))
        peak = max(peak, max(r["ratio"] for r in rows))
    ok = all(bounded) and worst_scale <= 1e-12
    record(8, "Carleman probe", ok, f"bounded {sum(bounded)}/{len(bounded)}, max ratio "
           f"{peak:.3g}, scale invariance {worst_scale:.1e}")
    assert ok


def test_09_lipschitz_ratio():
    cfg = RunConfig()
    rows, summ = S.lipschitz_ratio_experiment(cfg)
    finite = all(math.isfinite(r["ratio"]) and r["ratio"] > 0 for r in rows)
    factors = S.halving_factors(rows)
    ok = finite and len(rows) == 20 and max(factors) < 2.0
    record(9, "Lipschitz ratio", ok, f"{len(rows)} ratios in [{summ['min_ratio']:.3g}, "
           f"{summ['max_ratio']:.3g}], empirical constant {summ['constant']:.3f}, worst halving "
           f"factor {max(factors):.3f}")
    assert ok


def test_10_determinism(tmp_path, small_cfg_path):
    outs = []
    for k in (1, 2):
        d = tmp_path / f"run{k}"
        assert cli.main(["simulate", "--config", str(small_cfg_path), "--test", "1", "--delta",
                         "0.03", "--seed", "7", "--out", str(d / "trace.csv")]) == 0
        assert cli.main(["invert", str(d / "trace.csv"), "--config", str(small_cfg_path),
                         "--levels", "1", "--out", str(d / "inv")]) == 0
        assert cli.main(["stability", "--config", str(small_cfg_path), "--probe-carleman",
                         "--lipschitz", "--out", str(d / "stab")]) == 0
        assert cli.main(["report", str(d / "inv"), "--out", str(d / "report.csv")]) == 0
        outs.append(d)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
    same = [(outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files]
    ok = len(files) >= 8 and all(same)
    record(10, "determinism", ok, f"{sum(same)}/{len(files)} CSV files byte-identical")
    assert ok
