"""Projected Polak-Ribiere+ conjugate gradients with decaying Tikhonov weights.

The line search works on ``phi(t) = J(proj(v + t d))``: Armijo backtracking
from ``t = 1`` with halving, followed by one safeguarded quadratic
interpolation trial that is kept only if it lowers ``J`` further.  For the
coefficient problem ``d`` is scaled so that ``t = 1`` changes each block
by at most its configured step size.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .adjoint import data_term, raw_gradient, regularization, solve_adjoint, weighted_residual
from .adjoint import MisfitConfig
from .config import build_setup
from .exceptions import ConfigError, InstabilityError
from .fields import P_BOUNDS, RHO_BOUNDS, CoefficientField, contrast_error, free_mask
from .forward import Observation, WaveHistory, solve_forward
from .lattice import Parameterization, base_level

log = logging.getLogger(__name__)

LOG_COLUMNS = ("n", "misfit", "data_term", "grad_norm_rho", "grad_norm_p", "alpha1", "alpha2",
               "step", "err_rho_pct", "err_p_pct")


def alpha0_from_noise(delta, zeta):
    """Initial regularization weight ``delta ** zeta``."""
    if not 0 < delta < 1:
        raise ConfigError(f"noise level delta={delta} must lie in (0, 1)")
    if not 0 < zeta < 1:
        raise ConfigError(f"exponent zeta={zeta} must lie in (0, 1)")
    return float(delta) ** float(zeta)


def alpha_schedule(n, alpha0, q):
    """``alpha0 (n + 1) ** -q``; accepts scalars or tuples of weights."""
    if not 0 < q < 1:
        raise ConfigError(f"decay exponent q={q} must lie in (0, 1)")
    if n < 0:
        raise ConfigError("iteration index must be non-negative")
    factor = (n + 1.0) ** (-q)
    if isinstance(alpha0, (tuple, list)):
        return tuple(a * factor for a in alpha0)
    return alpha0 * factor


@dataclass
class Evaluation:
    """Functional value at a point plus whatever the gradient needs later."""

    value: float
    data: float = 0.0
    extra: object = None


@dataclass
class InversionState:
    v: list
    evaluation: Evaluation
    n: int = 0
    g_prev: list | None = None  # preconditioned gradient at the previous iterate
    G_prev: list | None = None  # raw gradient at the previous iterate
    d_prev: list | None = None
    alpha_n: tuple = (0.0, 0.0)
    step: float = 0.0
    restarted: bool = True
    stalled: bool = False
    reason: str = ""
    log: list = field(default_factory=list)
    field: object = None
    gradient: tuple | None = None  # final L2 gradient (g_rho, g_p) on the solver grid

    @property
    def misfit(self):
        return self.evaluation.value


class QuadraticProblem:
    """``0.5 x^T A x - b^T x`` in a single block; a test bed for the CG machinery."""

    def __init__(self, A, b, lower=None, upper=None):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        n = self.b.size
        self.lower = [np.full(n, -np.inf) if lower is None else np.asarray(lower, float)]
        self.upper = [np.full(n, np.inf) if upper is None else np.asarray(upper, float)]
        self.metric = [np.ones(n)]
        self.step_scales = None

    def evaluate(self, v):
        x = v[0]
        return Evaluation(0.5 * x @ self.A @ x - self.b @ x)

    def gradient(self, ev, v):
        return [self.A @ v[0] - self.b]

    @property
    def minimizer(self):
        return np.linalg.solve(self.A, self.b)


def _dot(a, b):
    return float(sum(np.dot(x, y) for x, y in zip(a, b)))


def project(problem, v):
    return [np.clip(x, lo, hi) for x, lo, hi in zip(v, problem.lower, problem.upper)]


def precondition(problem, G):
    return [g / m for g, m in zip(G, problem.metric)]


def block_norms(G, ghat):
    """Dual norms ``sqrt(<G, ghat>)`` of the gradient blocks in the search metric."""
    return [math.sqrt(max(float(np.dot(g, gh)), 0.0)) for g, gh in zip(G, ghat)]


def _held(problem, v, ghat):
    """Masks of variables on a bound whose steepest-descent move points outward."""
    return [((x <= lo) & (gh > 0)) | ((x >= hi) & (gh < 0))
            for x, gh, lo, hi in zip(v, ghat, problem.lower, problem.upper)]


def _free_direction(problem, v, d):
    """Zero the components that would immediately leave the box."""
    out = []
    for x, dx, lo, hi in zip(v, d, problem.lower, problem.upper):
        dx = dx.copy()
        dx[((x <= lo) & (dx < 0)) | ((x >= hi) & (dx > 0))] = 0.0
        out.append(dx)
    return out


def pr_plus(G, ghat, G_prev, g_prev, mode="joint"):
    """Polak-Ribiere+ coefficients, one shared value (``joint``) or one per block (``block``).

    ``G`` are raw gradients, ``ghat`` their preconditioned counterparts.
    """
    if mode == "joint":
        den = _dot(G_prev, g_prev)
        num = _dot(G, [a - b for a, b in zip(ghat, g_prev)])
        return [max(0.0, num / den) if den > 0 else 0.0] * len(G)
    if mode != "block":
        raise ConfigError(f"unknown beta mode {mode!r}")
    out = []
    for g, gh, gp, ghp in zip(G, ghat, G_prev, g_prev):
        den = float(np.dot(gp, ghp))
        out.append(max(0.0, float(np.dot(g, gh - ghp)) / den) if den > 0 else 0.0)
    return out


def cg_step(state, gradient, problem, *, restart_every=10, c=1e-4, max_halvings=20,
            refine_trials=2, beta_mode="joint"):
    """One projected PR+ iteration from ``state`` given the raw gradient at ``state.v``.

    Returns the next state; ``stalled`` is set when the line search fails.
    """
    G = [np.asarray(g, dtype=float) for g in gradient]
    ghat = precondition(problem, G)
    # drop components held at a bound by the gradient; CG runs on the free subspace
    held = _held(problem, state.v, ghat)
    G = [np.where(hb, 0.0, g) for g, hb in zip(G, held)]
    ghat = [np.where(hb, 0.0, g) for g, hb in zip(ghat, held)]
    restart = state.d_prev is None or state.n % restart_every == 0
    d = []
    betas = [0.0] * len(G) if restart else pr_plus(G, ghat, state.G_prev, state.g_prev, beta_mode)
    for b, gh in enumerate(ghat):
        d.append(-gh + betas[b] * state.d_prev[b] if betas[b] > 0 else -gh)
    d = _free_direction(problem, state.v, d)
    if _dot(G, d) >= 0:
        restart = True
        d = [-gh for gh in ghat]

    nxt = InversionState(v=state.v, evaluation=state.evaluation, n=state.n + 1, g_prev=ghat,
                         G_prev=G, d_prev=d, alpha_n=state.alpha_n, restarted=restart,
                         log=state.log, field=state.field)
    slope = _dot(G, d)
    if not slope < 0:
        nxt.stalled, nxt.reason = True, "no descent direction"
        return nxt

    if problem.step_scales is not None:
        ratio = max(float(np.abs(db).max()) / s for db, s in zip(d, problem.step_scales))
        d = [db / ratio for db in d] if ratio > 0 else d
        nxt.d_prev = d
        slope = _dot(G, d)

    v0, phi0 = state.v, state.evaluation.value

    def trial(t):
        vt = project(problem, [x + t * dx for x, dx in zip(v0, d)])
        try:
            ev = problem.evaluate(vt)
        except InstabilityError:
            return vt, None
        return vt, ev

    def armijo_ok(vt, ev):
        if ev is None or not np.isfinite(ev.value):
            return False
        lin = _dot(G, [a - b for a, b in zip(vt, v0)])
        return ev.value <= phi0 + c * min(lin, 0.0) and lin < 0

    t = 1.0 if (restart or state.step <= 0) else min(1.0, 2.0 * state.step)
    for _ in range(max_halvings + 1):
        vt, ev = trial(t)
        if armijo_ok(vt, ev):
            break
        # backtrack: at most halve, at least divide by ten, parabola in between
        tq = _parabola_min(phi0, slope, t, None if ev is None else ev.value)
        t = 0.5 * t if tq is None else min(max(tq, 0.1 * t), 0.5 * t)
    else:
        nxt.stalled, nxt.reason = True, "line search exhausted"
        return nxt

    # refine along the ray with parabolic fits; keep a trial only if it improves J
    pts = [(0.0, phi0), (t, ev.value)]
    for _ in range(refine_trials):
        tq = _parabola_vertex(pts, slope)
        if tq is None:
            break
        tq = min(max(tq, 0.1 * t), 4.0 * t)
        if abs(tq - t) <= 0.05 * t:
            break
        vq, evq = trial(tq)
        if evq is None or not np.isfinite(evq.value):
            break
        pts.append((tq, evq.value))
        if evq.value < ev.value:
            vt, ev, t = vq, evq, tq
        else:
            break

    nxt.v, nxt.evaluation, nxt.step = vt, ev, t
    return nxt


def _parabola_min(phi0, slope, t, phit):
    """Minimizer of the parabola through ``phi(0)``, ``phi'(0)`` and ``phi(t)``."""
    if phit is None or not np.isfinite(phit):
        return None
    curv = phit - phi0 - slope * t
    if curv <= 0:
        return None
    return -slope * t * t / (2.0 * curv)


def _parabola_vertex(pts, slope):
    """Vertex of a parabola through the best three samples (or two plus the slope at 0)."""
    pts = sorted(pts, key=lambda p: p[1])[:3]
    if len(pts) < 3:
        (t0, f0), (t1, f1) = sorted(pts)
        return _parabola_min(f0, slope, t1, f1) if t0 == 0.0 else None
    ts = np.array([p[0] for p in pts])
    fs = np.array([p[1] for p in pts])
    a, b, _ = np.polyfit(ts, fs, 2)
    if not a > 0:
        return None
    return float(-b / (2.0 * a))


def minimize(problem, v0, *, n_max=50, grad_tol=1e-6, **kw):
    """Plain projected PR+ loop (fixed functional)."""
    state = InversionState(v=project(problem, [np.asarray(x, float) for x in v0]),
                           evaluation=None)
    state.evaluation = problem.evaluate(state.v)
    g0 = None
    while True:
        G = problem.gradient(state.evaluation, state.v)
        gn = math.sqrt(sum(x * x for x in block_norms(G, precondition(problem, G))))
        g0 = gn if g0 is None else g0
        state.log.append({"n": state.n, "misfit": state.evaluation.value, "grad_norm": gn,
                          "step": state.step})
        if gn <= grad_tol * g0 or gn == 0.0:
            state.reason = "gradient"
            return state
        if state.n >= n_max:
            state.reason = "n_max"
            return state
        state = cg_step(state, G, problem, **kw)
        if state.stalled:
            return state


class CoefficientProblem:
    """Tikhonov functional on a lattice parameterization, with adjoint gradients."""

    def __init__(self, param, observed, time_grid, cfg, observation=None, initial=None):
        self.param = param
        self.grid = param.grid
        self.observed = observed
        self.tg = time_grid
        self.cfg = cfg
        self.obs = observation or Observation.matching(self.grid, observed.x1, observed.ds)
        self.initial = initial
        self.misfit_cfg = MisfitConfig(s_z=cfg.inversion.s_z)
        self.alpha = (0.0, 0.0)
        n = param.size
        self.lower = [np.full(n, RHO_BOUNDS[0]), np.full(n, P_BOUNDS[0])]
        self.upper = [np.full(n, RHO_BOUNDS[1]), np.full(n, P_BOUNDS[1])]
        self.metric = [param.metric.copy(), param.metric.copy()]
        self.step_scales = (cfg.inversion.step_rho, cfg.inversion.step_p)
        self.n_forward = 0
        self.last_gradient = None

    def reg_value(self, fld):
        return regularization(fld, self.misfit_cfg.with_alphas(*self.alpha), self.grid)

    def evaluate(self, v):
        fld = self.param.to_field(v[0], v[1])
        hist = solve_forward(self.grid, fld, self.tg, self.cfg.source.omega_f, keep_history=True,
                             observation=self.obs, source=self.cfg.source.plane_wave,
                             initial=self.initial)
        self.n_forward += 1
        dterm = data_term(hist.traces, self.observed, self.tg, self.misfit_cfg.s_z)
        return Evaluation(dterm + self.reg_value(fld), dterm, (fld, hist))

    def revalue(self, ev):
        """Same point, current regularization weights."""
        fld = ev.extra[0]
        return Evaluation(ev.data + self.reg_value(fld), ev.data, ev.extra)

    def gradient(self, ev, v=None):
        fld, hist = ev.extra
        res = weighted_residual(hist.traces, self.observed, self.tg, self.misfit_cfg.s_z)
        lam = solve_adjoint(self.grid, fld, res, self.tg, self.obs)
        d_rho, d_p = raw_gradient(hist.u, lam.u, fld, self.tg,
                                  self.misfit_cfg.with_alphas(*self.alpha), self.grid)
        h2 = self.grid.h ** 2
        self.last_gradient = (d_rho / h2, d_p / h2)  # L2 gradient on the solver grid
        return [self.param.pullback(d_rho), self.param.pullback(d_p)]

    def calibrate_blocks(self, G):
        """Relative block weights so the first steepest-descent step moves each block by its step size."""
        for b in range(2):
            peak = float(np.abs(G[b] / self.param.metric).max())
            if peak > 0:
                self.metric[b] = self.param.metric * (peak / self.step_scales[b])


def _noise_level(observed, cfg):
    return float(observed.meta.get("delta", cfg.noise.delta))


def estimate_noise_term(observed, delta, time_grid, s_z):
    from .synthdata import expected_noise_term

    return expected_noise_term(observed, delta, time_grid, s_z)


def initial_alpha(cfg, delta, data0, area):
    """``delta ** zeta``, optionally scaled to the data term of the starting guess.

    With the ``initial_misfit`` reference the penalty of a deviation that
    spans the whole admissible interval over the free region equals
    ``delta ** zeta`` times the starting data term.
    """
    inv = cfg.inversion
    if delta <= 0:
        return (0.0, 0.0)
    a = alpha0_from_noise(delta, inv.zeta)
    if inv.alpha_reference == "absolute":
        return (a, a)
    spans = (RHO_BOUNDS[1] - RHO_BOUNDS[0], P_BOUNDS[1] - P_BOUNDS[0])
    return tuple(a * data0 / (area * s * s) for s in spans)


def invert(observed, cfg, *, level=None, start=None, truth=None, setup=None, n_max=None):
    """Reconstruct ``(rho, p)`` from a boundary trace.

    ``level`` / ``start`` select the parameter lattice and the field it
    perturbs (default: the level-0 lattice over Omega1 and ``rho = p = 1``).
    Returns the final :class:`InversionState`; its ``log`` holds one record
    per iterate with the columns of :data:`LOG_COLUMNS`.
    """
    inv = cfg.inversion
    setup = setup or build_setup(cfg)
    if level is None:
        level = base_level(setup.grid, setup.domain, inv.base_factor)
    grid = level.grid
    if start is None:
        start = CoefficientField.homogeneous(grid, free_mask(grid, setup.domain))
    tg = setup.time_grid
    initial = None if cfg.source.initial else np.zeros(grid.shape)
    param = Parameterization(level, start)
    problem = CoefficientProblem(param, observed, tg, cfg, initial=initial)
    n_max = inv.n_max if n_max is None else n_max

    delta = _noise_level(observed, cfg)
    noise_term = estimate_noise_term(observed, delta, tg, inv.s_z)
    state = InversionState(v=project(problem, list(param.v0)), evaluation=None)
    ev = problem.evaluate(state.v)
    area = float(np.sum(param.metric))
    alpha0 = initial_alpha(cfg, delta, ev.data, area)
    state.alpha_n = problem.alpha = alpha_schedule(0, alpha0, inv.q)
    state.evaluation = problem.revalue(ev)

    g0 = None
    prev_misfit = None
    while True:
        n = state.n
        problem.alpha = state.alpha_n = alpha_schedule(n, alpha0, inv.q)
        state.evaluation = problem.revalue(state.evaluation)
        fld = state.evaluation.extra[0]
        state.field = fld
        G = problem.gradient(state.evaluation)
        if n == 0:
            problem.calibrate_blocks(G)
        gn = block_norms(G, precondition(problem, G))
        # report plain L2 gradient norms, independent of the search metric
        l2 = block_norms(G, [g / param.metric for g in G])
        total = math.sqrt(gn[0] ** 2 + gn[1] ** 2)
        g0 = total if g0 is None else g0
        err = contrast_error(fld, truth) if truth is not None else (float("nan"),) * 2
        rec = dict(n=n, misfit=state.evaluation.value, data_term=state.evaluation.data,
                   grad_norm_rho=l2[0], grad_norm_p=l2[1], alpha1=state.alpha_n[0],
                   alpha2=state.alpha_n[1], step=state.step, err_rho_pct=err[0], err_p_pct=err[1])
        rec["increase"] = prev_misfit is not None and rec["misfit"] > prev_misfit
        state.log.append(rec)
        log.info("n=%d J=%.6g data=%.6g |g|=(%.3g, %.3g) step=%.3g", n, rec["misfit"],
                 rec["data_term"], l2[0], l2[1], state.step)
        prev_misfit = rec["misfit"]

        if delta > 0 and state.evaluation.data <= inv.c_morozov * noise_term:
            state.reason = "discrepancy"
            break
        if total <= inv.grad_tol * g0 or total == 0.0:
            state.reason = "gradient"
            break
        if n >= n_max:
            state.reason = "n_max"
            break
        state = cg_step(state, G, problem, restart_every=inv.restart_every, c=inv.armijo_c,
                        max_halvings=inv.max_halvings, beta_mode=inv.beta)
        if state.stalled:
            state.reason = "stalled: " + state.reason
            state.n -= 1
            break
    fld, hist = state.evaluation.extra
    state.field = fld
    # keep the final trace, release the full wave history
    state.evaluation = Evaluation(state.evaluation.value, state.evaluation.data,
                                  (fld, WaveHistory(None, hist.traces)))
    state.noise_term = noise_term
    state.alpha0 = alpha0
    state.level = level
    state.n_forward = problem.n_forward
    state.gradient = problem.last_gradient
    return state


def block_iterations(log_rows, tol):
    """Per-block iteration counts: last ``n`` whose gradient norm exceeds ``tol`` times the first."""
    out = []
    for key in ("grad_norm_rho", "grad_norm_p"):
        if not log_rows:
            out.append(0)
            continue
        g0 = log_rows[0][key]
        last = 0
        for row in log_rows:
            if g0 > 0 and row[key] > tol * g0:
                last = row["n"]
        out.append(last)
    return tuple(out)
