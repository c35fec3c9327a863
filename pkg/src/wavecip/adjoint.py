"""Tikhonov functional, backward adjoint solve, and the coefficient gradient.

Everything here is the exact derivative of the *discrete* functional
evaluated with the scheme in :mod:`wavecip.forward`, so finite-difference
checks agree to rounding, not just to discretization error.

With ``lambda^n`` the adjoint at step ``n`` the gradients take the form::

    g_rho = -sum_n (lambda^{n+1}-lambda^n)(u^{n+1}-u^n) / tau + alpha1 (rho - rho0)
    g_p   =  sum_n w_n  Dlambda^n . Du^n                       + alpha2 (p - p0)

where ``D`` are face differences and ``w_n`` trapezoid weights.  These are
the discrete counterparts of ``-int lambda_t u_t dt`` and
``int grad lambda . grad u dt``.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, ShapeError
from .forward import Discretization, Observation, WaveHistory


@dataclass(frozen=True)
class MisfitConfig:
    alpha1: float = 0.0
    alpha2: float = 0.0
    rho0: float = 1.0
    p0: float = 1.0
    s_z: float = 0.05

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ConfigError("regularization weights must be non-negative")
        if not self.s_z > 0:
            raise ConfigError("taper width s_z must be positive")

    def with_alphas(self, alpha1, alpha2):
        return MisfitConfig(alpha1, alpha2, self.rho0, self.p0, self.s_z)


def zdelta(t, T, s_z):
    """Observation-time taper: 1 up to ``T - 2 s_z``, cubic C1 descent to 0 at ``T``."""
    if not 0 < s_z < 0.5 * T:
        raise ConfigError(f"taper width s_z={s_z} must lie in (0, T/2) for T={T}")
    t = np.asarray(t, dtype=float)
    x = np.clip((t - (T - 2.0 * s_z)) / (2.0 * s_z), 0.0, 1.0)
    out = 1.0 - x * x * (3.0 - 2.0 * x)
    return float(out) if out.ndim == 0 else out


def _check_traces(trace, observed):
    if trace.values.shape != observed.values.shape:
        raise ShapeError(f"trace {trace.values.shape} vs observed {observed.values.shape}")
    if not np.allclose(trace.x1, observed.x1, atol=1e-9) or abs(trace.tau - observed.tau) > 1e-12:
        raise ShapeError("trace and observation use different nodes or time steps")


def data_weights(time_grid, s_z, ds):
    """Per-step quadrature weight ``w_n z(t_n) ds`` of the boundary misfit."""
    return time_grid.trapezoid_weights() * zdelta(time_grid.times, time_grid.T, s_z) * ds


def data_term(trace, observed, time_grid, s_z):
    _check_traces(trace, observed)
    r = trace.values - observed.values
    wz = data_weights(time_grid, s_z, observed.ds)
    return 0.5 * float(np.sum(wz[:, None] * r * r))


def regularization(field, cfg, grid):
    m = field.mask
    h2 = grid.h * grid.h
    return 0.5 * h2 * (cfg.alpha1 * float(np.sum((field.rho[m] - cfg.rho0) ** 2))
                       + cfg.alpha2 * float(np.sum((field.p[m] - cfg.p0) ** 2)))


def misfit(trace, observed, time_grid, cfg, field=None, grid=None):
    """Tikhonov functional; regularization is added when ``field`` is given."""
    value = data_term(trace, observed, time_grid, cfg.s_z)
    if field is not None:
        value += regularization(field, cfg, grid or field.grid)
    return value


def weighted_residual(trace, observed, time_grid, s_z):
    """``(u - u_obs) z`` per step, the boundary data driving the adjoint."""
    _check_traces(trace, observed)
    z = zdelta(time_grid.times, time_grid.T, s_z)
    return (trace.values - observed.values) * z[:, None]


def solve_adjoint(grid, field, residual, time_grid, observation=None):
    """Backward sweep for the adjoint of the discrete forward scheme.

    ``residual`` is ``(u - u_obs) z`` sampled at the observation nodes, shape
    ``(nt + 1, k)``.  Returns a :class:`WaveHistory` whose ``u`` holds
    ``lambda^n`` for ``n = 0 .. nt`` (``lambda^nt = 0``).  The recursion is
    a leapfrog for ``rho l_tt - div(p grad l) = 0`` run backward, fed by
    the residual as Neumann data on the top boundary; the damping sign is
    reversed, which keeps the backward march dissipative.
    """
    tg = time_grid
    obs = observation or Observation(grid)
    residual = np.asarray(residual, dtype=float)
    if residual.shape != (tg.nt + 1, obs.columns.size):
        raise ShapeError(f"residual shape {residual.shape} does not match the time grid "
                         f"and {obs.columns.size} observation nodes")
    disc = Discretization(grid, field, tg)
    tau, nt = tg.tau, tg.nt
    M = disc.mass
    src = tg.trapezoid_weights()[:, None] * residual * obs.ds  # dJ/du^k on observed nodes

    lam = np.zeros((nt + 1,) + grid.shape)
    Kl = np.empty(grid.shape)
    load = np.zeros(grid.shape)
    inv_d = {False: 1.0 / (M + 0.5 * tau * disc.b_src), True: 1.0 / (M + 0.5 * tau * disc.b_abs)}
    minus = {False: M - 0.5 * tau * disc.b_src, True: M - 0.5 * tau * disc.b_abs}

    # lam[k-1] from lam[k], lam[k+1]; lam[nt] = 0
    for k in range(nt, 0, -1):
        load.fill(0.0)
        load[-1, obs.columns] = -tau * src[k]
        if k < nt:
            disc.apply_K(lam[k], out=Kl)
            load += 2.0 * M * lam[k] - tau * tau * Kl
        if k + 1 < nt:
            load -= minus[disc.absorbing_top(k + 1)] * lam[k + 1]
        if k >= 2:
            lam[k - 1] = load * inv_d[disc.absorbing_top(k - 1)]
        else:
            lam[0] = load / M
    traces = None
    return WaveHistory(lam, traces)


def _face_time_products(a, b, weights):
    """``sum_n w_n (Da^n)(Db^n)`` for x- and y-faces."""
    ax = a[:, :, 1:] - a[:, :, :-1]
    bx = b[:, :, 1:] - b[:, :, :-1]
    sx = np.einsum("n,nji,nji->ji", weights, ax, bx)
    ay = a[:, 1:, :] - a[:, :-1, :]
    by = b[:, 1:, :] - b[:, :-1, :]
    sy = np.einsum("n,nji,nji->ji", weights, ay, by)
    return sx, sy


def raw_gradient(u, lam, field, time_grid, cfg, grid):
    """Derivatives of the functional with respect to every nodal ``rho_i`` and ``p_i``.

    Frozen nodes are zeroed.  Multiply by ``1/h^2`` to get L2 gradients.
    """
    if u.shape != lam.shape or u.shape[1:] != grid.shape:
        raise ShapeError("forward and adjoint histories do not match the grid")
    tau, nt = time_grid.tau, time_grid.nt
    if u.shape[0] != nt + 1:
        raise ShapeError("history length does not match the time grid")
    disc = Discretization(grid, field, time_grid)
    w = disc.w

    du = np.diff(u, axis=0)
    dl = np.diff(lam, axis=0)
    acc = -np.einsum("nji,nji->ji", dl[:-1], du[:-1]) + lam[nt - 1] * du[nt - 1]
    d_rho = w * acc / tau

    wt = np.full(nt + 1, tau)
    wt[0] = 0.5 * tau
    wt[nt] = 0.0
    sx, sy = _face_time_products(lam, u, wt)
    sx *= 0.5 * disc.cx
    sy *= 0.5 * disc.cy
    d_p = np.zeros(grid.shape)
    d_p[:, :-1] += sx
    d_p[:, 1:] += sx
    d_p[:-1, :] += sy
    d_p[1:, :] += sy

    m = field.mask
    h2 = grid.h * grid.h
    d_rho = np.where(m, d_rho + cfg.alpha1 * h2 * (field.rho - cfg.rho0), 0.0)
    d_p = np.where(m, d_p + cfg.alpha2 * h2 * (field.p - cfg.p0), 0.0)
    return d_rho, d_p


def gradient(u_history, lambda_history, field, time_grid, cfg, grid=None):
    """L2 gradients ``(g_rho, g_p)`` of the functional, zero off the free region."""
    grid = grid or field.grid
    d_rho, d_p = raw_gradient(u_history, lambda_history, field, time_grid, cfg, grid)
    h2 = grid.h * grid.h
    return d_rho / h2, d_p / h2


def initial_data_sensitivity(grid, field, lam, time_grid, residual, observation=None):
    """Derivative of the data term with respect to the initial displacement ``u^0``.

    Used for the discrete duality check between forward and adjoint.
    """
    tg = time_grid
    obs = observation or Observation(grid)
    disc = Discretization(grid, field, tg)
    tau = tg.tau
    M = disc.mass
    # mu_1 = lam^0 / tau, mu_2 = lam^1 / tau
    out = -(M * lam[0] - 0.5 * tau * tau * disc.apply_K(lam[0])) / tau
    if tg.nt >= 2:
        out += (M - 0.5 * tau * disc.damping(1)) * lam[1] / tau
    c0 = np.zeros(grid.shape)
    c0[-1, obs.columns] = tg.trapezoid_weights()[0] * residual[0] * obs.ds
    return out + c0


def functional_and_gradient(grid, field, observed, time_grid, cfg, omega_f, *,
                            observation=None, source=True, initial=None):
    """One forward + adjoint pass: ``(J, data_term, d_rho, d_p, history)``."""
    from .forward import solve_forward

    hist = solve_forward(grid, field, time_grid, omega_f, keep_history=True,
                         observation=observation, source=source, initial=initial)
    dterm = data_term(hist.traces, observed, time_grid, cfg.s_z)
    J = dterm + regularization(field, cfg, grid)
    res = weighted_residual(hist.traces, observed, time_grid, cfg.s_z)
    lam = solve_adjoint(grid, field, res, time_grid, observation)
    d_rho, d_p = raw_gradient(hist.u, lam.u, field, time_grid, cfg, grid)
    return J, dterm, d_rho, d_p, hist
