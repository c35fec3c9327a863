"""Explicit leapfrog solver for ``rho u_tt - div(p grad u) = 0``.

Space is discretized with a lumped control-volume scheme on the node
lattice: node masses ``w_i rho_i`` (``w`` = control-volume area), and a
5-point flux stencil with arithmetic face averages of ``p``.  Boundary
conditions enter through the weak form:

* top (Gamma1): ``d_n u = f(t)`` for ``t <= t1``, ``d_n u = -u_t`` after,
* bottom (Gamma2): ``d_n u = -u_t``,
* sides (Gamma3, corners included): ``d_n u = 0``.

The absorbing term is centred in time, so every step is explicit (the
boundary mass matrix is diagonal) and the discrete energy is exactly
non-increasing once the source is off.
"""

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .exceptions import CFLError, ConfigError, InstabilityError, ShapeError
from .geometry import GAMMA1, GAMMA2

BLOWUP_FACTOR = 1e6
CHECK_EVERY = 10


@dataclass(frozen=True)
class TimeGrid:
    tau: float
    nt: int
    t1: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"time step must be positive, got {self.tau}")
        if self.nt < 1:
            raise ConfigError(f"need at least one time step, got nt={self.nt}")
        if not self.t1 < self.T:
            raise ConfigError(f"source cutoff t1={self.t1} must be below T={self.T}")

    @property
    def T(self):
        return self.tau * self.nt

    @property
    def times(self):
        return self.tau * np.arange(self.nt + 1)

    def trapezoid_weights(self):
        w = np.full(self.nt + 1, self.tau)
        w[0] = w[-1] = 0.5 * self.tau
        return w

    def refined(self, factor):
        return TimeGrid(self.tau / factor, self.nt * factor, self.t1)


def make_time_grid(T=2.0, tau=0.002, t1=None, omega_f=40.0):
    nt = int(round(T / tau))
    if nt < 1 or abs(nt * tau - T) > 1e-9 * T:
        raise ConfigError(f"tau={tau} does not divide T={T}")
    if t1 is None:
        t1 = source_window(omega_f)
    return TimeGrid(float(tau), nt, float(t1))


def source_window(omega_f):
    return 2.0 * math.pi / omega_f


def source_f(t, omega_f):
    """Single sine period ``sin(omega_f t)`` on ``(0, 2 pi / omega_f)``, zero elsewhere."""
    if not omega_f > 0:
        raise ConfigError(f"omega_f must be positive, got {omega_f}")
    t = np.asarray(t, dtype=float)
    on = (t > 0) & (t < source_window(omega_f))
    out = np.where(on, np.sin(omega_f * t), 0.0)
    return float(out) if out.ndim == 0 else out


def initial_a(x1, x2):
    """Initial displacement ``exp(-(x1^2 + x2^2))``."""
    return np.exp(-(np.asarray(x1) ** 2 + np.asarray(x2) ** 2))


def cfl_max_tau(grid, field):
    c_max = float(np.sqrt(np.max(field.p / field.rho)))
    return grid.h / (c_max * math.sqrt(2.0))


@dataclass
class ObservationTrace:
    """Time-by-node samples of ``u`` on the top boundary.

    ``x1`` holds the node abscissae in ascending order; ``ds`` is the
    surface quadrature weight attached to each node.
    """

    values: np.ndarray
    x1: np.ndarray
    tau: float
    nt: int
    ds: float
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.x1 = np.asarray(self.x1, dtype=float)
        if self.values.shape != (self.nt + 1, self.x1.size):
            raise ShapeError(f"trace values {self.values.shape} do not match "
                             f"nt+1={self.nt + 1} x nodes={self.x1.size}")
        if not np.all(np.isfinite(self.values)):
            raise InstabilityError("trace contains non-finite values")

    @property
    def n_nodes(self):
        return self.x1.size

    def copy(self, values=None, **meta):
        values = self.values.copy() if values is None else values
        return ObservationTrace(values, self.x1.copy(), self.tau, self.nt, self.ds,
                                {**self.meta, **meta})


@dataclass
class WaveHistory:
    u: np.ndarray | None
    traces: ObservationTrace
    recorded: np.ndarray | None = None


class Observation:
    """Which top-row columns are sampled and the surface weight of each sample."""

    def __init__(self, grid, columns=None, ds=None):
        self.grid = grid
        self.columns = np.arange(grid.nx) if columns is None else np.asarray(columns, dtype=np.int64)
        self.ds = grid.h if ds is None else float(ds)

    @classmethod
    def matching(cls, grid, x1, ds):
        """Columns of ``grid``'s top row located at the abscissae ``x1``."""
        cols = np.rint((np.asarray(x1) - grid.x1_min) / grid.h).astype(np.int64)
        if np.any(np.abs(grid.x1_min + cols * grid.h - x1) > 1e-6 * grid.h) or \
                cols.min() < 0 or cols.max() >= grid.nx:
            raise ShapeError("observation nodes are not on the solver grid's top row")
        return cls(grid, cols, ds)

    @property
    def x1(self):
        return self.grid.x1[self.columns]


class Discretization:
    """Field-dependent matrices of the semi-discrete system ``M u'' + K u + B u' = F``."""

    def __init__(self, grid, field, time_grid):
        if field.rho.shape != grid.shape:
            raise ShapeError("field and grid shapes differ")
        self.grid = grid
        self.tg = time_grid
        h = grid.h
        self.w = np.asarray(grid.cell_weights)
        self.mass = self.w * field.rho

        # face coefficients; faces along the boundary carry half length
        cx = np.ones((grid.ny, grid.nx - 1))
        cx[0, :] = cx[-1, :] = 0.5
        cy = np.ones((grid.ny - 1, grid.nx))
        cy[:, 0] = cy[:, -1] = 0.5
        self.cx, self.cy = cx, cy
        p = field.p
        self.kx = cx * 0.5 * (p[:, 1:] + p[:, :-1])
        self.ky = cy * 0.5 * (p[1:, :] + p[:-1, :])

        labels = grid.labels
        self.top = (labels == GAMMA1).astype(float) * h
        self.bottom = (labels == GAMMA2).astype(float) * h
        # boundary damping before / after the source cutoff
        self.b_src = self.bottom
        self.b_abs = self.bottom + self.top

    def absorbing_top(self, n):
        return self.tg.tau * n > self.tg.t1

    def damping(self, n):
        return self.b_abs if self.absorbing_top(n) else self.b_src

    def apply_K(self, u, out=None):
        """``K u``, i.e. minus the integrated ``div(p grad u)`` on each control volume."""
        if out is None:
            out = np.zeros_like(u)
        else:
            out.fill(0.0)
        fx = self.kx * (u[:, 1:] - u[:, :-1])
        fy = self.ky * (u[1:, :] - u[:-1, :])
        out[:, :-1] -= fx
        out[:, 1:] += fx
        out[:-1, :] -= fy
        out[1:, :] += fy
        return out

    def energy_form(self, a, b):
        """Symmetric bilinear form ``a^T K b``."""
        return float(np.sum(self.kx * (a[:, 1:] - a[:, :-1]) * (b[:, 1:] - b[:, :-1]))
                     + np.sum(self.ky * (a[1:, :] - a[:-1, :]) * (b[1:, :] - b[:-1, :])))

    def step_coefficients(self, b):
        tau = self.tg.tau
        D = self.mass + 0.5 * tau * b
        return 2.0 * self.mass / D, (0.5 * tau * b - self.mass) / D, tau * tau / D


def solve_forward(grid, field, time_grid, omega_f=40.0, keep_history=False, *,
                  initial=None, source=True, observation=None, record_mask=None,
                  check_cfl=True):
    """March the model problem from ``t=0`` to ``T``.

    Parameters
    ----------
    initial : array, optional
        Nodal initial displacement; defaults to ``initial_a`` on the grid.
        Pass zeros to switch it off.
    source : bool
        Whether the top-boundary Neumann pulse ``f(t)`` is active.
    record_mask : bool array, optional
        Extra nodes whose full time series is returned in ``recorded``.
    """
    tg = time_grid
    if check_cfl:
        tau_max = cfl_max_tau(grid, field)
        if tg.tau > tau_max:
            raise CFLError(f"tau={tg.tau:g} exceeds the CFL bound {tau_max:g}")
    disc = Discretization(grid, field, tg)
    obs = observation or Observation(grid)
    tau, nt = tg.tau, tg.nt

    if initial is None:
        X1, X2 = grid.mesh
        u0 = initial_a(X1, X2)
    else:
        u0 = np.array(initial, dtype=float)
        if u0.shape != grid.shape:
            raise ShapeError("initial condition does not match grid")
    f = source_f(tg.times, omega_f) if source else np.zeros(nt + 1)

    coef_src = disc.step_coefficients(disc.b_src)
    coef_abs = disc.step_coefficients(disc.b_abs)
    top = disc.top

    traces = np.empty((nt + 1, obs.columns.size))
    hist = np.empty((nt + 1,) + grid.shape) if keep_history else None
    rec = None
    if record_mask is not None:
        record_mask = np.asarray(record_mask, dtype=bool)
        rec = np.empty((nt + 1, int(record_mask.sum())))

    def store(n, u):
        traces[n] = u[-1, obs.columns]
        if hist is not None:
            hist[n] = u
        if rec is not None:
            rec[n] = u[record_mask]

    bound = BLOWUP_FACTOR * (1.0 + np.abs(u0).max() + (1.0 if source else 0.0))
    Ku = np.empty(grid.shape)

    u_prev = u0
    store(0, u_prev)
    disc.apply_K(u_prev, out=Ku)
    u = u_prev + (0.5 * tau * tau) * (f[0] * top - Ku) / disc.mass
    store(1, u)

    for n in range(1, nt):
        a1, a2, c = coef_abs if disc.absorbing_top(n) else coef_src
        disc.apply_K(u, out=Ku)
        if f[n] != 0.0:
            Ku -= f[n] * top
        u_next = a1 * u + a2 * u_prev - c * Ku
        u_prev, u = u, u_next
        store(n + 1, u)
        if (n + 1) % CHECK_EVERY == 0 or n + 1 == nt:
            amax = np.abs(u).max()
            if not np.isfinite(amax) or amax > bound:
                raise InstabilityError(
                    f"solution blew up at step {n + 1} (max |u| = {amax:.3g})", step=n + 1)

    trace = ObservationTrace(traces, obs.x1, tau, nt, obs.ds)
    return WaveHistory(hist, trace, rec)


def discrete_energy(grid, field, time_grid, history):
    """Leapfrog energy at half steps ``n + 1/2``, ``n = 0 .. nt-1``.

    ``E = |u^{n+1} - u^n|_M^2 / (2 tau^2) + (u^{n+1})^T K u^n / 2``; it is
    exactly conserved without damping and source, and non-increasing with
    damping.
    """
    disc = Discretization(grid, field, time_grid)
    tau = time_grid.tau
    du = np.diff(history, axis=0)
    kin = 0.5 * np.einsum("nji,ji,nji->n", du, disc.mass, du) / tau**2
    pot = np.array([0.5 * disc.energy_form(history[n + 1], history[n])
                    for n in range(history.shape[0] - 1)])
    return kin + pot
