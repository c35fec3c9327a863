"""Synthetic backscattered data from the Gaussian targets, and additive noise."""

import numpy as np

from .config import build_setup
from .exceptions import ConfigError
from .fields import gaussian_target
from .forward import Observation, solve_forward


def _initial(cfg, grid):
    return None if cfg.source.initial else np.zeros(grid.shape)


def forward_trace(field, cfg, setup):
    hist = solve_forward(setup.grid, field, setup.time_grid, cfg.source.omega_f,
                         initial=_initial(cfg, setup.grid), source=cfg.source.plane_wave)
    return hist.traces


def generate_observations(test_id, cfg, fine=None):
    """Clean trace on the top boundary for Gaussian target ``test_id``.

    With ``fine`` (default ``cfg.noise.fine_data``) the data come from a run
    at half the spacing and half the time step, subsampled back onto the
    inversion's nodes and steps, so the inversion does not see its own
    discretization error as signal.
    """
    fine = cfg.noise.fine_data if fine is None else fine
    base = build_setup(cfg)
    if not fine:
        truth = gaussian_target(test_id, base.grid, base.mask)
        trace = forward_trace(truth, cfg, base)
        return trace.copy(test=int(test_id), fine=False)

    fs = build_setup(cfg, factor=2)
    truth = gaussian_target(test_id, fs.grid, fs.mask)
    trace = forward_trace(truth, cfg, fs)
    obs = Observation(base.grid)
    values = trace.values[::2, ::2]
    assert values.shape == (base.time_grid.nt + 1, obs.columns.size)
    return type(trace)(values.copy(), obs.x1.copy(), base.time_grid.tau, base.time_grid.nt,
                       obs.ds, {"test": int(test_id), "fine": True})


def _node_keys(x1):
    # bit pattern of the rounded abscissa: a stable, order-free node identity
    return np.round(np.asarray(x1, dtype=np.float64), 9).view(np.uint64)


def noise_pattern(x1, n_steps, seed):
    """Uniform ``[-1, 1]`` samples, one independent stream per node."""
    out = np.empty((n_steps, len(x1)))
    for k, key in enumerate(_node_keys(x1)):
        ss = np.random.SeedSequence(int(seed), spawn_key=(int(key),))
        out[:, k] = np.random.default_rng(ss).uniform(-1.0, 1.0, n_steps)
    return out


def add_noise(trace, delta, seed):
    """``u + delta * A * r`` with ``A = max |u|`` and ``r`` seeded uniform on [-1, 1]."""
    if delta < 0:
        raise ConfigError(f"noise level must be non-negative, got {delta}")
    if delta == 0:
        return trace.copy(delta=0.0, seed=int(seed))
    amp = float(np.abs(trace.values).max())
    r = noise_pattern(trace.x1, trace.values.shape[0], seed)
    return trace.copy(trace.values + delta * amp * r, delta=float(delta), seed=int(seed))


def expected_noise_term(observed, delta, time_grid, s_z):
    """Expected data term produced by the noise alone (uniform noise, variance (delta A)^2/3)."""
    from .adjoint import data_weights

    if delta <= 0:
        return 0.0
    amp = float(np.abs(observed.values).max()) / (1.0 + delta)
    wz = data_weights(time_grid, s_z, observed.ds)
    return 0.5 * (delta * amp) ** 2 / 3.0 * float(wz.sum()) * observed.n_nodes
