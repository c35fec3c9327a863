"""Constants and checks from the Lipschitz stability theory, plus numerical probes.

The theory works on a rectangle ``Omega`` with an external point ``x0``.
Everything closed-form (``Lambda``, the feasible ``beta`` interval, the
minimal observation time) is computed exactly; the Carleman weights and
the admissibility conditions are evaluated on node lattices with centered
differences (one-sided at the edges).  Two experiments probe the
estimates: the first-order Carleman inequality for ``A . grad f + B f``
and the Lipschitz ratio between coefficient and data perturbations.
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import GeometryError
from .fields import CoefficientField
from .forward import make_time_grid, solve_forward
from .geometry import Rect, make_grid

MARGIN_TOL = 1e-10


def _rect(r):
    return r if isinstance(r, Rect) else Rect.from_seq(r)


def _check_outside(rect, x0, margin=1e-9):
    r = _rect(rect)
    dx = max(r.x1_min - x0[0], 0.0, x0[0] - r.x1_max)
    dy = max(r.x2_min - x0[1], 0.0, x0[1] - r.x2_max)
    if math.hypot(dx, dy) < margin:
        raise GeometryError(f"x0={tuple(x0)} must lie outside the closed domain {r.as_list()}")


def sq_dist_range(rect, x0):
    """``(inf, sup)`` of ``|x - x0|^2`` over the closed rectangle."""
    r = _rect(rect)
    near = (min(max(x0[0], r.x1_min), r.x1_max), min(max(x0[1], r.x2_min), r.x2_max))
    far = (r.x1_min if abs(x0[0] - r.x1_min) > abs(x0[0] - r.x1_max) else r.x1_max,
           r.x2_min if abs(x0[1] - r.x2_min) > abs(x0[1] - r.x2_max) else r.x2_max)
    lo = (near[0] - x0[0]) ** 2 + (near[1] - x0[1]) ** 2
    hi = (far[0] - x0[0]) ** 2 + (far[1] - x0[1]) ** 2
    return lo, hi


def lambda_cap(rect, x0):
    """``sqrt(sup |x-x0|^2 - inf |x-x0|^2)``: farthest corner against nearest point."""
    _check_outside(rect, x0)
    lo, hi = sq_dist_range(rect, x0)
    return math.sqrt(hi - lo)


@dataclass(frozen=True)
class StabilityGeometry:
    omega: Rect
    x0: tuple
    theta0: float = 0.5
    theta1: float = 1.0
    M0: float = 1.0
    M1: float = 1.0
    lambda_w: float = 1.0
    strip_width: float = 0.1
    beta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "omega", _rect(self.omega))
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        _check_outside(self.omega, self.x0)
        if not 0 < self.theta0 <= 1 or not self.theta1 > 0:
            raise GeometryError("need 0 < theta0 <= 1 and theta1 > 0")
        if self.beta is not None and not self.beta > 0:
            raise GeometryError("beta must be positive")

    @property
    def Lambda(self):
        return lambda_cap(self.omega, self.x0)

    @property
    def inf_sq(self):
        return sq_dist_range(self.omega, self.x0)[0]

    def with_beta(self, beta):
        return StabilityGeometry(self.omega, self.x0, self.theta0, self.theta1, self.M0, self.M1,
                                 self.lambda_w, self.strip_width, beta)

    def strip(self):
        """Observation region: strip of ``strip_width`` along the top edge."""
        o = self.omega
        return Rect(o.x1_min, o.x1_max, o.x2_max - self.strip_width, o.x2_max)


def geometry_from_config(cfg):
    st = cfg.stability
    return StabilityGeometry(Rect.from_seq(cfg.domain.outer), st.x0, st.theta0, st.theta1, st.M0,
                             st.M1, st.lambda_w, st.strip_width)


def _beta_margins(beta, geom):
    lam = geom.Lambda
    m1 = geom.theta0 * geom.theta1 - (beta + geom.M0 * lam / math.sqrt(geom.theta1) * math.sqrt(beta))
    m2 = geom.theta1 * geom.inf_sq - beta * lam * lam
    return m1, m2


def beta_feasible(beta, geom):
    """Both strict inequalities constraining the weight parameter ``beta``."""
    if not beta > 0:
        return False
    m1, m2 = _beta_margins(beta, geom)
    return m1 > 0 and m2 > 0


def max_beta_closed_form(geom):
    """Supremum of feasible ``beta`` from the quadratic in ``sqrt(beta)``; None if empty."""
    b = geom.M0 * geom.Lambda / math.sqrt(geom.theta1)
    c = geom.theta0 * geom.theta1
    root = 0.5 * (-b + math.sqrt(b * b + 4.0 * c))
    cands = [root * root]
    if geom.Lambda > 0:
        cands.append(geom.theta1 * geom.inf_sq / geom.Lambda ** 2)
    out = min(cands)
    return out if out > 0 else None


def max_beta(geom, tol=1e-10):
    """Supremum of the feasible interval ``(0, beta*)`` by bisection."""
    hi = geom.theta0 * geom.theta1  # first inequality forces beta below this
    lo = 0.0
    if not beta_feasible(hi * 1e-12, geom):
        return None
    while hi - lo > tol * max(hi, 1e-300):
        mid = 0.5 * (lo + hi)
        if beta_feasible(mid, geom):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def min_time(Lambda, beta):
    if not beta > 0:
        raise GeometryError("beta must be positive")
    return Lambda / math.sqrt(beta)


def smoothstep(x):
    """Quintic ramp, 0 below 0 and 1 above 1, with two continuous derivatives."""
    x = np.clip(x, 0.0, 1.0)
    return x * x * x * (x * (6.0 * x - 15.0) + 10.0)


@dataclass(frozen=True)
class CarlemanWeights:
    geom: StabilityGeometry
    lam: float
    beta: float
    T: float
    C0: float
    d0: float
    eps0: float
    eps1: float
    separated: bool
    gap: float  # min_x phi(x, 0) - max_x phi(x, +-T)

    def psi(self, x1, x2, t):
        return (x1 - self.geom.x0[0]) ** 2 + (x2 - self.geom.x0[1]) ** 2 - self.beta * t * t

    def log_phi(self, x1, x2, t):
        return self.lam * (self.psi(x1, x2, t) + self.C0)

    def phi(self, x1, x2, t):
        return np.exp(self.log_phi(x1, x2, t))

    def chi(self, t):
        """0 within ``eps1`` of ``+-T``, 1 on ``|t| <= T - 2 eps1``."""
        t = np.abs(np.asarray(t, dtype=float))
        e = self.eps1
        if e <= 0:
            return np.zeros_like(t)
        return smoothstep((self.T - e - t) / e)


def _phi_extremes(lam, beta, C0, lo, hi, t):
    """``(min_x phi, max_x phi)`` at time ``t``; phi is monotone in ``|x - x0|^2``."""
    return (math.exp(lam * (lo - beta * t * t + C0)), math.exp(lam * (hi - beta * t * t + C0)))


def _largest(pred, a, b, iters=200):
    """Largest ``t`` in ``[a, b]`` with ``pred(t)`` true, assuming ``pred`` holds on ``[a, t*]``."""
    if pred(b):
        return b
    if not pred(a):
        return None
    for _ in range(iters):
        m = 0.5 * (a + b)
        if pred(m):
            a = m
        else:
            b = m
    return a


def build_weights(geom, lambda_w, T, beta=None, eps0_fraction=0.5):
    """Carleman weight data ``psi, phi, d0, eps0, eps1, chi`` for the cylinder ``Omega x (-T, T)``.

    ``d0`` is the midpoint of ``max_x phi(x, +-T)`` and ``min_x phi(x, 0)``;
    ``eps0`` is ``eps0_fraction`` of the largest value leaving room for a
    positive ``eps1``, and ``eps1`` is the largest value satisfying both
    level conditions, found by bisection in ``t``.  When the separation
    fails ``separated`` is False and ``eps0 = eps1 = 0``.
    """
    beta = beta if beta is not None else (geom.beta or max_beta(geom))
    if beta is None:
        raise GeometryError("no feasible beta for this geometry")
    lam = float(lambda_w)
    lo, hi = sq_dist_range(geom.omega, geom.x0)
    C0 = max(0.0, -(lo - beta * T * T))  # makes psi >= 0, hence phi >= 1
    min0, _ = _phi_extremes(lam, beta, C0, lo, hi, 0.0)
    _, maxT = _phi_extremes(lam, beta, C0, lo, hi, T)
    gap = min0 - maxT
    d0 = 0.5 * (min0 + maxT)
    if gap <= 0:
        return CarlemanWeights(geom, lam, beta, T, C0, d0, 0.0, 0.0, False, gap)
    eps0 = eps0_fraction * 0.5 * gap

    def near_zero_ok(e):
        return _phi_extremes(lam, beta, C0, lo, hi, e)[0] >= d0 + eps0

    def near_end_ok(e):
        return _phi_extremes(lam, beta, C0, lo, hi, T - 2.0 * e)[1] <= d0 - eps0

    e_a = _largest(near_zero_ok, 0.0, 0.25 * T) or 0.0
    e_b = _largest(near_end_ok, 0.0, 0.25 * T) or 0.0
    return CarlemanWeights(geom, lam, beta, T, C0, d0, eps0, min(e_a, e_b), True, gap)


def check_weights(w, n=200):
    """Sampled audit of a weight set on an ``n^3`` lattice of the closed cylinder.

    Returns ``dict(phi_min, separated, eps_ok)``.
    """
    o = w.geom.omega
    x1 = np.linspace(o.x1_min, o.x1_max, n)
    x2 = np.linspace(o.x2_min, o.x2_max, n)
    t = np.linspace(-w.T, w.T, n)
    X1, X2 = np.meshgrid(x1, x2)
    r2 = ((X1 - w.geom.x0[0]) ** 2 + (X2 - w.geom.x0[1]) ** 2).ravel()
    phi_min = math.exp(w.lam * (r2.min() - w.beta * w.T ** 2 + w.C0))
    at0 = np.exp(w.lam * (r2 + w.C0))
    atT = np.exp(w.lam * (r2 - w.beta * w.T ** 2 + w.C0))
    separated = bool(at0.min() > w.d0 > atT.max())
    eps_ok = True
    if w.separated and w.eps1 > 0:
        inner = t[np.abs(t) <= w.eps1]
        outer = t[np.abs(t) >= w.T - 2 * w.eps1]
        lo = np.exp(w.lam * (r2.min() - w.beta * inner ** 2 + w.C0)).min() if inner.size else np.inf
        hi = np.exp(w.lam * (r2.max() - w.beta * outer ** 2 + w.C0)).max() if outer.size else -np.inf
        eps_ok = bool(lo >= w.d0 + w.eps0 - 1e-12 and hi <= w.d0 - w.eps0 + 1e-12)
    return dict(phi_min=phi_min, separated=separated, eps_ok=eps_ok)


# nodal calculus -----------------------------------------------------------

def _grad(a, grid):
    # arrays are (ny, nx): axis 0 is x2
    g2, g1 = np.gradient(np.asarray(a, dtype=float), grid.h, edge_order=2)
    return g1, g2


def _div_q_grad(q, a, grid):
    g1, g2 = _grad(a, grid)
    d1 = np.gradient(q * g1, grid.h, axis=1, edge_order=2)
    d2 = np.gradient(q * g2, grid.h, axis=0, edge_order=2)
    return d1 + d2


def check_initial_pair(a1, a2, q_field, x0, grid):
    """Nodal check of the two-initial-data condition; returns ``(ok, margin)``.

    The margin is the smaller of the best ``min |div(q grad a_l)|`` over
    ``l = 1, 2`` and the minimum of the sign expression over all nodes.
    """
    q = np.broadcast_to(np.asarray(q_field, dtype=float), grid.shape)
    L1, L2 = _div_q_grad(q, a1, grid), _div_q_grad(q, a2, grid)
    g11, g12 = _grad(a1, grid)
    g21, g22 = _grad(a2, grid)
    X1, X2 = grid.mesh
    r1, r2 = X1 - x0[0], X2 - x0[1]
    expr = (L2 * g11 - L1 * g21) * r1 + (L2 * g12 - L1 * g22) * r2
    nonzero = max(float(np.abs(L1).min()), float(np.abs(L2).min()))
    margin = min(nonzero, float(expr.min()))
    return margin > MARGIN_TOL, margin


def check_det_condition(A, grid):
    """``det(d1 A, d2 A, Laplace A)`` for three nodal functions; returns ``(ok, min |det|)``."""
    if len(A) != 3:
        raise GeometryError("need n + 1 = 3 functions in two dimensions")
    cols = []
    for a in A:
        g1, g2 = _grad(a, grid)
        lap = (np.gradient(g1, grid.h, axis=1, edge_order=2)
               + np.gradient(g2, grid.h, axis=0, edge_order=2))
        cols.append((g1, g2, lap))
    M = np.empty(grid.shape + (3, 3))
    for row, (g1, g2, lap) in enumerate(cols):
        M[..., row, 0], M[..., row, 1], M[..., row, 2] = g1, g2, lap
    det = np.linalg.det(M)
    m = float(np.abs(det).min())
    return m > MARGIN_TOL, m


def check_admissible_U(field, geom):
    """``grad(p/rho) . (x - x0) / (2 p/rho) < 1 - theta0`` on nodes outside the strip.

    Returns ``(ok, margin)`` with margin ``(1 - theta0) - max lhs``.
    """
    grid = field.grid
    ratio = field.p / field.rho
    g1, g2 = _grad(ratio, grid)
    X1, X2 = grid.mesh
    lhs = (g1 * (X1 - geom.x0[0]) + g2 * (X2 - geom.x0[1])) / (2.0 * ratio)
    outside = ~grid.rect_mask(geom.strip())
    margin = (1.0 - geom.theta0) - float(lhs[outside].max())
    return margin > MARGIN_TOL, margin


# Carleman probe -------------------------------------------------------------

def probe_grid(geom, h):
    return make_grid(geom.omega, h)


def sine_mode(grid, k=1, l=1):
    """``sin(k pi xh1) sin(l pi xh2)`` in normalized coordinates; zero on the boundary."""
    X1, X2 = grid.mesh
    o = grid.rect
    u = (X1 - o.x1_min) / o.width
    v = (X2 - o.x2_min) / o.height
    return np.sin(k * np.pi * u) * np.sin(l * np.pi * v)


def random_h10(grid, rng, modes=3):
    """Random smooth function vanishing on the boundary: a few low sine modes."""
    f = np.zeros(grid.shape)
    for k in range(1, modes + 1):
        for l in range(1, modes + 1):
            f += rng.standard_normal() / (k * l) * sine_mode(grid, k, l)
    return f


def _log_weighted_integral(w, vals, log_weight):
    """``log sum w vals exp(log_weight)`` with a shared maximum pulled out."""
    pos = (vals > 0) & (w > 0)
    if not pos.any():
        return -np.inf
    lw = log_weight[pos] + np.log(w[pos] * vals[pos])
    top = lw.max()
    return float(top + np.log(np.sum(np.exp(lw - top))))


def carleman_probe(f, A_field, B_field, s_list, geom, grid, lam=None, shift=0.0):
    """``(s, LHS, RHS, ratio)`` rows for the first-order Carleman inequality.

    LHS is ``int s^2 f^2 e^{2 s phi(x, 0)}``, RHS ``int |A . grad f + B f|^2
    e^{2 s phi(x, 0)}`` with ``phi(x, 0) = exp(lam |x - x0|^2) + shift``.
    Sums are formed in the log domain; LHS and RHS are reported as logs and
    the ratio is exact up to rounding.  ``f = 0`` gives ratio 0.
    """
    lam = geom.lambda_w if lam is None else lam
    X1, X2 = grid.mesh
    r1, r2 = X1 - geom.x0[0], X2 - geom.x0[1]
    A1, A2 = A_field
    trans = A1 * r1 + A2 * r2
    if np.any(np.abs(trans) <= MARGIN_TOL):
        bad = np.argwhere(np.abs(trans) <= MARGIN_TOL)[0]
        raise GeometryError(f"A . (x - x0) vanishes at node (j, i) = {tuple(int(v) for v in bad)}")
    f = np.asarray(f, dtype=float)
    g1, g2 = _grad(f, grid)
    Qf = A1 * g1 + A2 * g2 + np.asarray(B_field) * f
    phi0 = np.exp(lam * (r1 * r1 + r2 * r2)) + shift
    w = grid.cell_weights
    rows = []
    for s in s_list:
        lw = 2.0 * s * phi0
        lhs = _log_weighted_integral(w, s * s * f * f, lw)
        rhs = _log_weighted_integral(w, Qf * Qf, lw)
        if lhs == -np.inf:
            ratio = 0.0
        else:
            ratio = math.exp(lhs - rhs) if rhs > -np.inf else math.inf
        rows.append(dict(s=float(s), log_lhs=lhs, log_rhs=rhs, ratio=ratio))
    return rows


def probe_bounded(rows):
    """Every ratio is at most twice the running median of the ratios up to that ``s``."""
    r = [row["ratio"] for row in rows]
    return all(r[k] <= 2.0 * float(np.median(r[:k + 1])) for k in range(len(r)))


# Lipschitz experiment -------------------------------------------------------

def time_h3_norm(series, tau, weights):
    """``H^3(0, T; L^2)`` norm of a ``(nt + 1, k)`` series with spatial weights ``weights``."""
    d = np.asarray(series, dtype=float)
    total = 0.0
    wt = np.full(d.shape[0], tau)
    wt[0] = wt[-1] = 0.5 * tau
    for k in range(4):
        total += float(np.einsum("n,k,nk->", wt, weights, d * d))
        if k < 3:
            d = np.gradient(d, tau, axis=0, edge_order=2)
    return math.sqrt(total)


def h1_norm(a, grid, mask=None):
    g1, g2 = _grad(a, grid)
    w = grid.cell_weights if mask is None else grid.cell_weights * mask
    return math.sqrt(float(np.sum(w * (a * a + g1 * g1 + g2 * g2))))


def l2_norm(a, grid):
    return math.sqrt(float(np.sum(grid.cell_weights * a * a)))


def bump_perturbations(grid, support, n, seed):
    """``n`` pairs of smooth compact bumps ``(f, g)`` inside ``support``, nonnegative, max 1."""
    rng = np.random.default_rng(seed)
    X1, X2 = grid.mesh
    r_max = min(0.2, 0.45 * min(support.width, support.height))
    out = []
    for _ in range(n):
        pair = []
        for _ in range(2):
            R = rng.uniform(0.5 * r_max, r_max)
            cx = rng.uniform(support.x1_min + R, support.x1_max - R)
            cy = rng.uniform(support.x2_min + R, support.x2_max - R)
            r2 = ((X1 - cx) ** 2 + (X2 - cy) ** 2) / (R * R)
            pair.append(np.where(r2 < 1.0, (1.0 - r2) ** 3, 0.0))
        out.append(tuple(pair))
    return out


def remark_pair(grid, x0, gamma):
    """``a1 = |x - x0|^2 / 2`` and ``a2 = exp(gamma (x2 - x2_max))``."""
    X1, X2 = grid.mesh
    a1 = 0.5 * ((X1 - x0[0]) ** 2 + (X2 - x0[1]) ** 2)
    a2 = np.exp(gamma * (X2 - grid.x2_max))
    return a1, a2


def lipschitz_ratio_experiment(cfg, geom=None, T=None, support=None, perturbations=None):
    """Ratio ``(|p - q|_H1 + |rho - sigma|_L2) / sum_l |u_l(p, rho) - u_l(q, sigma)|_H3(L2(strip))``.

    The base medium is ``q = sigma = 1``; perturbations are ``eps (f, g)``
    for the seeded bumps and each ``eps`` in the config.  ``T`` defaults to
    ``T_factor`` times the minimal time.  Returns ``(rows, summary)``.
    """
    st = cfg.stability
    geom = geom or geometry_from_config(cfg)
    grid = make_grid(geom.omega, st.lipschitz_h)
    if T is None:
        beta = max_beta(geom)
        T = st.T_factor * min_time(geom.Lambda, beta)
    nt = int(math.ceil(T / st.lipschitz_tau))
    tg = make_time_grid(nt * st.lipschitz_tau, st.lipschitz_tau, cfg.t1, cfg.source.omega_f)
    if support is None:
        from .geometry import build_domain
        d = cfg.domain
        support = build_domain(d.outer, d.inner, d.omega1, d.h, cfg.t1)[0].omega1
    mask = grid.rect_mask(support)
    strip = grid.rect_mask(geom.strip())
    wstrip = grid.cell_weights[strip]
    a_pair = remark_pair(grid, geom.x0, st.gamma)
    pert = perturbations or bump_perturbations(grid, support, st.lipschitz_perturbations, cfg.noise.seed)

    def strip_series(field, a):
        hist = solve_forward(grid, field, tg, cfg.source.omega_f, initial=a,
                             source=cfg.source.plane_wave, record_mask=strip)
        return hist.recorded

    base = CoefficientField.homogeneous(grid, mask)
    ref = [strip_series(base, a) for a in a_pair]
    rows = []
    for k, (f, g) in enumerate(pert):
        for eps in st.lipschitz_eps:
            fld = CoefficientField(grid, 1.0 + eps * g, 1.0 + eps * f, mask)
            lhs = h1_norm(eps * f, grid) + l2_norm(eps * g, grid)
            rhs = sum(time_h3_norm(strip_series(fld, a) - r0, tg.tau, wstrip)
                      for a, r0 in zip(a_pair, ref))
            rows.append(dict(perturbation=k, eps=float(eps), lhs=lhs, rhs=rhs,
                             ratio=lhs / rhs if rhs > 0 else math.inf))
    ratios = np.array([r["ratio"] for r in rows])
    summary = dict(T=tg.T, nt=tg.nt, max_ratio=float(ratios.max()), min_ratio=float(ratios.min()),
                   constant=float(ratios.max() / ratios.min()))
    return rows, summary


def halving_factors(rows):
    """Per perturbation, ``max(r, r') / min(r, r')`` between consecutive ``eps`` values."""
    by = {}
    for r in rows:
        by.setdefault(r["perturbation"], []).append(r)
    out = []
    for k, rs in sorted(by.items()):
        rs = sorted(rs, key=lambda r: -r["eps"])
        for a, b in zip(rs, rs[1:]):
            out.append(max(a["ratio"], b["ratio"]) / min(a["ratio"], b["ratio"]))
    return out


def constants_report(cfg, geom=None):
    """Closed-form constants, weights and admissibility margins as a flat dict."""
    st = cfg.stability
    geom = geom or geometry_from_config(cfg)
    lam_cap = geom.Lambda
    beta = max_beta(geom)
    out = dict(Lambda=lam_cap, inf_sq=geom.inf_sq, beta_star=beta,
               beta_star_closed=max_beta_closed_form(geom))
    if beta is None:
        return out
    t_min = min_time(lam_cap, beta)
    w = build_weights(geom, st.lambda_w, st.T_factor * t_min, beta=beta)
    out.update(T_min=t_min, T=w.T, C0=w.C0, d0=w.d0, eps0=w.eps0, eps1=w.eps1,
               separated=w.separated)
    grid = make_grid(geom.omega, cfg.domain.h)
    a1, a2 = remark_pair(grid, geom.x0, st.gamma)
    ok, m = check_initial_pair(a1, a2, np.ones(grid.shape), geom.x0, grid)
    out.update(initial_pair_ok=ok, initial_pair_margin=m)
    X1, X2 = grid.mesh
    ok, m = check_det_condition([X1, X2, X1 ** 2 + X2 ** 2], grid)
    out.update(det_ok=ok, det_min=m)
    flat = CoefficientField.homogeneous(grid, np.zeros(grid.shape, dtype=bool))
    ok, m = check_admissible_U(flat, geom)
    out.update(admissible_flat_ok=ok, admissible_flat_margin=m)
    return out
