"""Coefficient fields, the admissible box, and the Gaussian test targets."""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, ShapeError

RHO_BOUNDS = (1.0, 10.0)
P_BOUNDS = (1.0, 5.0)

GAUSS_WIDTH = 0.001
RHO_AMPLITUDE = 4.0
P_AMPLITUDE = 2.0

_BASE = [(0.3, 0.3), (0.0, 0.4)]
TEST_CENTERS = {
    1: tuple(_BASE),
    2: tuple(_BASE + [(-0.3, 0.2)]),
    3: tuple(_BASE + [(-0.3, 0.2), (-0.15, 0.3)]),
    4: tuple(_BASE + [(-0.3, 0.2), (0.0, 0.2)]),
}


@dataclass
class CoefficientField:
    """Nodal ``rho`` and ``p`` on a grid; ``mask`` flags the free (unknown) nodes."""

    grid: object
    rho: np.ndarray
    p: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        for name in ("rho", "p", "mask"):
            if getattr(self, name).shape != self.grid.shape:
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, "
                                 f"grid is {self.grid.shape}")

    @classmethod
    def homogeneous(cls, grid, mask, rho=1.0, p=1.0):
        return cls(grid, np.full(grid.shape, rho), np.full(grid.shape, p), mask)

    def copy(self):
        return CoefficientField(self.grid, self.rho.copy(), self.p.copy(), self.mask.copy())

    def stacked(self):
        return np.stack([self.rho, self.p])

    def with_values(self, rho, p):
        return CoefficientField(self.grid, rho, p, self.mask)

    def is_admissible(self, atol=0.0):
        free, frozen = self.mask, ~self.mask
        return bool(
            np.all(self.rho[frozen] == 1.0) and np.all(self.p[frozen] == 1.0)
            and np.all(self.rho[free] >= RHO_BOUNDS[0] - atol)
            and np.all(self.rho[free] <= RHO_BOUNDS[1] + atol)
            and np.all(self.p[free] >= P_BOUNDS[0] - atol)
            and np.all(self.p[free] <= P_BOUNDS[1] + atol))


def free_mask(grid, domain):
    return grid.rect_mask(domain.omega1)


def gaussian_sum(X1, X2, centers, amplitude, width=GAUSS_WIDTH):
    out = np.ones_like(X1, dtype=float)
    for c1, c2 in centers:
        out += amplitude * np.exp(-((X1 - c1) ** 2 + (X2 - c2) ** 2) / width)
    return out


def gaussian_target(test_id, grid, mask):
    """Nodal sampling of the Test 1-4 Gaussian sums, pinned to 1 off ``mask``."""
    try:
        centers = TEST_CENTERS[int(test_id)]
    except (KeyError, TypeError, ValueError):
        raise ConfigError(f"unknown test id {test_id!r}; expected one of 1, 2, 3, 4") from None
    X1, X2 = grid.mesh
    rho = gaussian_sum(X1, X2, centers, RHO_AMPLITUDE)
    p = gaussian_sum(X1, X2, centers, P_AMPLITUDE)
    rho[~mask] = 1.0
    p[~mask] = 1.0
    return CoefficientField(grid, rho, p, mask)


def project_admissible(field):
    """Clamp free nodes into the admissible box and reset frozen nodes to 1."""
    rho = np.clip(field.rho, *RHO_BOUNDS)
    p = np.clip(field.p, *P_BOUNDS)
    rho[~field.mask] = 1.0
    p[~field.mask] = 1.0
    return CoefficientField(field.grid, rho, p, field.mask.copy())


def contrast_error(rec, truth):
    """Percent error of the maximum of each coefficient over the free region."""
    if rec.rho.shape != truth.rho.shape or rec.grid != truth.grid:
        raise ShapeError("reconstruction and truth live on different grids")
    m = truth.mask
    out = []
    for a, b in ((rec.rho, truth.rho), (rec.p, truth.p)):
        tmax = b[m].max()
        out.append(100.0 * abs(a[m].max() - tmax) / tmax)
    return tuple(out)


def max_over_free(field):
    m = field.mask
    return float(field.rho[m].max()), float(field.p[m].max())


def peak_prominences(values, mask, grid=None):
    """Local maxima of a nodal array over ``mask`` with their topographic prominence.

    Nodes are flooded from the top down (8-neighbour union-find); when two
    basins meet, the lower peak's prominence is its height above the meeting
    level.  The highest peak is measured against the lowest masked value.
    Returns ``[(prominence, value, j, i), ...]`` sorted by prominence.
    """
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    ny, nx = values.shape
    flat = np.flatnonzero(mask.ravel())
    if flat.size == 0:
        return []
    order = flat[np.argsort(-values.ravel()[flat], kind="stable")]
    parent = {}
    peak = {}  # root -> flat index of the basin's peak
    out = []

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    vflat = values.ravel()
    for k in order:
        j, i = divmod(int(k), nx)
        parent[k] = k
        peak[k] = k
        for dj in (-1, 0, 1):
            for di in (-1, 0, 1):
                jj, ii = j + dj, i + di
                if (dj or di) and 0 <= jj < ny and 0 <= ii < nx:
                    nb = jj * nx + ii
                    if nb not in parent:
                        continue
                    ra, rb = find(k), find(nb)
                    if ra == rb:
                        continue
                    pa, pb = peak[ra], peak[rb]
                    lo, hi = (ra, rb) if vflat[pa] < vflat[pb] else (rb, ra)
                    if peak[lo] != k:  # a real basin dies at this level
                        pj, pi = divmod(int(peak[lo]), nx)
                        out.append((vflat[peak[lo]] - vflat[k], vflat[peak[lo]], pj, pi))
                    parent[lo] = hi
    roots = {find(k) for k in order}
    base = vflat[order[-1]]
    for r in roots:
        pj, pi = divmod(int(peak[r]), nx)
        out.append((vflat[peak[r]] - base, vflat[peak[r]], pj, pi))
    out.sort(key=lambda t: (-t[0], t[2], t[3]))
    return [(float(a), float(b), int(c), int(d)) for a, b, c, d in out]


def count_maxima(values, mask, prominence):
    return sum(1 for p in peak_prominences(values, mask) if p[0] >= prominence)


def locate_blobs(values, mask, grid, centers, tol):
    """Distances from each true center to the nearest of the ``len(centers)`` most prominent peaks."""
    peaks = peak_prominences(values, mask)[:len(centers)]
    pts = np.array([grid.coord(i, j) for _, _, j, i in peaks]).reshape(-1, 2)
    dist = []
    for c in centers:
        dist.append(float(np.min(np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1]))) if len(pts) else np.inf)
    return dist, all(d <= tol + 1e-12 for d in dist)
