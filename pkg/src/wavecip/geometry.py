"""Computational rectangle, subregions, boundary labels and the node lattice.

Nodes are stored in row-major arrays of shape ``(ny, nx)``: the first index
runs along x2 (bottom to top), the second along x1 (left to right).
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import DiscretizationError, GeometryError

INTERIOR = 0
GAMMA1 = 1  # top
GAMMA2 = 2  # bottom
GAMMA3 = 3  # left and right sides, corners included

LABEL_NAMES = {INTERIOR: "interior", GAMMA1: "gamma1", GAMMA2: "gamma2", GAMMA3: "gamma3"}


@dataclass(frozen=True)
class Rect:
    x1_min: float
    x1_max: float
    x2_min: float
    x2_max: float

    @classmethod
    def from_seq(cls, seq):
        if len(seq) != 4:
            raise GeometryError(f"rectangle needs 4 numbers, got {seq!r}")
        return cls(*(float(v) for v in seq))

    def as_list(self):
        return [self.x1_min, self.x1_max, self.x2_min, self.x2_max]

    @property
    def width(self):
        return self.x1_max - self.x1_min

    @property
    def height(self):
        return self.x2_max - self.x2_min

    def contains(self, other, strict=False):
        if strict:
            return (other.x1_min > self.x1_min and other.x1_max < self.x1_max
                    and other.x2_min > self.x2_min and other.x2_max < self.x2_max)
        return (other.x1_min >= self.x1_min and other.x1_max <= self.x1_max
                and other.x2_min >= self.x2_min and other.x2_max <= self.x2_max)


@dataclass(frozen=True)
class Domain2D:
    outer: Rect
    inner: Rect
    omega1: Rect
    t1: float | None = None


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Uniform lattice over a rectangle with spacing ``h``."""

    x1_min: float
    x2_min: float
    h: float
    nx: int
    ny: int

    def __post_init__(self):
        if not self.h > 0:
            raise DiscretizationError(f"spacing must be positive, got {self.h}")
        if self.nx < 2 or self.ny < 2:
            raise DiscretizationError("grid needs at least 2 nodes per direction")

    def __eq__(self, other):
        if not isinstance(other, Grid2D):
            return NotImplemented
        return (self.nx, self.ny) == (other.nx, other.ny) and np.allclose(
            [self.x1_min, self.x2_min, self.h], [other.x1_min, other.x2_min, other.h],
            rtol=0, atol=1e-12)

    def __hash__(self):
        return hash((self.nx, self.ny, round(self.h, 12)))

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def size(self):
        return self.nx * self.ny

    @property
    def x1_max(self):
        return self.x1_min + (self.nx - 1) * self.h

    @property
    def x2_max(self):
        return self.x2_min + (self.ny - 1) * self.h

    @property
    def rect(self):
        return Rect(self.x1_min, self.x1_max, self.x2_min, self.x2_max)

    def coord(self, i, j):
        return (self.x1_min + i * self.h, self.x2_min + j * self.h)

    def index(self, x1, x2):
        """Nearest node index ``(i, j)``; raises if the point is off-lattice."""
        fi = (x1 - self.x1_min) / self.h
        fj = (x2 - self.x2_min) / self.h
        i, j = int(round(fi)), int(round(fj))
        if abs(fi - i) > 1e-6 or abs(fj - j) > 1e-6:
            raise DiscretizationError(f"point ({x1}, {x2}) is not a lattice node")
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise GeometryError(f"point ({x1}, {x2}) lies outside the grid")
        return i, j

    @cached_property
    def x1(self):
        return self.x1_min + self.h * np.arange(self.nx)

    @cached_property
    def x2(self):
        return self.x2_min + self.h * np.arange(self.ny)

    @cached_property
    def mesh(self):
        """``(X1, X2)`` coordinate arrays of shape ``(ny, nx)``."""
        X1, X2 = np.meshgrid(self.x1, self.x2)
        X1.flags.writeable = False
        X2.flags.writeable = False
        return X1, X2

    @cached_property
    def cell_weights(self):
        """Control-volume areas: h^2 inside, halved on edges, quartered at corners."""
        w = np.full(self.shape, self.h * self.h)
        w[0, :] *= 0.5
        w[-1, :] *= 0.5
        w[:, 0] *= 0.5
        w[:, -1] *= 0.5
        w.flags.writeable = False
        return w

    @cached_property
    def labels(self):
        lab = np.full(self.shape, INTERIOR, dtype=np.int8)
        lab[-1, :] = GAMMA1
        lab[0, :] = GAMMA2
        lab[:, 0] = GAMMA3
        lab[:, -1] = GAMMA3
        lab.flags.writeable = False
        return lab

    def rect_mask(self, rect, tol=1e-9):
        """Boolean mask of nodes in the closed rectangle."""
        X1, X2 = self.mesh
        eps = tol * self.h
        return ((X1 >= rect.x1_min - eps) & (X1 <= rect.x1_max + eps)
                & (X2 >= rect.x2_min - eps) & (X2 <= rect.x2_max + eps))

    def refined(self, factor):
        """Same rectangle with spacing ``h / factor``."""
        factor = int(factor)
        return Grid2D(self.x1_min, self.x2_min, self.h / factor,
                      (self.nx - 1) * factor + 1, (self.ny - 1) * factor + 1)

    def node_slice_of(self, coarse):
        """Slices selecting the nodes of a coarser, aligned grid inside this one."""
        ratio = coarse.h / self.h
        r = int(round(ratio))
        if abs(ratio - r) > 1e-9 or r < 1:
            raise DiscretizationError("grids are not nested")
        i0, j0 = self.index(coarse.x1_min, coarse.x2_min)
        return (slice(j0, j0 + r * (coarse.ny - 1) + 1, r),
                slice(i0, i0 + r * (coarse.nx - 1) + 1, r))


def build_domain(outer=(-1.1, 1.1, -0.62, 0.62), inner=(-1.0, 1.0, -0.52, 0.52),
                 omega1=None, h=0.02, t1=None):
    """Validate the nested rectangles and build the lattice over ``outer``.

    ``omega1`` defaults to the upper half of ``inner``.
    """
    outer = outer if isinstance(outer, Rect) else Rect.from_seq(outer)
    inner = inner if isinstance(inner, Rect) else Rect.from_seq(inner)
    if omega1 is None:
        omega1 = Rect(inner.x1_min, inner.x1_max, 0.5 * (inner.x2_min + inner.x2_max), inner.x2_max)
    omega1 = omega1 if isinstance(omega1, Rect) else Rect.from_seq(omega1)
    h = float(h)

    for name, r in (("outer", outer), ("inner", inner), ("omega1", omega1)):
        if not (r.width > 0 and r.height > 0):
            raise GeometryError(f"{name} rectangle has non-positive size: {r}")
    if not h > 0:
        raise DiscretizationError(f"mesh size must be positive, got {h}")
    if not outer.contains(inner, strict=True):
        raise GeometryError("inner rectangle must lie strictly inside the outer one")
    if not inner.contains(omega1):
        raise GeometryError("omega1 must be contained in the inner rectangle")

    for r in (outer, inner, omega1):
        for offset in (r.x1_min - outer.x1_min, r.x1_max - outer.x1_min,
                       r.x2_min - outer.x2_min, r.x2_max - outer.x2_min):
            k = round(offset / h)
            if abs(offset - k * h) > 1e-9 * h:
                raise DiscretizationError(
                    f"h={h} is not commensurate with rectangle edge offset {offset}")

    return Domain2D(outer, inner, omega1, t1), make_grid(outer, h)


def make_grid(rect, h):
    """Lattice over ``rect`` with spacing ``h`` (which must divide both edges)."""
    rect = rect if isinstance(rect, Rect) else Rect.from_seq(rect)
    counts = []
    for length in (rect.width, rect.height):
        k = int(round(length / h))
        if k < 1 or abs(length - k * h) > 1e-9 * h:
            raise DiscretizationError(f"h={h} does not divide edge length {length}")
        counts.append(k + 1)
    return Grid2D(rect.x1_min, rect.x2_min, float(h), counts[0], counts[1])


def classify_boundary(grid, i, j):
    """Boundary label of node ``(i, j)``; corners belong to the sides."""
    if not (0 <= i < grid.nx and 0 <= j < grid.ny):
        raise GeometryError(f"node ({i}, {j}) is outside the grid")
    label = int(grid.labels[j, i])
    if label == INTERIOR:
        raise GeometryError(f"node ({i}, {j}) is not on the boundary")
    return label


def observation_nodes(grid):
    """Top-row nodes ``[[i, j], ...]`` sorted by x1, corners included."""
    j = grid.ny - 1
    return np.array([[i, j] for i in range(grid.nx)], dtype=np.int64)
