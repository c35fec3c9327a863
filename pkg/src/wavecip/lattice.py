"""Nested parameter lattices for the unknown coefficients.

The wave solver always runs on a uniform node grid.  The unknowns of an
inversion level are the values of ``rho`` and ``p`` at the interior nodes
of a union of square cells (the level's *zone*); the coefficient on the
solver grid is their bilinear interpolant.  Zone boundary nodes keep the
previous level's values and everything outside the zone is left as it was,
so the composite field is continuous and there are no hanging nodes.

Level 0 covers Omega1 with cells of ``base_factor`` solver spacings.  A
refinement step splits a subset of the current cells 2x2; once the cell
size would drop below the solver spacing the solver grid is halved.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .exceptions import GeometryError
from .fields import CoefficientField, free_mask


@dataclass(frozen=True, eq=False)
class MeshLevel:
    """Cells ``(a, b)`` of size ``r`` solver spacings anchored at solver node ``origin``.

    Cell ``(a, b)`` spans solver nodes ``origin + (a r .. (a+1) r, b r .. (b+1) r)``.
    """

    level: int
    grid: object
    origin: tuple
    r: int
    cells: frozenset
    parent: "MeshLevel | None" = None

    def __post_init__(self):
        if self.r < 1:
            raise GeometryError("cell size must be at least one solver spacing")
        i0, j0 = self.origin
        for a, b in self.cells:
            if (a < 0 or b < 0 or i0 + (a + 1) * self.r >= self.grid.nx
                    or j0 + (b + 1) * self.r >= self.grid.ny):
                raise GeometryError(f"cell {(a, b)} leaves the grid")

    @property
    def spacing(self):
        return self.r * self.grid.h

    @property
    def n_cells(self):
        return len(self.cells)

    def sorted_cells(self):
        return sorted(self.cells, key=lambda c: (c[1], c[0]))

    def _nodes(self):
        nodes = set()
        for a, b in self.cells:
            nodes.update(((a, b), (a + 1, b), (a, b + 1), (a + 1, b + 1)))
        return nodes

    def free_nodes(self):
        """Lattice nodes whose four neighbouring cells all belong to the zone, row-major."""
        c = self.cells
        free = [(a, b) for a, b in self._nodes()
                if {(a - 1, b - 1), (a, b - 1), (a - 1, b), (a, b)} <= c]
        return sorted(free, key=lambda n: (n[1], n[0]))

    def solver_index(self, a, b):
        return self.origin[0] + a * self.r, self.origin[1] + b * self.r

    def cell_slices(self, cell):
        i, j = self.solver_index(*cell)
        return slice(j, j + self.r + 1), slice(i, i + self.r + 1)

    def zone_mask(self):
        """Solver nodes covered by the closed zone cells."""
        m = np.zeros(self.grid.shape, dtype=bool)
        for cell in self.cells:
            m[self.cell_slices(cell)] = True
        return m

    def interpolation(self):
        """Sparse ``P`` (solver nodes x free lattice nodes) and the covered-node mask.

        A covered solver node gets the bilinear weights of the corners of
        one containing cell; weights on fixed corners are returned separately
        as ``Q`` (solver nodes x zone boundary nodes) with that node list.
        """
        free = self.free_nodes()
        fidx = {n: k for k, n in enumerate(free)}
        fixed = sorted(set(self._nodes()) - set(free), key=lambda n: (n[1], n[0]))
        xidx = {n: k for k, n in enumerate(fixed)}
        r, nx = self.r, self.grid.nx
        s = np.arange(r + 1) / r
        rows_p, cols_p, vals_p = [], [], []
        rows_q, cols_q, vals_q = [], [], []
        seen = np.zeros(self.grid.shape, dtype=bool)
        for a, b in self.sorted_cells():
            i, j = self.solver_index(a, b)
            for dj in range(r + 1):
                for di in range(r + 1):
                    if seen[j + dj, i + di]:
                        continue
                    seen[j + dj, i + di] = True
                    row = (j + dj) * nx + (i + di)
                    sx, sy = s[di], s[dj]
                    for node, wgt in (((a, b), (1 - sx) * (1 - sy)), ((a + 1, b), sx * (1 - sy)),
                                      ((a, b + 1), (1 - sx) * sy), ((a + 1, b + 1), sx * sy)):
                        if wgt == 0.0:
                            continue
                        if node in fidx:
                            rows_p.append(row)
                            cols_p.append(fidx[node])
                            vals_p.append(wgt)
                        else:
                            rows_q.append(row)
                            cols_q.append(xidx[node])
                            vals_q.append(wgt)
        n = self.grid.size
        P = sparse.csr_matrix((vals_p, (rows_p, cols_p)), shape=(n, len(free)))
        Q = sparse.csr_matrix((vals_q, (rows_q, cols_q)), shape=(n, len(fixed)))
        return P, Q, free, fixed, seen

    def sample(self, values, nodes):
        """Values of a solver-grid array at the given lattice nodes (injection)."""
        idx = [self.solver_index(a, b) for a, b in nodes]
        ii = np.array([i for i, _ in idx], dtype=np.int64)
        jj = np.array([j for _, j in idx], dtype=np.int64)
        return np.asarray(values)[jj, ii]

    def cell_centers(self):
        out = []
        for a, b in self.sorted_cells():
            i, j = self.solver_index(a, b)
            x1, x2 = self.grid.coord(i + 0.5 * self.r, j + 0.5 * self.r)
            out.append((x1, x2))
        return np.array(out).reshape(-1, 2)

    def refined(self, flagged):
        """Child level splitting ``flagged`` cells 2x2 (halving the solver grid if needed)."""
        flagged = set(flagged)
        if not flagged <= self.cells:
            raise GeometryError("can only refine cells of the current level")
        if self.r % 2 == 0:
            grid, origin, r = self.grid, self.origin, self.r // 2
        else:
            grid = self.grid.refined(2)
            origin, r = (2 * self.origin[0], 2 * self.origin[1]), self.r
        cells = frozenset((2 * a + da, 2 * b + db) for a, b in flagged for da in (0, 1) for db in (0, 1))
        return MeshLevel(self.level + 1, grid, origin, r, cells, parent=self)

    def is_nested(self):
        """Every cell sits inside a cell of the parent level, geometrically."""
        if self.parent is None:
            return True
        par = self.parent
        for a, b in self.cells:
            i, j = self.solver_index(a, b)
            x1, x2 = self.grid.coord(i, j)
            pi = (x1 - par.grid.x1_min) / par.grid.h - par.origin[0]
            pj = (x2 - par.grid.x2_min) / par.grid.h - par.origin[1]
            pa, pb = int(np.floor(pi / par.r + 1e-9)), int(np.floor(pj / par.r + 1e-9))
            if (pa, pb) not in par.cells:
                return False
            if abs(self.spacing * 2 - par.spacing) > 1e-9 * par.spacing:
                return False
        return True


def base_level(grid, domain, base_factor):
    """Level 0: whole cells of ``base_factor`` spacings inside Omega1, anchored at its corner."""
    h = grid.h
    om = domain.omega1
    i0 = int(round((om.x1_min - grid.x1_min) / h))
    j0 = int(round((om.x2_min - grid.x2_min) / h))
    i1 = int(round((om.x1_max - grid.x1_min) / h))
    j1 = int(round((om.x2_max - grid.x2_min) / h))
    r = int(base_factor)
    na, nb = (i1 - i0) // r, (j1 - j0) // r
    if na < 1 or nb < 1:
        raise GeometryError(f"Omega1 holds no cell of {r} spacings")
    cells = frozenset((a, b) for a in range(na) for b in range(nb))
    return MeshLevel(0, grid, (i0, j0), r, cells)


def prolong_field(field, grid, domain):
    """Bilinear transfer of a nodal field to a refined, aligned grid."""
    if field.grid == grid:
        return field.copy()
    src = field.grid
    X1, X2 = grid.mesh
    fi = np.clip((X1 - src.x1_min) / src.h, 0, src.nx - 1)
    fj = np.clip((X2 - src.x2_min) / src.h, 0, src.ny - 1)
    i = np.minimum(np.floor(fi).astype(int), src.nx - 2)
    j = np.minimum(np.floor(fj).astype(int), src.ny - 2)
    sx, sy = fi - i, fj - j

    def interp(v):
        return ((1 - sx) * (1 - sy) * v[j, i] + sx * (1 - sy) * v[j, i + 1]
                + (1 - sx) * sy * v[j + 1, i] + sx * sy * v[j + 1, i + 1])

    mask = free_mask(grid, domain)
    rho, p = interp(field.rho), interp(field.p)
    rho[~mask] = 1.0
    p[~mask] = 1.0
    return CoefficientField(grid, rho, p, mask)


class Parameterization:
    """Map between a level's unknowns ``(v_rho, v_p)`` and the solver-grid field."""

    def __init__(self, level, base_field):
        if base_field.grid != level.grid:
            raise GeometryError("base field must live on the level's solver grid")
        self.level = level
        self.grid = level.grid
        self.mask = base_field.mask
        P, Q, free, fixed, covered = level.interpolation()
        self.P, self.nodes = P, free
        self.covered = covered
        self.fixed_rho = self._fixed(base_field.rho, Q, fixed, covered)
        self.fixed_p = self._fixed(base_field.p, Q, fixed, covered)
        h2 = self.grid.h ** 2
        # lumped L2 metric of the lattice basis over the free region
        self.metric = np.asarray(P.T @ (h2 * self.mask.ravel().astype(float))).ravel()
        if np.any(self.metric <= 0):
            raise GeometryError("a lattice unknown does not touch the free region")
        self.v0 = (level.sample(base_field.rho, free), level.sample(base_field.p, free))

    def _fixed(self, values, Q, fixed, covered):
        out = np.array(values, dtype=float).ravel()
        cov = covered.ravel()
        out[cov] = 0.0
        if Q.shape[1]:
            out[cov] += (Q @ self.level.sample(values, fixed))[cov]
        return out

    @property
    def size(self):
        return len(self.nodes)

    def to_field(self, v_rho, v_p):
        rho = (self.fixed_rho + self.P @ v_rho).reshape(self.grid.shape)
        p = (self.fixed_p + self.P @ v_p).reshape(self.grid.shape)
        return CoefficientField(self.grid, rho, p, self.mask)

    def pullback(self, d):
        """``P^T d`` for a solver-grid derivative array."""
        return np.asarray(self.P.T @ np.asarray(d).ravel()).ravel()
