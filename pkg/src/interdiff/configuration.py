"""Finite point configurations on a periodic cube, with a cell-list index."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import NonFiniteCoefficient, TooFewPoints, ValidationError
from .potential import PairPotential


@dataclass(frozen=True)
class TorusBox:
    """The cube [0, L)^d with periodic boundaries."""

    d: int
    L: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValidationError(f"dimension must be 1, 2 or 3, got {self.d}")
        if not self.L > 0:
            raise ValidationError(f"box side must be positive, got {self.L}")

    @property
    def volume(self) -> float:
        return float(self.L) ** self.d

    def wrap(self, x):
        x = np.asarray(x, dtype=float)
        y = x - self.L * np.floor(x / self.L)
        return np.where(y >= self.L, 0.0, y)

    def min_image(self, dx):
        dx = np.asarray(dx, dtype=float)
        return dx - self.L * np.floor(dx / self.L + 0.5)


def cells_per_side(L: float, cutoff: float) -> int:
    """Number of cells per side so that cells tile the box and are at least ``cutoff`` wide."""
    if cutoff <= 0:
        return 1
    return max(1, int(math.floor(L / cutoff)))


class CellList:
    """CSR cell list: ``order[starts[c]:starts[c+1]]`` are the (ascending) members of cell c."""

    def __init__(self, box: TorusBox, cutoff: float, points: np.ndarray):
        self.box = box
        self.cutoff = float(cutoff)
        self.m = cells_per_side(box.L, cutoff)
        self.width = box.L / self.m
        self.rebuild(points)

    def rebuild(self, points):
        self.cell_of, self.starts, self.order = K.build_csr(points, len(points), float(self.box.L),
                                                            self.m, self.box.d)

    def cell_index(self, x) -> int:
        return int(K.cell_index(np.asarray(x, float), float(self.box.L), self.m, self.box.d))

    def members(self, c: int) -> np.ndarray:
        return self.order[self.starts[c]:self.starts[c + 1]]

    def _insert_sorted(self, i, c):
        run = self.order[self.starts[c]:self.starts[c + 1]]
        at = self.starts[c] + int(np.searchsorted(run, i))
        self.order = np.insert(self.order, at, i)
        self.starts[c + 1:] += 1

    def _drop(self, i, c):
        run = self.order[self.starts[c]:self.starts[c + 1]]
        at = self.starts[c] + int(np.searchsorted(run, i))
        self.order = np.delete(self.order, at)
        self.starts[c + 1:] -= 1

    def on_add(self, x):
        i = len(self.cell_of)
        c = self.cell_index(x)
        self.cell_of = np.append(self.cell_of, c)
        self._insert_sorted(i, c)

    def on_remove(self, i):
        self._drop(i, int(self.cell_of[i]))
        self.cell_of = np.delete(self.cell_of, i)
        self.order[self.order > i] -= 1

    def on_move(self, i, x):
        c_old, c_new = int(self.cell_of[i]), self.cell_index(x)
        if c_old != c_new:
            self._drop(i, c_old)
            self._insert_sorted(i, c_new)
            self.cell_of[i] = c_new


class Configuration:
    """A finite point set in a :class:`TorusBox`.

    Points keep their insertion order; removal shifts later indices down by one.
    Cell lists are built per potential cutoff on first use and then updated
    incrementally by :meth:`add`, :meth:`remove` and :meth:`move`.
    """

    def __init__(self, box: TorusBox, points=None):
        self.box = box
        if points is None:
            points = np.empty((0, box.d))
        pts = np.array(points, dtype=float).reshape(-1, box.d)
        if not np.all(np.isfinite(pts)):
            raise ValidationError("coordinates must be finite")
        self._points = box.wrap(pts)
        self._cells: dict[float, CellList] = {}

    # -- container protocol ----------------------------------------------
    def __len__(self):
        return len(self._points)

    @property
    def n(self) -> int:
        return len(self._points)

    @property
    def points(self) -> np.ndarray:
        view = self._points.view()
        view.flags.writeable = False
        return view

    def copy(self) -> "Configuration":
        return Configuration(self.box, self._points.copy())

    def __eq__(self, other):
        return (isinstance(other, Configuration) and self.box == other.box
                and np.array_equal(self._points, other._points))

    def __repr__(self):
        return f"Configuration(d={self.box.d}, L={self.box.L}, n={self.n})"

    # -- cell lists -------------------------------------------------------
    def cells(self, cutoff: float) -> CellList:
        key = float(cutoff)
        if key not in self._cells:
            self._cells[key] = CellList(self.box, key, self._points)
        return self._cells[key]

    def add(self, x) -> int:
        x = self.box.wrap(np.asarray(x, float).reshape(self.box.d))
        self._points = np.vstack([self._points, x])
        for cl in self._cells.values():
            cl.on_add(x)
        return self.n - 1

    def remove(self, i: int):
        self._points = np.delete(self._points, i, axis=0)
        for cl in self._cells.values():
            cl.on_remove(i)

    def move(self, i: int, x):
        x = self.box.wrap(np.asarray(x, float).reshape(self.box.d))
        self._points[i] = x
        for cl in self._cells.values():
            cl.on_move(i, x)

    def translated(self, shift) -> "Configuration":
        return Configuration(self.box, self._points + np.asarray(shift, float))

    # -- energies ---------------------------------------------------------
    def _csr(self, p: PairPotential):
        p.check_fits(self.box.L)
        cl = self.cells(p.cutoff)
        return cl.starts, cl.order, cl.m

    def local_energy(self, x, p: PairPotential, exclude: int = -1) -> float:
        """Sum of phi(x - y) over points y, skipping index ``exclude``."""
        starts, order, m = self._csr(p)
        x = self.box.wrap(np.asarray(x, float).reshape(self.box.d))
        return float(K.local_energy_csr(x, exclude, self._points, starts, order,
                                        float(self.box.L), m, self.box.d, *p.kernel_args()))

    def local_energies_at(self, xs, p: PairPotential) -> np.ndarray:
        """Energy of a test particle at each row of ``xs`` against the whole configuration."""
        starts, order, m = self._csr(p)
        xs = self.box.wrap(np.asarray(xs, float).reshape(-1, self.box.d))
        return K.local_energies_at(xs, self._points, starts, order, float(self.box.L), m,
                                   self.box.d, *p.kernel_args())

    def interaction_sums(self, p: PairPotential) -> np.ndarray:
        """sum_{y != x} phi(x - y) for every point x."""
        p.check_fits(self.box.L)
        m = self.cells(p.cutoff).m
        s, _ = K.local_sums(self._points, self.n, float(self.box.L), m, self.box.d,
                            *p.kernel_args(), False)
        return s

    def forces(self, p: PairPotential) -> np.ndarray:
        """-sum_{y != x} grad phi(x - y) for every point x."""
        p.check_fits(self.box.L)
        m = self.cells(p.cutoff).m
        _, f = K.local_sums(self._points, self.n, float(self.box.L), m, self.box.d,
                            *p.kernel_args(), True)
        return f

    def coefficient_A(self, i: int, p: PairPotential) -> float:
        """A(gamma, x) = exp(sum_{y != x} phi(x - y)) for the point with index i."""
        s = self.local_energy(self._points[i], p, exclude=i)
        if s > 709.0:
            raise NonFiniteCoefficient(f"A overflows at point {i}")
        return math.exp(s)

    def coefficients_A(self, p: PairPotential) -> np.ndarray:
        s = self.interaction_sums(p)
        with np.errstate(over="ignore"):
            a = np.exp(s)
        if not np.all(np.isfinite(a)):
            raise NonFiniteCoefficient("A overflows")
        return a

    def window_mask(self, lo, hi) -> np.ndarray:
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        return np.all((self._points >= lo) & (self._points < hi), axis=1)

    def window_decomposition(self, lo, hi, p: PairPotential):
        """Return (E(gamma_in), W(gamma_in | gamma_out)) for the window [lo, hi)."""
        p.check_fits(self.box.L)
        inside = self.window_mask(lo, hi)
        E = K.pair_energy_matrix(self._points, self.n, float(self.box.L), self.box.d,
                                 *p.kernel_args())
        iu, ju = np.triu_indices(self.n, 1)
        both = inside[iu] & inside[ju]
        cross = inside[iu] ^ inside[ju]
        return math.fsum(E[iu[both], ju[both]]), math.fsum(E[iu[cross], ju[cross]])

    def conditional_energy(self, lo, hi, p: PairPotential) -> float:
        """Sum of phi over unordered pairs with at least one point in the window [lo, hi)."""
        p.check_fits(self.box.L)
        inside = self.window_mask(lo, hi)
        E = K.pair_energy_matrix(self._points, self.n, float(self.box.L), self.box.d,
                                 *p.kernel_args())
        iu, ju = np.triu_indices(self.n, 1)
        hit = inside[iu] | inside[ju]
        return math.fsum(E[iu[hit], ju[hit]])

    def min_pair_distance(self) -> float:
        if self.n < 2:
            raise TooFewPoints("need at least two points")
        return float(K.min_pair_distance(self._points, self.n, float(self.box.L), self.box.d))

    def count_within(self, x, radius: float) -> int:
        dx = self.box.min_image(self._points - np.asarray(x, float))
        return int(np.count_nonzero(np.sum(dx * dx, axis=1) < radius * radius))

    # -- text snapshot ----------------------------------------------------
    def to_text(self) -> str:
        lines = [f"{self.box.d} {self.box.L!r} {self.n}"]
        lines += [" ".join(repr(float(v)) for v in row) for row in self._points]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Configuration":
        rows = [ln.split() for ln in text.strip().splitlines()]
        if not rows or len(rows[0]) != 3:
            raise ValidationError("snapshot header must be 'd L n'")
        d, L, n = int(rows[0][0]), float(rows[0][1]), int(rows[0][2])
        body = rows[1:]
        if len(body) != n or any(len(r) != d for r in body):
            raise ValidationError("snapshot body does not match its header")
        pts = np.array(body, dtype=float).reshape(n, d)
        return cls(TorusBox(d, L), pts)
