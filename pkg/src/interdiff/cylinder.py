"""Cylinder functions F(gamma) = g(<f_1, gamma>, ..., <f_N, gamma>) and their derivatives.

``<f, gamma>`` is the sum of f over the points of gamma.  Test functions live
on a periodic cube of side L and are evaluated through the minimum image, so a
bump with support radius below L/2 is the periodisation of a compactly
supported function.  Every test function provides analytic values, gradients
and Laplacians; every outer function provides its gradient and Hessian.
"""
from __future__ import annotations

import math

import numpy as np

from .configuration import Configuration
from .errors import ValidationError


# ---------------------------------------------------------------------------
# test functions


class TestFunction:
    """Base class: subclasses implement ``value``, ``grad`` and ``laplacian`` on (m, d) arrays."""

    __test__ = False  # keep pytest from collecting this class
    L: float
    d: int
    support_radius: float = math.inf

    def _disp(self, xs, center):
        xs = np.asarray(xs, dtype=float).reshape(-1, self.d)
        dx = xs - center
        return dx - self.L * np.floor(dx / self.L + 0.5)

    def pairing(self, points) -> float:
        """<f, gamma> = sum of f over ``points``."""
        return math.fsum(self.value(points)) if len(points) else 0.0

    def integral(self, n: int = 256) -> float:
        return torus_integral(self.value, self.L, self.d, n)

    def integral_sq(self, n: int = 256) -> float:
        return torus_integral(lambda x: self.value(x) ** 2, self.L, self.d, n)

    def to_spec(self) -> dict:
        raise NotImplementedError


def _bump_profile(s):
    """e * exp(-1/(1-s)) for s < 1, else 0, with its first two s-derivatives."""
    s = np.asarray(s, dtype=float)
    inside = s < 1.0
    u = np.where(inside, 1.0 - s, 1.0)
    f = np.where(inside, np.exp(1.0 - 1.0 / u), 0.0)
    f1 = -f / u ** 2
    f2 = f * (1.0 - 2.0 * u) / u ** 4
    return f, f1, f2


class SmoothBump(TestFunction):
    """amplitude * e * exp(-1/(1 - |x-c|^2/R^2)) inside the ball B(c, R); C^infinity, compact support."""

    def __init__(self, center, radius, L, amplitude=1.0):
        self.center = np.asarray(center, dtype=float).ravel()
        self.d = len(self.center)
        self.R, self.L, self.amplitude = float(radius), float(L), float(amplitude)
        self.support_radius = self.R
        if not 0 < self.R < self.L / 2:
            raise ValidationError("bump radius must lie in (0, L/2)")

    def value(self, xs):
        y = self._disp(xs, self.center)
        return self.amplitude * _bump_profile(np.sum(y * y, axis=1) / self.R ** 2)[0]

    def grad(self, xs):
        y = self._disp(xs, self.center)
        _, f1, _ = _bump_profile(np.sum(y * y, axis=1) / self.R ** 2)
        return self.amplitude * (2.0 * f1 / self.R ** 2)[:, None] * y

    def laplacian(self, xs):
        y = self._disp(xs, self.center)
        s = np.sum(y * y, axis=1) / self.R ** 2
        _, f1, f2 = _bump_profile(s)
        return self.amplitude * (4.0 * s / self.R ** 2 * f2 + 2.0 * self.d / self.R ** 2 * f1)

    def to_spec(self):
        return {"kind": "smooth_bump", "center": self.center.tolist(), "radius": self.R,
                "amplitude": self.amplitude}


class GaussianTest(TestFunction):
    """amplitude * exp(-|x-c|^2 / w^2) through the minimum image.

    Not compactly supported; with w <= L/10 the mass beyond L/2 is below e^{-25}.
    """

    def __init__(self, center, width, L, amplitude=1.0):
        self.center = np.asarray(center, dtype=float).ravel()
        self.d = len(self.center)
        self.w, self.L, self.amplitude = float(width), float(L), float(amplitude)
        self.support_radius = 5.0 * self.w
        if not 0 < self.w <= self.L / 10:
            raise ValidationError("Gaussian width must lie in (0, L/10]")

    def value(self, xs):
        y = self._disp(xs, self.center)
        return self.amplitude * np.exp(-np.sum(y * y, axis=1) / self.w ** 2)

    def grad(self, xs):
        y = self._disp(xs, self.center)
        return (-2.0 / self.w ** 2) * self.value(xs)[:, None] * y

    def laplacian(self, xs):
        y = self._disp(xs, self.center)
        r2 = np.sum(y * y, axis=1)
        return self.value(xs) * (4.0 * r2 / self.w ** 4 - 2.0 * self.d / self.w ** 2)

    def to_spec(self):
        return {"kind": "gaussian", "center": self.center.tolist(), "width": self.w,
                "amplitude": self.amplitude}


class CoordinateBumpProduct(TestFunction):
    """Product over coordinates of one-dimensional smooth bumps of half-width R."""

    def __init__(self, center, radius, L, amplitude=1.0):
        self.center = np.asarray(center, dtype=float).ravel()
        self.d = len(self.center)
        self.R, self.L, self.amplitude = float(radius), float(L), float(amplitude)
        self.support_radius = self.R * math.sqrt(self.d)
        if not 0 < self.support_radius < self.L / 2:
            raise ValidationError("support must have radius below L/2")

    def _parts(self, xs):
        y = self._disp(xs, self.center)
        s = (y / self.R) ** 2
        f, f1, f2 = _bump_profile(s)
        g1 = 2.0 * f1 * y / self.R ** 2
        g2 = 4.0 * f2 * y * y / self.R ** 4 + 2.0 * f1 / self.R ** 2
        return f, g1, g2

    def _others(self, f, k):
        return np.prod(np.delete(f, k, axis=1), axis=1)

    def value(self, xs):
        f, _, _ = self._parts(xs)
        return self.amplitude * np.prod(f, axis=1)

    def grad(self, xs):
        f, g1, _ = self._parts(xs)
        return self.amplitude * np.column_stack([g1[:, k] * self._others(f, k) for k in range(self.d)])

    def laplacian(self, xs):
        f, _, g2 = self._parts(xs)
        return self.amplitude * sum(g2[:, k] * self._others(f, k) for k in range(self.d))

    def to_spec(self):
        return {"kind": "coordinate_bump", "center": self.center.tolist(), "radius": self.R,
                "amplitude": self.amplitude}


class PlaneWave(TestFunction):
    """amplitude * cos(2 pi k.x / L + phase) for an integer wave-vector k; exactly periodic."""

    def __init__(self, k, L, phase=0.0, amplitude=1.0):
        self.k = np.asarray(k, dtype=float).ravel()
        self.d = len(self.k)
        self.L, self.phase, self.amplitude = float(L), float(phase), float(amplitude)
        self.q = 2.0 * math.pi * self.k / self.L

    @property
    def wavenumber_sq(self) -> float:
        return float(self.q @ self.q)

    def _arg(self, xs):
        xs = np.asarray(xs, dtype=float).reshape(-1, self.d)
        return xs @ self.q + self.phase

    def value(self, xs):
        return self.amplitude * np.cos(self._arg(xs))

    def grad(self, xs):
        return -self.amplitude * np.sin(self._arg(xs))[:, None] * self.q

    def laplacian(self, xs):
        return -self.wavenumber_sq * self.value(xs)

    def integral(self, n: int = 256) -> float:
        return self.L ** self.d * self.amplitude * math.cos(self.phase) if not np.any(self.k) else 0.0

    def integral_sq(self, n: int = 256) -> float:
        vol = self.L ** self.d
        if not np.any(self.k):
            return vol * (self.amplitude * math.cos(self.phase)) ** 2
        return vol * self.amplitude ** 2 / 2.0

    def to_spec(self):
        return {"kind": "plane_wave", "k": self.k.tolist(), "phase": self.phase, "amplitude": self.amplitude}


class WindowedPlaneWave(TestFunction):
    """PlaneWave times SmoothBump: an oscillation localised in a ball."""

    def __init__(self, k, center, radius, L, phase=0.0):
        self.wave = PlaneWave(k, L, phase)
        self.window = SmoothBump(center, radius, L)
        self.d, self.L = self.wave.d, float(L)
        self.support_radius = self.window.R

    def value(self, xs):
        return self.wave.value(xs) * self.window.value(xs)

    def grad(self, xs):
        return (self.wave.grad(xs) * self.window.value(xs)[:, None]
                + self.window.grad(xs) * self.wave.value(xs)[:, None])

    def laplacian(self, xs):
        return (self.wave.laplacian(xs) * self.window.value(xs)
                + 2.0 * np.sum(self.wave.grad(xs) * self.window.grad(xs), axis=1)
                + self.wave.value(xs) * self.window.laplacian(xs))

    def to_spec(self):
        return {"kind": "windowed_plane_wave", "k": self.wave.k.tolist(), "phase": self.wave.phase,
                "center": self.window.center.tolist(), "radius": self.window.R}


class ZeroTest(TestFunction):
    def __init__(self, d, L):
        self.d, self.L = int(d), float(L)
        self.support_radius = 0.0

    def value(self, xs):
        return np.zeros(len(np.asarray(xs).reshape(-1, self.d)))

    def grad(self, xs):
        return np.zeros((len(np.asarray(xs).reshape(-1, self.d)), self.d))

    def laplacian(self, xs):
        return self.value(xs)

    def to_spec(self):
        return {"kind": "zero"}


def test_function_from_spec(spec: dict, d: int, L: float) -> TestFunction:
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "smooth_bump":
        return SmoothBump(spec.pop("center"), spec.pop("radius"), L, **spec)
    if kind == "gaussian":
        return GaussianTest(spec.pop("center"), spec.pop("width"), L, **spec)
    if kind == "coordinate_bump":
        return CoordinateBumpProduct(spec.pop("center"), spec.pop("radius"), L, **spec)
    if kind == "plane_wave":
        return PlaneWave(spec.pop("k"), L, **spec)
    if kind == "windowed_plane_wave":
        return WindowedPlaneWave(spec.pop("k"), spec.pop("center"), spec.pop("radius"), L, **spec)
    if kind == "zero":
        return ZeroTest(d, L)
    raise ValidationError(f"unknown test function kind {kind!r}")


test_function_from_spec.__test__ = False


def torus_grid(L: float, d: int, n: int) -> np.ndarray:
    """Midpoint grid with n points per side on [0, L)^d, shape (n^d, d)."""
    ax = (np.arange(n) + 0.5) * (L / n)
    return np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)


def torus_integral(fn, L: float, d: int, n: int = 256) -> float:
    """Midpoint rule over the torus; spectrally accurate for smooth periodic integrands."""
    pts = torus_grid(L, d, n)
    return float(np.sum(fn(pts))) * (L / n) ** d


# ---------------------------------------------------------------------------
# outer functions g: R^N -> R


class Outer:
    """Subclasses implement value(u), grad(u) -> (N,), hess(u) -> (N, N)."""

    bounded = True
    name = "outer"


class Identity(Outer):
    """g(u) = u_1 (N = 1).  Unbounded."""

    bounded = False
    name = "identity"

    def value(self, u):
        return float(u[0])

    def grad(self, u):
        return np.ones(1)

    def hess(self, u):
        return np.zeros((1, 1))


class Linear(Outer):
    bounded = False
    name = "linear"

    def __init__(self, coeffs):
        self.a = np.asarray(coeffs, dtype=float)

    def value(self, u):
        return float(self.a @ u)

    def grad(self, u):
        return self.a.copy()

    def hess(self, u):
        return np.zeros((len(self.a), len(self.a)))


class Quadratic(Outer):
    """g(u) = u.Q u / 2 + b.u.  Unbounded: outside the bounded class, kept for closed forms."""

    bounded = False
    name = "quadratic"

    def __init__(self, Q, b=None):
        self.Q = np.atleast_2d(np.asarray(Q, dtype=float))
        self.Q = 0.5 * (self.Q + self.Q.T)
        self.b = np.zeros(len(self.Q)) if b is None else np.asarray(b, dtype=float)

    def value(self, u):
        return float(0.5 * u @ self.Q @ u + self.b @ u)

    def grad(self, u):
        return self.Q @ u + self.b

    def hess(self, u):
        return self.Q.copy()


class TanhQuadratic(Outer):
    """g(u) = tanh(u.Q u / 2 + b.u + c0); bounded with all derivatives bounded on bounded sets."""

    name = "tanh_quadratic"

    def __init__(self, Q, b=None, c0=0.0):
        self.P = Quadratic(Q, b)
        self.c0 = float(c0)

    def value(self, u):
        return math.tanh(self.P.value(u) + self.c0)

    def grad(self, u):
        t = math.tanh(self.P.value(u) + self.c0)
        return (1.0 - t * t) * self.P.grad(u)

    def hess(self, u):
        t = math.tanh(self.P.value(u) + self.c0)
        gp = self.P.grad(u)
        return (1.0 - t * t) * (self.P.hess(u) - 2.0 * t * np.outer(gp, gp))


class Constant(Outer):
    name = "constant"

    def __init__(self, value, N=1):
        self.c, self.N = float(value), int(N)

    def value(self, u):
        return self.c

    def grad(self, u):
        return np.zeros(self.N)

    def hess(self, u):
        return np.zeros((self.N, self.N))


class Scalar:
    """A smooth scalar map psi with derivatives, used to compose psi(F)."""

    def __init__(self, f, df, d2f, name="psi"):
        self.f, self.df, self.d2f, self.name = f, df, d2f, name

    @classmethod
    def tanh(cls):
        return cls(math.tanh, lambda v: 1 - math.tanh(v) ** 2,
                   lambda v: -2 * math.tanh(v) * (1 - math.tanh(v) ** 2), "tanh")

    @classmethod
    def sin(cls):
        return cls(math.sin, math.cos, lambda v: -math.sin(v), "sin")


class Composed(Outer):
    """psi(g(u))."""

    def __init__(self, psi: Scalar, inner: Outer):
        self.psi, self.inner = psi, inner
        self.bounded = inner.bounded or psi.name in ("tanh", "sin")
        self.name = f"{psi.name}({inner.name})"

    def value(self, u):
        return self.psi.f(self.inner.value(u))

    def grad(self, u):
        return self.psi.df(self.inner.value(u)) * self.inner.grad(u)

    def hess(self, u):
        v = self.inner.value(u)
        gi = self.inner.grad(u)
        return self.psi.d2f(v) * np.outer(gi, gi) + self.psi.df(v) * self.inner.hess(u)


class ProductOuter(Outer):
    """g(u, v) = g1(u) g2(v) with u the first ``split`` coordinates."""

    def __init__(self, g1: Outer, g2: Outer, split: int):
        self.g1, self.g2, self.k = g1, g2, int(split)
        self.bounded = g1.bounded and g2.bounded
        self.name = f"{g1.name}*{g2.name}"

    def value(self, w):
        return self.g1.value(w[: self.k]) * self.g2.value(w[self.k:])

    def grad(self, w):
        u, v = w[: self.k], w[self.k:]
        return np.concatenate([self.g1.grad(u) * self.g2.value(v), self.g1.value(u) * self.g2.grad(v)])

    def hess(self, w):
        u, v = w[: self.k], w[self.k:]
        g1u, g2v = self.g1.grad(u), self.g2.grad(v)
        top = np.hstack([self.g1.hess(u) * self.g2.value(v), np.outer(g1u, g2v)])
        bot = np.hstack([np.outer(g2v, g1u), self.g1.value(u) * self.g2.hess(v)])
        return np.vstack([top, bot])


# ---------------------------------------------------------------------------
# cylinder functions


class CylinderFunction:
    """F(gamma) = outer(<f_1, gamma>, ..., <f_N, gamma>)."""

    def __init__(self, outer: Outer, inner: list):
        self.outer = outer
        self.inner = list(inner)
        if not self.inner:
            raise ValidationError("a cylinder function needs at least one test function")

    @property
    def bounded(self) -> bool:
        return self.outer.bounded

    @property
    def name(self) -> str:
        return f"{self.outer.name}[{len(self.inner)}]"

    def __mul__(self, other: "CylinderFunction") -> "CylinderFunction":
        return CylinderFunction(ProductOuter(self.outer, other.outer, len(self.inner)),
                                self.inner + other.inner)

    def compose(self, psi: Scalar) -> "CylinderFunction":
        return CylinderFunction(Composed(psi, self.outer), self.inner)

    # -- building blocks --------------------------------------------------
    def pairings(self, c: Configuration) -> np.ndarray:
        return np.array([f.pairing(c.points) for f in self.inner])

    def _tables(self, xs):
        xs = np.asarray(xs, dtype=float).reshape(-1, self.inner[0].d)
        vals = np.stack([f.value(xs) for f in self.inner])  # (N, m)
        grads = np.stack([f.grad(xs) for f in self.inner])  # (N, m, d)
        laps = np.stack([f.laplacian(xs) for f in self.inner])  # (N, m)
        return vals, grads, laps

    # -- public API -------------------------------------------------------
    def eval(self, c: Configuration) -> float:
        return self.outer.value(self.pairings(c))

    __call__ = eval

    def grads(self, c: Configuration) -> np.ndarray:
        """grad_x F for every point x of c, shape (n, d)."""
        if c.n == 0:
            return np.zeros((0, c.box.d))
        _, G, _ = self._tables(c.points)
        dg = self.outer.grad(self.pairings(c))
        return np.einsum("i,imd->md", dg, G)

    def grad_x(self, c: Configuration, i: int) -> np.ndarray:
        return self.grads(c)[i]

    def laplacians(self, c: Configuration) -> np.ndarray:
        """Laplacian_x F for every point x of c, via the chain rule."""
        if c.n == 0:
            return np.zeros(0)
        _, G, Lp = self._tables(c.points)
        u = self.pairings(c)
        H = self.outer.hess(u)
        dg = self.outer.grad(u)
        return np.einsum("ij,imd,jmd->m", H, G, G) + dg @ Lp

    def grads_added(self, c: Configuration, xs) -> np.ndarray:
        """grad_x F(c + x) at each row x of ``xs``, shape (m, d)."""
        vals, G, _ = self._tables(xs)
        u = self.pairings(c)[:, None] + vals  # (N, m)
        dg = np.stack([self.outer.grad(u[:, q]) for q in range(u.shape[1])])  # (m, N)
        return np.einsum("mi,imd->md", dg, G)

    def generator_apply(self, c: Configuration, p) -> float:
        """(H F)(c) = -sum_x A(c, x) Laplacian_x F(c)."""
        if c.n == 0:
            return 0.0
        A = c.coefficients_A(p)
        return -math.fsum(A * self.laplacians(c))


def carre_du_champ(F: CylinderFunction, G: CylinderFunction, c: Configuration, p) -> float:
    """S(F, G)(c) = sum_x A(c, x) <grad_x F, grad_x G>."""
    if c.n == 0:
        return 0.0
    A = c.coefficients_A(p)
    return math.fsum(A * np.sum(F.grads(c) * G.grads(c), axis=1))


def generator_apply(F: CylinderFunction, c: Configuration, p) -> float:
    return F.generator_apply(c, p)
