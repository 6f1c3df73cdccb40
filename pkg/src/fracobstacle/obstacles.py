"""Thin obstacles with closed-form partial derivatives.

Every obstacle is a function of the n thin-set variables and exposes
``derivative(alpha, x)`` for any multi-index of order up to ``max_order``.
Arbitrary callables are deliberately not supported: the Taylor corrections
need trustworthy derivatives of order k+1.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.polynomial import hermite_e

from .errors import ConfigurationError
from .polynomial import Polynomial, homogeneous_indices


class Obstacle:
    """Base class. Subclasses implement ``_derivative``."""

    kind = "abstract"
    max_order = 64
    smooth_radius = math.inf  # radius of the ball about `smooth_center` where it is C^infinity
    smooth_center: tuple = ()

    def __init__(self, n: int, scale: float = 1.0):
        if n not in (1, 2):
            raise ConfigurationError(f"thin dimension must be 1 or 2, got {n}")
        self.n = n
        self.scale = float(scale)

    def _points(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise ConfigurationError(f"expected points with last axis {self.n}, got {x.shape}")
        return x

    def __call__(self, x):
        return self.derivative((0,) * self.n, x)

    def derivative(self, alpha, x):
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != self.n:
            raise ConfigurationError(f"multi-index {alpha} has wrong arity")
        if sum(alpha) > self.max_order:
            raise ConfigurationError(
                f"{self.kind} obstacle provides derivatives up to order {self.max_order}")
        return self.scale * self._derivative(alpha, self._points(x))

    def _derivative(self, alpha, x):
        raise NotImplementedError

    def laplacian(self, x):
        out = 0.0
        for i in range(self.n):
            alpha = [0] * self.n
            alpha[i] = 2
            out = out + self.derivative(alpha, x)
        return out

    def scaled(self, factor: float) -> "Obstacle":
        """Copy with the amplitude multiplied by `factor`."""
        other = object.__new__(type(self))
        other.__dict__.update(self.__dict__)
        other.scale = self.scale * factor
        return other

    # C^{k+1} norm and normalization ----------------------------------------

    def sample_points(self, R: float = 1.0, per_axis: int | None = None) -> np.ndarray:
        per_axis = per_axis or (2001 if self.n == 1 else 241)
        g = np.linspace(-R, R, per_axis)
        mesh = np.meshgrid(*([g] * self.n), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def norm(self, order: int, R: float = 1.0, points=None) -> float:
        """Sampled C^order norm.

        For each j <= order the sup over samples of sum_{|alpha|=j} j!/alpha! |D^alpha phi|.
        This quantity bounds every directional j-th derivative, which is what
        the Taylor remainder estimates need.
        """
        pts = self.sample_points(R) if points is None else np.asarray(points, dtype=float)
        best = 0.0
        for j in range(order + 1):
            acc = np.zeros(len(pts))
            for alpha in homogeneous_indices(self.n, j):
                w = math.factorial(j) / math.prod(math.factorial(a) for a in alpha)
                acc += w * np.abs(self.derivative(alpha, pts))
            best = max(best, float(acc.max()))
        return best

    def normalized(self, order: int, R: float = 1.0) -> "Obstacle":
        """Rescale the amplitude so the sampled C^order norm is at most one."""
        nrm = self.norm(order, R)
        if nrm <= 1.0:
            return self
        return self.scaled(1.0 / nrm)

    def describe(self) -> dict:
        return {"kind": self.kind, "n": self.n, "scale": self.scale}


class PolynomialObstacle(Obstacle):
    kind = "polynomial"

    def __init__(self, poly: Polynomial, scale: float = 1.0):
        super().__init__(poly.arity, scale)
        self.poly = poly

    def _derivative(self, alpha, x):
        return self.poly.derivative(alpha)(x)

    def describe(self):
        d = super().describe()
        d["terms"] = self.poly.to_json()
        return d


class AffineObstacle(PolynomialObstacle):
    kind = "affine"

    def __init__(self, n: int, constant: float = 0.0, slope=None, scale: float = 1.0):
        slope = np.zeros(n) if slope is None else np.asarray(slope, dtype=float)
        terms = {(0,) * n: constant}
        for i, b in enumerate(slope):
            alpha = [0] * n
            alpha[i] = 1
            terms[tuple(alpha)] = b
        super().__init__(Polynomial(n, terms), scale)
        self.constant = float(constant)
        self.slope = slope


class CapObstacle(Obstacle):
    """Concave paraboloid cap  height * max(0, 1 - sum_i (x_i - c_i)^2 / radius_i^2).

    radius is a scalar or one semi-axis per direction. Smooth inside its
    support, where derivatives are those of the paraboloid; zero outside.
    """

    kind = "cap"

    def __init__(self, n: int, height: float = 1.0, radius=0.5, center=None,
                 scale: float = 1.0):
        super().__init__(n, scale)
        self.height = float(height)
        radii = np.broadcast_to(np.asarray(radius, dtype=float), (n,)).copy()
        if np.any(radii <= 0):
            raise ConfigurationError("cap radii must be positive")
        self.radii = radii
        self.radius = float(radii.min())
        self.center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        paraboloid = Polynomial.constant(n, 1.0)
        for i in range(n):
            paraboloid = paraboloid - Polynomial.variable(n, i) ** 2 / radii[i] ** 2
        self.paraboloid = paraboloid.translate(self.center) * self.height
        self.smooth_radius = self.radius
        self.smooth_center = tuple(self.center)

    def _derivative(self, alpha, x):
        inside = np.sum(((x - self.center) / self.radii) ** 2, axis=-1) < 1.0
        return np.where(inside, self.paraboloid.derivative(alpha)(x), 0.0)

    def describe(self):
        d = super().describe()
        radius = self.radius if np.all(self.radii == self.radius) else self.radii.tolist()
        d.update(height=self.height, radius=radius, center=self.center.tolist())
        return d


class GaussianObstacle(Obstacle):
    """height * exp(-|x - c|^2 / (2 width^2)); derivatives via Hermite polynomials."""

    kind = "gaussian"

    def __init__(self, n: int, height: float = 1.0, width: float = 0.25, center=None,
                 scale: float = 1.0):
        super().__init__(n, scale)
        self.height = float(height)
        self.width = float(width)
        self.center = np.zeros(n) if center is None else np.asarray(center, dtype=float)

    def _derivative(self, alpha, x):
        y = (x - self.center) / self.width
        out = self.height * np.exp(-0.5 * np.sum(y ** 2, axis=-1))
        for i, p in enumerate(alpha):
            if p:
                c = np.zeros(p + 1)
                c[p] = 1.0
                # d^p/dx^p exp(-x^2/2) = (-1)^p He_p(x) exp(-x^2/2)
                out = out * (-1.0 / self.width) ** p * hermite_e.hermeval(y[..., i], c)
        return out

    def describe(self):
        d = super().describe()
        d.update(height=self.height, width=self.width, center=self.center.tolist())
        return d


class RescaledObstacle(Obstacle):
    """y -> c * phi(x0 + r y), derivatives by the chain rule."""

    kind = "rescaled"

    def __init__(self, base: Obstacle, c: float, x0, r: float):
        super().__init__(base.n, 1.0)
        self.base = base
        self.c = float(c)
        self.x0 = np.asarray(x0, dtype=float)
        self.r = float(r)
        self.max_order = base.max_order
        self.smooth_radius = base.smooth_radius / self.r
        if base.smooth_center:
            self.smooth_center = tuple((np.asarray(base.smooth_center) - self.x0) / self.r)

    def _derivative(self, alpha, y):
        return self.c * self.r ** sum(alpha) * self.base.derivative(alpha, self.x0 + self.r * y)


class DirectionalDerivative(Obstacle):
    """The function e . grad(phi), with derivatives one order lower than phi's."""

    kind = "directional"

    def __init__(self, base: Obstacle, direction):
        super().__init__(base.n, 1.0)
        self.base = base
        self.direction = np.asarray(direction, dtype=float)
        self.max_order = base.max_order - 1
        self.smooth_radius = base.smooth_radius
        self.smooth_center = base.smooth_center

    def _derivative(self, alpha, x):
        out = 0.0
        for i, e in enumerate(self.direction):
            if e:
                beta = list(alpha)
                beta[i] += 1
                out = out + e * self.base.derivative(beta, x)
        return out * np.ones(x.shape[:-1])


def builtin_obstacles(n: int, k: int, R: float = 1.0) -> dict[str, Obstacle]:
    """The built-in family, each normalized to C^{k+1} norm <= 1 on [-R, R]^n."""
    quad = Polynomial(n, {(2,) + (0,) * (n - 1): 0.3, (0,) * n: 0.1})
    if n == 2:
        quad = quad + Polynomial(2, {(1, 1): 0.2, (0, 2): -0.1})
    raw = {
        "polynomial": PolynomialObstacle(quad + Polynomial(n, {(3,) + (0,) * (n - 1): 0.05})),
        "affine": AffineObstacle(n, 0.2, np.linspace(0.3, -0.2, n)),
        "cap": CapObstacle(n),
        "gaussian": GaussianObstacle(n, height=0.5, width=0.4),
    }
    return {name: obs.normalized(k + 1, R) for name, obs in raw.items()}


def obstacle_from_config(block: dict, n: int) -> Obstacle:
    """Build an obstacle from a manifest block (already validated for type)."""
    kind = block.get("kind")
    if kind == "polynomial":
        terms = block.get("terms", [])
        obs = PolynomialObstacle(Polynomial.from_json(n, terms))
    elif kind == "affine":
        obs = AffineObstacle(n, block.get("constant", 0.0), block.get("slope"))
    elif kind == "cap":
        obs = CapObstacle(n, block.get("height", 1.0), block.get("radius", 0.5), block.get("center"))
    elif kind == "gaussian":
        obs = GaussianObstacle(n, block.get("height", 1.0), block.get("width", 0.25), block.get("center"))
    elif kind == "constant":
        obs = AffineObstacle(n, block.get("value", 0.0))
    else:
        raise ConfigurationError(f"unknown obstacle kind {kind!r}")
    if block.get("normalize", True):
        k = int(block.get("k", 2))
        obs = obs.normalized(k + 1, float(block.get("norm_radius", 1.0)))
    return obs
