"""Homogeneous global solutions used as fixtures.

Polynomial ones are even extensions E_{2m}[x_1^{2m}]. The (1+s)-homogeneous
solution is u = rho^{1+s} Theta(theta) in the (x_1, t) plane, with theta
measured from the positive x_1 axis; the angular profile solves

    Theta'' + a cot(theta) Theta' + lam (lam + a) Theta = 0,

regular at theta = 0 (no flux where u > 0) and vanishing at theta = pi
(the contact ray).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConfigurationError
from .poly_extension import extend_homogeneous
from .polynomial import Polynomial


@dataclass
class ReferenceSolution:
    tag: str  # HomogeneousEven2m, RegularOnePlusS or AHarmonicPoly
    lam: float
    s: float
    n: int
    evaluator: Callable
    polynomial: Polynomial | None = None
    info: dict | None = None

    def __call__(self, *coords):
        """Evaluate on broadcastable coordinates (x_1, ..., x_n, t)."""
        return self.evaluator(*coords)

    def sample(self, grid) -> np.ndarray:
        if grid.n != self.n:
            raise ConfigurationError("grid dimension does not match the reference")
        return np.broadcast_to(self.evaluator(*grid.coords()), grid.shape).astype(float).copy()


@dataclass
class AngularProfile:
    s: float
    lam: float
    theta0: float
    theta1: float
    dense: object
    end_value: float  # extrapolated Theta(pi): zero for a genuine solution
    end_slope: float  # coefficient of (pi - theta)^{1-a} near pi

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        a = 1.0 - 2.0 * self.s
        th = np.clip(theta, self.theta0, self.theta1)
        out = self.dense(th.ravel())[0].reshape(th.shape)
        near = theta > self.theta1
        if np.any(near):
            out = np.where(near, self.end_value + self.end_slope * np.clip(math.pi - theta, 0, None) ** (1 - a), out)
        small = theta < self.theta0
        if np.any(small):
            mu = self.lam * (self.lam + a)
            out = np.where(small, 1.0 - mu * theta ** 2 / (2 * (1 + a)), out)
        return out


def angular_profile(s: float, lam: float | None = None, theta0: float = 1e-4,
                    end_gap: float = 1e-7) -> AngularProfile:
    """Integrate the angular equation from a series start at theta0 to pi - end_gap."""
    if not 0 < s < 1:
        raise ConfigurationError("s must lie in (0, 1)")
    a = 1.0 - 2.0 * s
    lam = 1.0 + s if lam is None else float(lam)
    mu = lam * (lam + a)

    def rhs(th, y):
        return [y[1], -a * y[1] / math.tan(th) - mu * y[0]]

    # series Theta = 1 + c2 th^2 + c4 th^4, from cot th = 1/th - th/3 - ...
    c2 = -mu / (2 * (1 + a))
    c4 = -(mu * c2 - 2 * a * c2 / 3) / (4 * (3 + a))
    y0 = [1 + c2 * theta0 ** 2 + c4 * theta0 ** 4, 2 * c2 * theta0 + 4 * c4 * theta0 ** 3]
    theta1 = math.pi - end_gap
    sol = solve_ivp(rhs, (theta0, theta1), y0, method="DOP853", rtol=1e-12, atol=1e-14,
                    dense_output=True)
    if not sol.success:
        raise ConfigurationError(f"angular integration failed: {sol.message}")
    # Theta ~ alpha + beta (pi - theta)^{1-a} near pi: fit from two gaps
    e1, e2 = 1e-4, end_gap
    v1 = float(sol.sol(math.pi - e1)[0])
    v2 = float(sol.sol(theta1)[0])
    p1, p2 = e1 ** (1 - a), e2 ** (1 - a)
    beta = (v1 - v2) / (p1 - p2)
    alpha = v2 - beta * p2
    return AngularProfile(s, lam, theta0, theta1, sol.sol, alpha, beta)


def shoot_regular_exponent(s: float, bracket=(0.3, 0.9)) -> float:
    """Exponent lam in (1, 2) whose profile vanishes at pi (checks lam = 1 + s)."""
    from scipy.optimize import brentq

    def end(lam):
        return angular_profile(s, lam, end_gap=1e-8).end_value

    lo, hi = 1 + bracket[0] * s, 1 + s + bracket[1] * (1 - s)
    return brentq(end, lo, hi, xtol=1e-12)


def regular_reference(s: float, n: int = 1) -> ReferenceSolution:
    prof = angular_profile(s)

    def ev(*coords):
        x1, t = coords[0], coords[-1]
        rho = np.sqrt(x1 * x1 + t * t)
        th = np.arctan2(np.abs(t), x1)
        return rho ** prof.lam * prof(th)

    return ReferenceSolution("RegularOnePlusS", 1.0 + s, s, n, ev,
                             info={"end_value": prof.end_value})


def polynomial_reference(p: Polynomial, s: float, tag: str = "AHarmonicPoly") -> ReferenceSolution:
    E = extend_homogeneous(p, s, strict=False)

    def ev(*coords):
        return E.evaluate_on(list(coords))

    lam = float(p.degree) if p.is_homogeneous() else math.nan
    return ReferenceSolution(tag, lam, s, p.arity, ev, polynomial=E)


def reference_library(s: float, lam, n: int = 1) -> ReferenceSolution:
    """lam = 2m gives E_{2m}[x_1^{2m}]; lam = 1 + s (or 'regular') the regular profile."""
    if not 0 < s < 1:
        raise ConfigurationError("s must lie in (0, 1)")
    if isinstance(lam, str):
        if lam != "regular":
            raise ConfigurationError(f"unsupported homogeneity {lam!r}")
        return regular_reference(s, n)
    lam = float(lam)
    if abs(lam - (1 + s)) < 1e-12:
        return regular_reference(s, n)
    m = lam / 2
    if lam > 0 and abs(m - round(m)) < 1e-12:
        p = Polynomial.monomial((int(round(lam)),) + (0,) * (n - 1))
        return polynomial_reference(p, s, tag="HomogeneousEven2m")
    raise ConfigurationError(f"unsupported homogeneity {lam}; use 2m or 1+s")
