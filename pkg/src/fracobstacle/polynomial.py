"""Sparse multivariate polynomials with real coefficients.

A polynomial is stored as a map from exponent tuples (multi-indices) to
coefficients. Arithmetic is exact term rewriting in double precision; no
symbolic simplification beyond collecting equal monomials.
"""

from __future__ import annotations

import itertools
import math
from typing import Iterable, Mapping

import numpy as np

MultiIndex = tuple[int, ...]


def multi_indices(arity: int, max_degree: int) -> list[MultiIndex]:
    """All multi-indices of the given arity with degree <= max_degree."""
    out = []
    for degree in range(max_degree + 1):
        out.extend(homogeneous_indices(arity, degree))
    return out


def homogeneous_indices(arity: int, degree: int) -> list[MultiIndex]:
    """All multi-indices of the given arity with degree exactly `degree`."""
    if arity == 0:
        return [()] if degree == 0 else []
    out = []
    for combo in itertools.combinations_with_replacement(range(arity), degree):
        alpha = [0] * arity
        for i in combo:
            alpha[i] += 1
        out.append(tuple(alpha))
    return sorted(set(out), reverse=True)


def factorial(alpha: MultiIndex) -> int:
    return math.prod(math.factorial(a) for a in alpha)


class Polynomial:
    """Polynomial in `arity` variables.

    Zero coefficients are dropped on construction, so two polynomials with
    the same terms compare equal term by term.
    """

    __slots__ = ("arity", "_terms")

    def __init__(self, arity: int, terms: Mapping[MultiIndex, float] | None = None):
        self.arity = int(arity)
        clean: dict[MultiIndex, float] = {}
        for alpha, c in (terms or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.arity or min(alpha, default=0) < 0:
                raise ValueError(f"bad multi-index {alpha} for arity {self.arity}")
            c = float(c)
            if c != 0.0:
                clean[alpha] = clean.get(alpha, 0.0) + c
        self._terms = {a: c for a, c in clean.items() if c != 0.0}

    # construction helpers -------------------------------------------------

    @classmethod
    def zero(cls, arity: int) -> "Polynomial":
        return cls(arity)

    @classmethod
    def constant(cls, arity: int, value: float) -> "Polynomial":
        return cls(arity, {(0,) * arity: value})

    @classmethod
    def monomial(cls, alpha: Iterable[int], coeff: float = 1.0) -> "Polynomial":
        alpha = tuple(alpha)
        return cls(len(alpha), {alpha: coeff})

    @classmethod
    def variable(cls, arity: int, axis: int) -> "Polynomial":
        alpha = [0] * arity
        alpha[axis] = 1
        return cls(arity, {tuple(alpha): 1.0})

    # inspection -----------------------------------------------------------

    @property
    def terms(self) -> dict[MultiIndex, float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def coeff(self, alpha: Iterable[int]) -> float:
        return self._terms.get(tuple(alpha), 0.0)

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(a) for a in self._terms), default=-1)

    def is_homogeneous(self) -> bool:
        return len({sum(a) for a in self._terms}) <= 1

    def homogeneous_part(self, degree: int) -> "Polynomial":
        return Polynomial(self.arity, {a: c for a, c in self._terms.items() if sum(a) == degree})

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def is_zero(self, rtol: float = 0.0, scale: float | None = None) -> bool:
        """True if every coefficient is <= rtol * scale in magnitude."""
        if scale is None:
            scale = self.max_abs_coeff()
        return all(abs(c) <= rtol * scale for c in self._terms.values())

    def is_even_in(self, axis: int) -> bool:
        return all(a[axis] % 2 == 0 for a in self._terms)

    def __len__(self) -> int:
        return len(self._terms)

    def __repr__(self) -> str:
        if not self._terms:
            return f"Polynomial({self.arity}, 0)"
        parts = []
        for alpha, c in sorted(self._terms.items(), key=lambda t: (-sum(t[0]), t[0])):
            mono = "*".join(f"x{i + 1}^{p}" if p > 1 else f"x{i + 1}"
                            for i, p in enumerate(alpha) if p)
            parts.append(f"{c:+.6g}" + (f"*{mono}" if mono else ""))
        return f"Polynomial({self.arity}, {' '.join(parts)})"

    # algebra --------------------------------------------------------------

    def _check(self, other: "Polynomial") -> None:
        if other.arity != self.arity:
            raise ValueError(f"arity mismatch: {self.arity} vs {other.arity}")

    def __add__(self, other: "Polynomial | float") -> "Polynomial":
        if not isinstance(other, Polynomial):
            other = Polynomial.constant(self.arity, other)
        self._check(other)
        terms = dict(self._terms)
        for a, c in other._terms.items():
            terms[a] = terms.get(a, 0.0) + c
        return Polynomial(self.arity, terms)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.arity, {a: -c for a, c in self._terms.items()})

    def __sub__(self, other: "Polynomial | float") -> "Polynomial":
        return self + (-other)

    def __rsub__(self, other: float) -> "Polynomial":
        return (-self) + other

    def __mul__(self, other: "Polynomial | float") -> "Polynomial":
        if not isinstance(other, Polynomial):
            return Polynomial(self.arity, {a: c * float(other) for a, c in self._terms.items()})
        self._check(other)
        terms: dict[MultiIndex, float] = {}
        for a, ca in self._terms.items():
            for b, cb in other._terms.items():
                ab = tuple(i + j for i, j in zip(a, b))
                terms[ab] = terms.get(ab, 0.0) + ca * cb
        return Polynomial(self.arity, terms)

    __rmul__ = __mul__

    def __truediv__(self, value: float) -> "Polynomial":
        return self * (1.0 / float(value))

    def __pow__(self, power: int) -> "Polynomial":
        out = Polynomial.constant(self.arity, 1.0)
        for _ in range(int(power)):
            out = out * self
        return out

    # calculus -------------------------------------------------------------

    def diff(self, axis: int, order: int = 1) -> "Polynomial":
        terms = {}
        for a, c in self._terms.items():
            if a[axis] < order:
                continue
            b = list(a)
            b[axis] -= order
            terms[tuple(b)] = c * math.perm(a[axis], order)
        return Polynomial(self.arity, terms)

    def derivative(self, alpha: MultiIndex) -> "Polynomial":
        out = self
        for axis, order in enumerate(alpha):
            if order:
                out = out.diff(axis, order)
        return out

    def laplacian(self, axes: Iterable[int] | None = None) -> "Polynomial":
        axes = range(self.arity) if axes is None else axes
        out = Polynomial.zero(self.arity)
        for i in axes:
            out = out + self.diff(i, 2)
        return out

    def gradient(self, axes: Iterable[int] | None = None) -> list["Polynomial"]:
        axes = range(self.arity) if axes is None else axes
        return [self.diff(i) for i in axes]

    # change of variables --------------------------------------------------

    def translate(self, shift: Iterable[float]) -> "Polynomial":
        """Return q with q(x) = self(x - shift), expanded about the origin."""
        shift = [float(v) for v in shift]
        if len(shift) != self.arity:
            raise ValueError("shift has wrong length")
        if not any(shift):
            return Polynomial(self.arity, self._terms)
        out: dict[MultiIndex, float] = {}
        for alpha, c in self._terms.items():
            # prod_i (x_i - s_i)^{a_i} = prod_i sum_b binom(a_i, b) x_i^b (-s_i)^{a_i - b}
            factors = []
            for a_i, s_i in zip(alpha, shift):
                factors.append([(b, math.comb(a_i, b) * (-s_i) ** (a_i - b)) for b in range(a_i + 1)])
            for combo in itertools.product(*factors):
                beta = tuple(b for b, _ in combo)
                out[beta] = out.get(beta, 0.0) + c * math.prod(w for _, w in combo)
        return Polynomial(self.arity, out)

    def scale_variables(self, factors: Iterable[float]) -> "Polynomial":
        """Return q with q(x) = self(factors * x)."""
        factors = [float(f) for f in factors]
        return Polynomial(self.arity, {a: c * math.prod(f ** p for f, p in zip(factors, a))
                                       for a, c in self._terms.items()})

    def embed(self, arity: int) -> "Polynomial":
        """View as a polynomial in more variables (new trailing variables absent)."""
        pad = (0,) * (arity - self.arity)
        return Polynomial(arity, {a + pad: c for a, c in self._terms.items()})

    def restrict_last(self, value: float = 0.0) -> "Polynomial":
        """Substitute the last variable by a constant, dropping it."""
        out: dict[MultiIndex, float] = {}
        for a, c in self._terms.items():
            w = c * (value ** a[-1] if a[-1] else 1.0)
            out[a[:-1]] = out.get(a[:-1], 0.0) + w
        return Polynomial(self.arity - 1, out)

    # evaluation -----------------------------------------------------------

    def __call__(self, points) -> np.ndarray:
        """Evaluate at points of shape (..., arity)."""
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1] != self.arity:
            raise ValueError(f"points have last dimension {pts.shape[-1]}, expected {self.arity}")
        out = np.zeros(pts.shape[:-1])
        if not self._terms:
            return out
        max_pow = [max(a[i] for a in self._terms) for i in range(self.arity)]
        powers = []
        for i in range(self.arity):
            xi = pts[..., i]
            pw = [np.ones_like(xi)]
            for _ in range(max_pow[i]):
                pw.append(pw[-1] * xi)
            powers.append(pw)
        for a, c in self._terms.items():
            term = c
            for i, p in enumerate(a):
                if p:
                    term = term * powers[i][p]
            out = out + term
        return out

    def evaluate_on(self, coords: list[np.ndarray]) -> np.ndarray:
        """Evaluate on broadcastable coordinate arrays, one per variable."""
        shape = np.broadcast_shapes(*[np.shape(c) for c in coords])
        out = np.zeros(shape)
        for a, c in self._terms.items():
            term = np.full(shape, c)
            for x, p in zip(coords, a):
                if p:
                    term = term * np.asarray(x) ** p
            out += term
        return out

    # serialization --------------------------------------------------------

    def to_json(self) -> list[dict]:
        return [{"alpha": list(a), "coeff": c}
                for a, c in sorted(self._terms.items(), key=lambda t: (-sum(t[0]), t[0]))]

    @classmethod
    def from_json(cls, arity: int, data: list[dict]) -> "Polynomial":
        return cls(arity, {tuple(d["alpha"]): d["coeff"] for d in data})

    def allclose(self, other: "Polynomial", rtol: float = 1e-12) -> bool:
        diff = self - other
        scale = max(self.max_abs_coeff(), other.max_abs_coeff(), 1e-300)
        return diff.is_zero(rtol, scale)
