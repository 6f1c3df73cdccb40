"""Taylor polynomials of obstacles and their even L_a-harmonic extensions.

With a = 1 - 2s and L_a q = div(|t|^a grad q) (t the last variable), a
homogeneous polynomial p of degree l has a unique extension
E_l[p] = sum_j p_{2j}(x') t^{2j}, even in t, with trace p and L_a E_l[p] = 0.
The coefficients follow p_{2j} = -Lap' p_{2j-2} / (4 j (j - s)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .obstacles import Obstacle
from .polynomial import Polynomial, multi_indices


def _check_s(s: float) -> None:
    if not 0.0 < s < 1.0:
        raise ConfigurationError(f"s must lie in (0, 1), got {s}")


def taylor_poly(obstacle: Obstacle, x0, k: int) -> Polynomial:
    """Order-k Taylor polynomial of `obstacle` at x0, in the monomial basis about 0."""
    if k < 0:
        raise ConfigurationError("Taylor order must be nonnegative")
    if k > obstacle.max_order:
        raise ConfigurationError(f"obstacle provides derivatives up to order {obstacle.max_order}")
    x0 = np.asarray(x0, dtype=float).reshape(obstacle.n)
    terms = {}
    for alpha in multi_indices(obstacle.n, k):
        d = float(obstacle.derivative(alpha, x0))
        if d:
            terms[alpha] = d / math.prod(math.factorial(a) for a in alpha)
    # terms are coefficients of (x' - x0)^alpha
    return Polynomial(obstacle.n, terms).translate(x0)


def _taylor_at(obstacle: Obstacle, x0, x, k: int, shift=None) -> np.ndarray:
    """T_{k,x0}[D^shift phi](x) for paired rows of x0 and x, summed in (x - x0)."""
    n = obstacle.n
    shift = np.zeros(n, dtype=int) if shift is None else np.asarray(shift)
    d = x - x0
    out = np.zeros(len(x))
    for alpha in multi_indices(n, k):
        c = obstacle.derivative(tuple(np.asarray(alpha) + shift), x0)
        c = c / math.prod(math.factorial(a) for a in alpha)
        out += c * np.prod(d ** np.asarray(alpha), axis=1)
    return out


def taylor_remainders(obstacle: Obstacle, x0, x, k: int, atol: float = 1e-13):
    """Remainders of order-k Taylor expansions at paired points, relative to their bounds.

    Returns (q0, q1) with
      q0 = |T_{k,x0}[phi](x) - phi(x)| (k+1)! / |x - x0|^{k+1}
      q1 = sup_e |T_{k,x0}[d_e phi](x) - d_e phi(x)| / (2 |x - x0|^k)
    over horizontal unit vectors e (the sup is the Euclidean norm of the
    gradient remainder). For a C^{k+1}-normalized obstacle both are <= 1.
    `atol` is subtracted from each remainder to absorb round-off at close pairs.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = obstacle.n
    dist = np.linalg.norm(x - x0, axis=1)
    r0 = np.maximum(np.abs(_taylor_at(obstacle, x0, x, k) - obstacle(x)) - atol, 0.0)
    grad = np.zeros((len(x), n))
    for i in range(n):
        e = np.zeros(n, dtype=int)
        e[i] = 1
        grad[:, i] = _taylor_at(obstacle, x0, x, k, e) - obstacle.derivative(tuple(e), x)
    r1 = np.maximum(np.linalg.norm(grad, axis=1) - atol, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        q0 = np.where(dist > 0, r0 * math.factorial(k + 1) / dist ** (k + 1), 0.0)
        q1 = np.where(dist > 0, r1 / (2 * dist ** k), 0.0)
    return q0, q1


def extend_homogeneous(p: Polynomial, s: float, strict: bool = True) -> Polynomial:
    """Even L_a-harmonic extension of p to one more variable.

    With ``strict`` a non-homogeneous input is rejected; otherwise it is
    split into homogeneous parts and extended term by term.
    """
    _check_s(s)
    if not p.is_homogeneous():
        if strict:
            raise ConfigurationError("extend_homogeneous expects a homogeneous polynomial")
        return extend(p, s)
    return _extend(p, s)


def _extend(p: Polynomial, s: float) -> Polynomial:
    n = p.arity
    t2 = Polynomial.monomial((0,) * n + (2,))
    out = p.embed(n + 1)
    layer = p
    j = 1
    while True:
        layer = -layer.laplacian() / (4.0 * j * (j - s))
        if not len(layer):
            break
        tpow = t2 ** j
        out = out + layer.embed(n + 1) * tpow
        j += 1
    return out


def extend(p: Polynomial, s: float) -> Polynomial:
    """Extension of an arbitrary polynomial, by linearity over homogeneous parts."""
    _check_s(s)
    out = Polynomial.zero(p.arity + 1)
    for degree in range(p.degree + 1):
        part = p.homogeneous_part(degree)
        if len(part):
            out = out + _extend(part, s)
    return out


def extend_taylor(T: Polynomial, x0, s: float) -> Polynomial:
    """Extension of a Taylor polynomial centred at x0.

    Each homogeneous piece in powers of (x' - x0) is extended and recentred,
    using E[p(. - x0)](x) = E[p](x - x0).
    """
    _check_s(s)
    x0 = np.asarray(x0, dtype=float).reshape(T.arity)
    local = T.translate(-x0)  # coefficients in powers of (x' - x0)
    ext = extend(local, s)
    return ext.translate(np.append(x0, 0.0))


def apply_La_poly(q: Polynomial, a: float) -> Polynomial:
    """Polynomial r with div(|t|^a grad q) = |t|^a r away from t = 0.

    q must be even in the last variable, so that a/t * d_t q is polynomial.
    """
    if not -1.0 < a < 1.0:
        raise ConfigurationError(f"a must lie in (-1, 1), got {a}")
    last = q.arity - 1
    if not q.is_even_in(last):
        raise ConfigurationError("apply_La_poly needs a polynomial even in the last variable")
    out = q.laplacian(range(last))
    terms = {}
    for alpha, c in q.items():
        m = alpha[last]
        if m:
            beta = alpha[:last] + (m - 2,)
            terms[beta] = terms.get(beta, 0.0) + c * m * (m - 1 + a)
    return out + Polynomial(q.arity, terms)


@dataclass(frozen=True)
class CorrectedObstacle:
    """phi_{x0}(x) = phi(x') - T(x') + E[T](x), with T the order-k Taylor polynomial at x0."""

    obstacle: Obstacle
    x0: tuple
    k: int
    s: float
    taylor: Polynomial
    extension: Polynomial

    @property
    def a(self) -> float:
        return 1.0 - 2.0 * self.s

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xp = x[..., :-1]
        return self.obstacle(xp) - self.taylor(xp) + self.extension(x)

    def evaluate_on(self, coords) -> np.ndarray:
        """Evaluate on broadcastable coordinate arrays (x_1, ..., x_n, t)."""
        shape = np.broadcast_shapes(*[np.shape(c) for c in coords])
        thin = np.stack([np.broadcast_to(c, shape) for c in coords[:-1]], axis=-1)
        return (self.obstacle(thin) - self.taylor(thin)) + self.extension.evaluate_on(coords)

    def trace(self, xp) -> np.ndarray:
        xp = np.asarray(xp, dtype=float)
        return self(np.concatenate([xp, np.zeros(xp.shape[:-1] + (1,))], axis=-1))

    def La_density(self, xp) -> np.ndarray:
        """r(x') with L_a phi_{x0} = |t|^a r(x'); only the Taylor remainder contributes."""
        xp = np.asarray(xp, dtype=float)
        return self.obstacle.laplacian(xp) - self.taylor.laplacian()(xp)


def corrected_obstacle(obstacle: Obstacle, x0, k: int, s: float) -> CorrectedObstacle:
    _check_s(s)
    x0 = np.asarray(x0, dtype=float).reshape(obstacle.n)
    T = taylor_poly(obstacle, x0, k)
    return CorrectedObstacle(obstacle, tuple(x0.tolist()), k, s, T, extend_taylor(T, x0, s))
