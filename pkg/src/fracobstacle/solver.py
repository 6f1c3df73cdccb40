"""Projected SOR for the discrete thin-obstacle problem.

The unknown lives on the half grid with Dirichlet data on the box faces and
the top row. Off the thin row each node relaxes towards the stencil average;
on the thin row the relaxed value is projected onto {u >= phi}. Sweeps use a
red-black ordering, so every half-sweep is a set of independent local solves.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConfigurationError, IterationLimitError
from .grid import WeightedGrid, diagonal, dirichlet_energy, flux_residual, weighted_flux_trace
from .obstacles import Obstacle

log = logging.getLogger(__name__)


@njit(cache=True)
def _sweep2(u, phi, kh, kv, omega, color, project):
    M1, N = u.shape
    big = 0.0
    for j in range(M1 - 1):
        c = kh[j]
        up = kv[j]
        dn = kv[j - 1] if j > 0 else 0.0
        diag = 2.0 * c + up + dn
        start = 1 + (color + 1 + j) % 2
        for i in range(start, N - 1, 2):
            acc = c * (u[j, i - 1] + u[j, i + 1]) + up * u[j + 1, i]
            if j > 0:
                acc += dn * u[j - 1, i]
            old = u[j, i]
            new = old + omega * (acc / diag - old)
            if j == 0 and project and new < phi[i]:
                new = phi[i]
            d = abs(new - old)
            if d > big:
                big = d
            u[j, i] = new
    return big


@njit(cache=True)
def _sweep3(u, phi, kh, kv, omega, color, project):
    M1, N1, N2 = u.shape
    big = 0.0
    for j in range(M1 - 1):
        c = kh[j]
        up = kv[j]
        dn = kv[j - 1] if j > 0 else 0.0
        diag = 4.0 * c + up + dn
        for i in range(1, N1 - 1):
            start = 1 + (color + 1 + j + i) % 2
            for k in range(start, N2 - 1, 2):
                acc = c * (u[j, i - 1, k] + u[j, i + 1, k] + u[j, i, k - 1] + u[j, i, k + 1])
                acc += up * u[j + 1, i, k]
                if j > 0:
                    acc += dn * u[j - 1, i, k]
                old = u[j, i, k]
                new = old + omega * (acc / diag - old)
                if j == 0 and project and new < phi[i, k]:
                    new = phi[i, k]
                d = abs(new - old)
                if d > big:
                    big = d
                u[j, i, k] = new
    return big


def sweep(grid: WeightedGrid, u: np.ndarray, phi_thin: np.ndarray, omega: float,
          project: bool = True) -> float:
    """One red-black PSOR sweep in place; returns the largest nodal update."""
    fn = _sweep2 if grid.n == 1 else _sweep3
    d0 = fn(u, phi_thin, grid.kappa_h, grid.kappa_v, omega, 0, project)
    d1 = fn(u, phi_thin, grid.kappa_h, grid.kappa_v, omega, 1, project)
    return max(d0, d1)


@dataclass
class SolverOptions:
    omega: float | str = "auto"
    tol: float = 1e-9
    max_sweeps: int = 200000
    record_energy: bool = False
    cascade: int = 4  # number of coarser levels solved first for the initial guess
    window: int = 25  # sweeps used to estimate the contraction factor

    def validate(self):
        if not (self.omega == "auto" or (isinstance(self.omega, (int, float)) and 0 < self.omega < 2)):
            raise ConfigurationError(f"omega must be in (0, 2) or 'auto', got {self.omega!r}")
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")
        if int(self.max_sweeps) < 1:
            raise ConfigurationError("max_sweeps must be positive")


@dataclass
class ObstacleProblem:
    """Discrete thin-obstacle problem on a grid.

    boundary: None (zero data) or a callable f(x_1, .., x_n, t) giving the
    Dirichlet values on the box faces and top row.
    """

    grid: WeightedGrid
    obstacle: Obstacle
    boundary: object = None
    options: SolverOptions = field(default_factory=SolverOptions)
    k: int = 2

    @property
    def s(self) -> float:
        return self.grid.s

    @property
    def a(self) -> float:
        return self.grid.a

    def obstacle_thin(self, grid: WeightedGrid | None = None) -> np.ndarray:
        grid = grid or self.grid
        return np.ascontiguousarray(self.obstacle(grid.thin_points()))

    def boundary_values(self, grid: WeightedGrid | None = None) -> np.ndarray:
        grid = grid or self.grid
        if self.boundary is None:
            return np.zeros(grid.shape)
        return grid.sample(self.boundary)

    def check(self):
        self.options.validate()
        g = self.boundary_values()
        phi = self.obstacle_thin()
        bmask = self.grid.boundary_mask()[0]
        if np.any(g[0][bmask] < phi[bmask] - 1e-12):
            raise ConfigurationError("boundary data lies below the obstacle on the thin set")


@dataclass
class ComplementarityReport:
    max_violation: float  # max (phi - u)_+ on the thin row
    max_positive_residual: float  # max positive normalized residual on the thin row
    max_offcontact_residual: float  # max |normalized residual| at thin nodes off contact
    max_product: float  # max |(u - phi) * normalized residual| on the thin row
    max_interior_residual: float  # max |normalized residual| off the thin row
    max_flux_trace_positive: float  # max positive weighted flux trace

    def as_dict(self):
        return dict(self.__dict__)


@dataclass
class Solution:
    problem: ObstacleProblem
    u: np.ndarray
    sweeps: int
    update: float
    residual: float
    report: ComplementarityReport
    energies: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def grid(self) -> WeightedGrid:
        return self.problem.grid

    def thin_gap(self) -> np.ndarray:
        return self.u[0] - self.problem.obstacle_thin()


def auto_omega(grid: WeightedGrid) -> float:
    """Optimal SOR factor for the Laplacian on the same box (reflected vertically)."""
    lengths = [grid.h * (m - 1) for m in grid.thin_shape] + [2 * grid.h * grid.M]
    d = grid.n + 1
    rho = 1.0 - (math.pi * grid.h) ** 2 * sum(1.0 / L ** 2 for L in lengths) / (2 * d)
    return 2.0 / (1.0 + math.sqrt(max(1.0 - rho * rho, 0.0)))


def complementarity(grid: WeightedGrid, u: np.ndarray, phi: np.ndarray, contact_tol: float):
    shp = (-1,) + (1,) * grid.n
    res = flux_residual(grid, u) / diagonal(grid).reshape(shp)
    inner = np.zeros(grid.thin_shape, dtype=bool)
    inner[tuple(slice(1, -1) for _ in range(grid.n))] = True
    gap = u[0] - phi
    r0 = res[0]
    off = inner & (gap > contact_tol)
    ft = weighted_flux_trace(grid, u)
    return ComplementarityReport(
        max_violation=float(max(0.0, np.max(-gap[inner]))),
        max_positive_residual=float(max(0.0, np.max(r0[inner]))),
        max_offcontact_residual=float(np.max(np.abs(r0[off]), initial=0.0)),
        max_product=float(np.max(np.abs(gap[inner] * r0[inner]))),
        max_interior_residual=float(np.max(np.abs(res[1:-1]), initial=0.0)),
        max_flux_trace_positive=float(max(0.0, np.max(ft[inner]))),
    )


def _prolong(coarse: np.ndarray, fine_shape) -> np.ndarray:
    """Multilinear interpolation from a grid with twice the spacing."""
    out = coarse
    for ax, m in enumerate(fine_shape):
        c = np.moveaxis(out, ax, 0)
        f = np.empty((m,) + c.shape[1:])
        f[0::2] = c
        f[1::2] = 0.5 * (c[:-1] + c[1:])
        out = np.moveaxis(f, 0, ax)
    return out


def initial_guess(problem: ObstacleProblem, kind: str = "zero", grid: WeightedGrid | None = None):
    grid = grid or problem.grid
    g = problem.boundary_values(grid)
    phi = problem.obstacle_thin(grid)
    u = g.copy()
    inner = ~grid.boundary_mask()
    if kind == "zero":
        u[inner] = 0.0
    elif kind == "high":
        top = max(float(np.max(phi)), float(np.max(g)), 0.0) + 1.0
        u[inner] = top
    elif kind == "boundary":
        pass
    else:
        raise ConfigurationError(f"unknown initial guess {kind!r}")
    u[0] = np.where(inner[0], np.maximum(u[0], phi), u[0])
    return u


def solve(problem: ObstacleProblem, u0: np.ndarray | str | None = None,
          contact_tol: float | None = None) -> Solution:
    """Solve the discrete variational inequality by projected SOR.

    Stops when the estimated distance to the fixed point, max update * q/(1-q)
    with q the observed contraction factor, and the normalized residuals all
    fall below tol. Raises IterationLimitError otherwise.
    """
    problem.check()
    opts = problem.options
    grid = problem.grid
    t_start = time.perf_counter()
    if isinstance(u0, np.ndarray):
        u = np.array(u0, dtype=float)
        if u.shape != grid.shape:
            raise ConfigurationError("initial guess has the wrong shape")
    elif opts.cascade > 0 and (u0 is None or u0 == "cascade"):
        u = _cascade_guess(problem)
    else:
        u = initial_guess(problem, u0 or "zero")
    g = problem.boundary_values()
    bmask = grid.boundary_mask()
    u[bmask] = g[bmask]
    phi = problem.obstacle_thin()
    u[0] = np.where(bmask[0], u[0], np.maximum(u[0], phi))
    u = np.ascontiguousarray(u)
    omega = auto_omega(grid) if opts.omega == "auto" else float(opts.omega)
    if contact_tol is None:
        contact_tol = 1e-3 * grid.h ** min(2 * grid.s, 1.0)

    energies = [dirichlet_energy(grid, u)] if opts.record_energy else []
    history = []
    update = math.inf
    est = math.inf
    for it in range(1, int(opts.max_sweeps) + 1):
        update = sweep(grid, u, phi, omega)
        history.append(update)
        if opts.record_energy:
            energies.append(dirichlet_energy(grid, u))
        w = opts.window
        if update == 0.0:
            est = 0.0
        elif len(history) > w and history[-1 - w] > 0:
            q = (update / history[-1 - w]) ** (1.0 / w)
            est = update * q / (1.0 - q) if q < 1.0 else math.inf
        if update < opts.tol and est < opts.tol:
            rep = complementarity(grid, u, phi, contact_tol)
            if max(rep.max_positive_residual, rep.max_offcontact_residual,
                   rep.max_interior_residual, rep.max_product) <= opts.tol:
                return Solution(problem, u, it, update, max(rep.max_interior_residual,
                                rep.max_offcontact_residual), rep, energies,
                                time.perf_counter() - t_start)
    rep = complementarity(grid, u, phi, contact_tol)
    raise IterationLimitError(
        f"no convergence after {opts.max_sweeps} sweeps (last update {update:.3e})",
        sweeps=int(opts.max_sweeps), update=update, residual=rep.max_interior_residual, field=u)


def _cascade_guess(problem: ObstacleProblem) -> np.ndarray:
    grid = problem.grid
    levels = []
    gcur = grid
    for _ in range(problem.options.cascade):
        shape = gcur.shape
        if any((m - 1) % 2 for m in shape) or min(shape) < 9:
            break
        gcur = WeightedGrid(gcur.n, gcur.a, 2 * gcur.h, tuple((m - 1) // 2 + 1 for m in shape), gcur.lo)
        levels.append(gcur)
    if not levels:
        return initial_guess(problem, "zero")
    opts = problem.options
    u = None
    for gl in reversed(levels):
        sub = ObstacleProblem(gl, problem.obstacle, problem.boundary,
                              SolverOptions(opts.omega, opts.tol, opts.max_sweeps), problem.k)
        guess = initial_guess(sub) if u is None else _prolong(u, gl.shape)
        u = solve(sub, guess).u
    return _prolong(u, grid.shape)


def corrected_field(solution: Solution, x0, window=None):
    """u_{x0} = u - phi_{x0} on the whole grid or on a window (slices, subgrid)."""
    from .poly_extension import corrected_obstacle

    prob = solution.problem
    cobs = corrected_obstacle(prob.obstacle, x0, prob.k, prob.s)
    if window is None:
        grid, vals = prob.grid, solution.u
    else:
        sl, grid = window
        vals = solution.u[sl]
    return vals - cobs.evaluate_on(grid.coords()), grid, cobs


def la_residual_report(solution: Solution, centers=None, samples: int = 200, seed: int = 0,
                       contact_tol: float | None = None) -> dict:
    """Residual summary of a solved (or sampled) field.

    Reports the largest interior normalized residual off the thin row, the
    signed weighted flux trace on the thin set (largest positive value and
    largest magnitude off contact), and the worst ratio
    |L_a phi_{x0}| / (|t|^a |x' - x0|^{k-1}) over random thin points around
    the given centres (default: random thin nodes inside the obstacle's
    smooth region).
    """
    from .poly_extension import corrected_obstacle

    grid = solution.grid
    prob = solution.problem
    u = solution.u
    if contact_tol is None:
        contact_tol = 1e-3 * grid.h ** min(2 * grid.s, 1.0)
    shp = (-1,) + (1,) * grid.n
    res = flux_residual(grid, u) / diagonal(grid).reshape(shp)
    inner = np.zeros(grid.thin_shape, dtype=bool)
    inner[tuple(slice(1, -1) for _ in range(grid.n))] = True
    ft = weighted_flux_trace(grid, u)
    gap = solution.thin_gap()
    off = inner & (gap > contact_tol)

    rng = np.random.default_rng(seed)
    obs = prob.obstacle
    rad = min(float(obs.smooth_radius), float(np.min(-grid.lo)))
    ctr = np.zeros(grid.n) if not obs.smooth_center else np.asarray(obs.smooth_center, dtype=float)
    if centers is None:
        centers = ctr + _ball_points(rng, grid.n, 0.5 * rad, 4)
    worst = 0.0
    k = prob.k
    for x0 in np.atleast_2d(centers):
        cobs = corrected_obstacle(obs, x0, k, prob.s)
        pts = ctr + _ball_points(rng, grid.n, 0.95 * rad, samples)
        dist = np.linalg.norm(pts - x0, axis=1)
        keep = dist > 1e-12
        ratio = np.abs(cobs.La_density(pts[keep])) / dist[keep] ** (k - 1)
        worst = max(worst, float(np.max(ratio, initial=0.0)))
    return {
        "max_interior_residual": float(np.max(np.abs(res[1:-1]), initial=0.0)),
        "max_flux_trace_positive": float(max(0.0, np.max(ft[inner]))),
        "max_flux_trace_offcontact": float(np.max(np.abs(ft[off]), initial=0.0)),
        "La_obstacle_ratio": worst,
        "La_obstacle_bound_ok": worst <= 1.0 + 1e-9,
    }


def _ball_points(rng, n, radius, count):
    v = rng.normal(size=(count, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius * rng.uniform(0, 1, (count, 1)) ** (1.0 / n)
