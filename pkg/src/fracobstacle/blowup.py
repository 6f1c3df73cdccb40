"""Rescalings about free-boundary points, blow-up sequences and homogeneity fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ConfigurationError, DegenerateError
from .frequency import (AnalysisConfig, LocalField, classify_frequency, frequency_integrals,
                        frequency_record, slope_homogeneity)
from .grid import QuadratureSpec, WeightedGrid, gradient, weighted_integral
from .poly_extension import corrected_obstacle


@dataclass
class RescaledField:
    """u_{x0,r}(y) = r^{(n+a)/2} u_{x0}(x0 + r y) / H(r)^{1/2} on a unit-ball grid."""

    x0: tuple
    r: float
    grid: WeightedGrid
    values: np.ndarray
    grad: np.ndarray
    la_density: np.ndarray | None
    H_source: float  # H_{u_{x0}}(r), the normalization used
    scale: float  # r^{(n+a)/2} / H(r)^{1/2}
    interpolated: bool

    def local_field(self) -> LocalField:
        return LocalField(self.grid, self.values, grad=self.grad, la_density=self.la_density)

    def H1(self) -> float:
        return frequency_integrals(self.local_field(), np.zeros(self.grid.n), 1.0)["H"]

    def frequency(self, rho: float, config: AnalysisConfig | None = None) -> float:
        return frequency_record(self.local_field(), np.zeros(self.grid.n), rho, config).I

    def drift(self) -> float:
        """sup over the thin unit ball of |L_a phi_{x0,r}| / |t|^a."""
        if self.la_density is None:
            return 0.0
        pts = self.grid.thin_points()
        inside = np.linalg.norm(pts, axis=-1) <= 1.0
        return float(np.max(np.abs(self.la_density[0][inside])))


def unit_grid(n: int, a: float, cells: int, margin: int = 3) -> WeightedGrid:
    """Grid on [-R, R]^n x [0, R] with spacing 1/cells and R = 1 + margin/cells."""
    h = 1.0 / cells
    R = (cells + margin) * h
    return WeightedGrid.box(n, a, h, R=R)


def _interpolate(src: WeightedGrid, arr: np.ndarray, pts: np.ndarray) -> np.ndarray:
    axes = (src.t,) + tuple(src.axis_coords(i) for i in range(src.n))
    f = RegularGridInterpolator(axes, arr, method="linear", bounds_error=True)
    return f(pts)


def _resample(field: LocalField, x0, r: float, target: WeightedGrid):
    """Values, gradient and la density of field at x0 + r y over the target nodes."""
    src = field.grid
    n = src.n
    x0 = np.asarray(x0, dtype=float).reshape(n)
    coords = target.coords()
    mesh = np.broadcast_arrays(*coords)
    # physical points in the source array order (t, x_1, .., x_n)
    pts = np.stack([r * mesh[-1]] + [x0[i] + r * mesh[i] for i in range(n)], axis=-1)
    # exact node hits need no interpolation
    q = (pts[..., 1:] - src.lo) / src.h
    qt = pts[..., 0] / src.h
    aligned = (np.allclose(q, np.round(q), atol=1e-9) and np.allclose(qt, np.round(qt), atol=1e-9))
    if aligned:
        idx = (np.round(qt).astype(int),) + tuple(np.round(q[..., i]).astype(int) for i in range(n))
        vals = field.values[idx]
        grad = np.stack([field.grad[c][idx] for c in range(n + 1)])
        dens = None if field.la_density is None else field.la_density[idx]
    else:
        flat = pts.reshape(-1, n + 1)
        vals = _interpolate(src, field.values, flat).reshape(target.shape)
        grad = np.stack([_interpolate(src, field.grad[c], flat).reshape(target.shape)
                         for c in range(n + 1)])
        dens = (None if field.la_density is None
                else _interpolate(src, field.la_density, flat).reshape(target.shape))
    return vals, grad, dens, not aligned


def rescale_field(field: LocalField, x0, r: float, cells: int | None = None,
                  config: AnalysisConfig | None = None) -> RescaledField:
    """Rescale a field about the thin point x0 (the field is already u_{x0})."""
    config = config or AnalysisConfig()
    src = field.grid
    n, a = src.n, src.a
    H = frequency_integrals(field, x0, r, min_cells=4.0)["H"]
    if not H > config.eps_H:
        raise DegenerateError(f"H = {H:.3e} at r = {r:.4g}: rescaling undefined")
    cells = cells or max(int(round(r / src.h)), 4)
    target = unit_grid(n, a, cells)
    vals, grad, dens, interp = _resample(field, x0, r, target)
    c = r ** ((n + a) / 2) / math.sqrt(H)
    # y-derivatives pick up a factor r; L_a in y picks up r^2 on the density
    return RescaledField(tuple(np.ravel(x0).tolist()), r, target, c * vals, c * r * grad,
                         None if dens is None else c * r * r * dens, H, c, interp)


def rescale(solution, x0, r: float, cells: int | None = None,
            config: AnalysisConfig | None = None) -> RescaledField:
    """u_{x0,r} for a solved problem (u_{x0} built from the obstacle's Taylor data)."""
    config = config or AnalysisConfig()
    margin = 4
    f = LocalField.corrected(solution, x0, r * (1 + 4 / max(cells or 16, 4)) + 2 * solution.grid.h, margin)
    return rescale_field(f, x0, r, cells, config)


# --------------------------------------------------------------------------
# distances, homogeneity and spine


def h1_distance(f1: RescaledField | LocalField, f2: RescaledField | LocalField, radius: float = 0.5) -> float:
    """Weighted H^1 distance on B_radius(0) of two fields on the same grid."""
    g1 = f1.grid
    if g1.shape != f2.grid.shape or abs(g1.h - f2.grid.h) > 1e-15:
        raise ConfigurationError("fields must live on the same grid")
    dv = f1.values - f2.values
    dg = f1.grad - f2.grad
    dens = dv * dv + np.sum(dg * dg, axis=0)
    spec = QuadratureSpec(tuple([0.0] * g1.n), radius, "indicator")
    return math.sqrt(max(weighted_integral(g1, dens, spec), 0.0))


def homogeneity_fit(field: LocalField | RescaledField, radii=None, center=None,
                    min_cells: float = 8.0) -> tuple[float, float]:
    """lambda from the slope of log H against log r (n + a + 2 lambda), and the max misfit."""
    if isinstance(field, RescaledField):
        field = field.local_field()
    grid = field.grid
    center = np.zeros(grid.n) if center is None else center
    if radii is None:
        radii = [1.0, 0.75, 0.5, 0.375, 0.25]
        radii = [r for r in radii if r >= min_cells * grid.h]
    Hs = []
    for r in radii:
        H = frequency_integrals(field, center, r, min_cells=2.0)["H"]
        if not H > 0:
            raise DegenerateError(f"H vanishes at r = {r:.4g}")
        Hs.append(H)
    lam, resid = slope_homogeneity(radii, Hs, grid.n, grid.a)
    return lam, resid


def spine_estimate(field: LocalField | RescaledField, eps_spine: float = 1e-6, radius: float = 1.0):
    """Eigen-decomposition of the horizontal Gram matrix int d_i w d_j w dm over B_radius.

    Returns (basis, dimension, eigenvalues); basis columns are the directions
    with eigenvalue <= eps_spine * trace.
    """
    if isinstance(field, RescaledField):
        field = field.local_field()
    grid = field.grid
    n = grid.n
    spec = QuadratureSpec(tuple([0.0] * n), radius, "indicator")
    M = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            M[i, j] = M[j, i] = weighted_integral(grid, field.grad[i] * field.grad[j], spec)
    vals, vecs = np.linalg.eigh(M)
    tr = float(np.trace(M))
    keep = vals <= eps_spine * tr if tr > 0 else np.ones(n, dtype=bool)
    return vecs[:, keep], int(np.count_nonzero(keep)), vals


@dataclass
class HomogeneousProfile:
    w: RescaledField | LocalField
    lam: float
    residual: float
    spine: np.ndarray  # columns, vectors in R^n (the thin hyperplane)
    spine_dim: int
    tag: str  # H^top or H^low
    frequency_class: str

    def as_dict(self):
        return {"lambda": self.lam, "residual": self.residual, "spine_dim": self.spine_dim,
                "spine": self.spine.T.tolist(), "class": self.tag,
                "frequency_class": self.frequency_class}


def homogeneous_profile(w, s: float, eps_spine: float = 1e-6, class_tol: float = 0.05) -> HomogeneousProfile:
    grid = w.grid
    lam, resid = homogeneity_fit(w)
    basis, dim, _ = spine_estimate(w, eps_spine)
    tag = "H^top" if dim == grid.n - 1 else "H^low"
    fc = str(classify_frequency(lam, s, class_tol)) if lam > 0 else "Other"
    return HomogeneousProfile(w, lam, resid, basis, dim, tag, fc)


@dataclass
class BlowupReport:
    center: tuple
    radii: list
    distances: list  # H^1(B_1/2) distance between consecutive rescalings
    frequencies: list  # I of each rescaling at radius 1/2 (= I_{u_x0}(r/2))
    drifts: list
    drift_exponent: float  # slope of log drift vs log r
    converged: bool
    degenerate: bool
    limit: HomogeneousProfile | None
    notes: list = field(default_factory=list)

    def as_dict(self):
        out = {"center": list(self.center), "radii": self.radii, "distances": self.distances,
               "frequencies": self.frequencies, "drifts": self.drifts,
               "drift_exponent": self.drift_exponent, "converged": self.converged,
               "degenerate": self.degenerate, "notes": self.notes}
        if self.limit is not None:
            out.update({"lambda": self.limit.lam, "spine_dim": self.limit.spine_dim,
                        "class": self.limit.tag, "frequency_class": self.limit.frequency_class})
        return out


def blowup_sequence(solution, x0, radii, config: AnalysisConfig | None = None, cells: int = 32,
                    eps_blowup: float = 1e-2, tail: int = 2, eps_spine: float = 1e-6) -> BlowupReport:
    """Rescale at each radius onto one unit grid and test the Cauchy tail.

    The limit candidate is the smallest-radius rescaling.
    """
    config = config or AnalysisConfig()
    radii = sorted(radii, reverse=True)
    if len(radii) < 2:
        raise ConfigurationError("a blow-up sequence needs at least two radii")
    center = tuple(np.ravel(x0).tolist())
    field = LocalField.corrected(solution, x0, radii[0] * (1 + 4 / cells) + 2 * solution.grid.h, 4)
    scaled, notes = [], []
    degenerate = False
    for r in radii:
        try:
            scaled.append(rescale_field(field, x0, r, cells, config))
        except DegenerateError as exc:
            degenerate = True
            notes.append(str(exc))
            break
    dists = [h1_distance(scaled[i], scaled[i + 1]) for i in range(len(scaled) - 1)]
    freqs = []
    for w in scaled:
        try:
            freqs.append(w.frequency(0.5, config))
        except DegenerateError:
            freqs.append(math.nan)
    drifts = [w.drift() for w in scaled]
    rr = np.array([w.r for w in scaled])
    dd = np.array(drifts)
    ok = dd > 0
    expo = (float(np.polyfit(np.log(rr[ok]), np.log(dd[ok]), 1)[0]) if np.count_nonzero(ok) >= 2
            else math.nan)
    converged = (not degenerate and len(dists) >= tail and all(d < eps_blowup for d in dists[-tail:]))
    limit = None
    if scaled and not degenerate:
        try:
            limit = homogeneous_profile(scaled[-1], solution.problem.s, eps_spine)
        except DegenerateError as exc:
            notes.append(str(exc))
    return BlowupReport(center, [w.r for w in scaled], dists, freqs, drifts, expo, converged,
                        degenerate, limit, notes)


# --------------------------------------------------------------------------
# almost homogeneity and rigidity


def J_value(solution, x0, r: float, config: AnalysisConfig, field: LocalField | None = None) -> float:
    field = field or LocalField.corrected(solution, x0, r)
    return frequency_record(field, x0, r, config).J


def ray_homogenize(w: RescaledField, lam: float, inner: float = 0.25, outer: float = 1.0,
                   nodes: int = 8) -> RescaledField:
    """w_hom(y) = |y|^lam * mean over tau in [inner, outer] of w(tau y/|y|) tau^{-lam}.

    The mean is a Gauss-Legendre rule in tau. Gradients are finite differences.
    """
    grid = w.grid
    n = grid.n
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    taus = 0.5 * (outer - inner) * gx + 0.5 * (outer + inner)
    wts = 0.5 * gw  # normalised to mean
    mesh = np.broadcast_arrays(*grid.coords())
    pos = np.stack(mesh, axis=-1)  # (x_1..x_n, t)
    rho = np.linalg.norm(pos, axis=-1)
    safe = np.where(rho > 0, rho, 1.0)
    omega = pos / safe[..., None]
    acc = np.zeros(grid.shape)
    for tau, wt in zip(taus, wts):
        p = tau * omega
        pts = np.concatenate([p[..., -1:], p[..., :-1]], axis=-1).reshape(-1, n + 1)
        acc += wt * _interpolate(grid, w.values, pts).reshape(grid.shape) / tau ** lam
    vals = np.where(rho > 0, rho ** lam * acc, 0.0)
    return RescaledField(w.x0, w.r, grid, vals, gradient(grid, vals), None, w.H_source, w.scale, True)


def almost_homogeneity_test(solution, x0, rho: float, eta: float, config: AnalysisConfig | None = None,
                            closeness: bool = False, cells: int = 32, radius: float = 0.25) -> dict:
    """gap = J(rho/2) - J(rho/4) <= eta; optionally the H^1(B_radius) distance of u_{x0,rho}
    to its ray homogenization."""
    config = config or AnalysisConfig()
    field = LocalField.corrected(solution, x0, rho * (1 + 4 / cells) + 2 * solution.grid.h, 4)
    J2 = frequency_record(field, x0, rho / 2, config).J
    J4 = frequency_record(field, x0, rho / 4, config).J
    gap = J2 - J4
    out = {"center": tuple(np.ravel(x0).tolist()), "rho": rho, "J_half": J2, "J_quarter": J4,
           "gap": gap, "almost_homogeneous": bool(gap <= eta)}
    if closeness:
        w = rescale_field(field, x0, rho, cells, config)
        lam, _ = homogeneity_fit(w)
        wh = ray_homogenize(w, lam)
        out["lambda"] = lam
        out["distance"] = h1_distance(w, wh, radius)
    return out


def rigidity_diag(solution, x0, z_points, rho: float, tau: float, eta: float,
                  config: AnalysisConfig | None = None) -> dict:
    """Evaluate both horns of the rigidity dichotomy over Z-points of B'_{rho/2}(x0).

    (i)  max |J_{u_x}(rho/2) - J_{u_x0}(rho/2)| <= tau;
    (ii) points y with J_{u_y}(rho/8) - J_{u_y}(rho/16) <= eta lie within tau*rho of an
         (n-2)-dimensional linear subspace through x0. For n = 2 that subspace is {x0};
         for n = 1 it is empty, so horn (ii) holds only without qualifying points.
    The best-fit affine (n-2)-plane (barycenter for n = 2) distance is reported too.
    """
    config = config or AnalysisConfig()
    x0 = np.asarray(x0, dtype=float).ravel()
    n = x0.size
    pts = np.asarray(z_points, dtype=float).reshape(-1, n)
    pts = pts[np.linalg.norm(pts - x0, axis=1) < rho / 2]
    if len(pts) == 0:
        return {"count": 0}
    J0 = J_value(solution, x0, rho / 2, config)
    lhs, qualifying = [], []
    for y in pts:
        f = LocalField.corrected(solution, y, rho / 2)
        lhs.append(abs(frequency_record(f, y, rho / 2, config).J - J0))
        gap = (frequency_record(f, y, rho / 8, config).J - frequency_record(f, y, rho / 16, config).J)
        if gap <= eta:
            qualifying.append(y)
    horn_i = max(lhs) <= tau
    q = np.array(qualifying).reshape(-1, n)
    if len(q) == 0:
        dist_lin = dist_aff = 0.0
    elif n == 1:
        dist_lin = dist_aff = math.inf
    elif n == 2:
        dist_lin = float(np.max(np.linalg.norm(q - x0, axis=1)))
        dist_aff = float(np.max(np.linalg.norm(q - q.mean(axis=0), axis=1)))
    else:
        raise ConfigurationError("rigidity diagnostics support n <= 2")
    horn_ii = dist_lin < tau * rho
    return {"count": int(len(pts)), "horn_i_lhs": float(max(lhs)), "horn_i": bool(horn_i),
            "qualifying": int(len(q)), "max_distance": dist_lin, "max_distance_affine": dist_aff,
            "horn_ii": bool(horn_ii), "dichotomy_holds": bool(horn_i or horn_ii)}
