"""Contact set, free boundary, growth filters, beta-numbers and tube volumes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize

from .errors import ConfigurationError, DegenerateError, ResolutionError
from .frequency import AnalysisConfig, LocalField, dyadic_radii, frequency_integrals
from .grid import gradient, weighted_flux_trace


@dataclass
class ContactGeometry:
    """Thin-grid masks of a solution.

    contact: u - phi below the contact threshold; free: contact nodes with a
    non-contact axis neighbour; critical: contact nodes where the tangential
    gradient of u - phi and the weighted flux trace are both small.
    growth: per free-boundary node, min over the dyadic panel of
    H(r) / r^{n+a+2(k+1-theta)} (nan where not computed).
    """

    contact: np.ndarray
    free: np.ndarray
    critical: np.ndarray
    points: np.ndarray  # thin-grid node coordinates, thin_shape + (n,)
    growth: np.ndarray
    config: AnalysisConfig
    thresholds: dict = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.contact.any()

    def free_points(self) -> np.ndarray:
        return self.points[self.free]

    def Z_mask(self, delta: float | None = None) -> np.ndarray:
        delta = self.config.delta if delta is None else delta
        with np.errstate(invalid="ignore"):
            return self.free & (self.growth >= delta)

    def Z_points(self, delta: float | None = None) -> np.ndarray:
        return self.points[self.Z_mask(delta)]

    def Gamma_theta_mask(self) -> np.ndarray:
        """Union of the Z masks over the configured delta ladder."""
        out = np.zeros_like(self.free)
        for d in self.config.delta_ladder:
            out |= self.Z_mask(d)
        return out

    def inclusion_violations(self) -> dict:
        return {"free_not_critical": int(np.sum(self.free & ~self.critical)),
                "critical_not_contact": int(np.sum(self.critical & ~self.contact))}


def _axis_neighbour_any(mask: np.ndarray) -> np.ndarray:
    """True where at least one axis neighbour is True (no wrap-around)."""
    out = np.zeros_like(mask)
    for ax in range(mask.ndim):
        fwd = [slice(None)] * mask.ndim
        bwd = [slice(None)] * mask.ndim
        fwd[ax] = slice(1, None)
        bwd[ax] = slice(None, -1)
        out[tuple(bwd)] |= mask[tuple(fwd)]
        out[tuple(fwd)] |= mask[tuple(bwd)]
    return out


def extract_geometry(solution, config: AnalysisConfig | None = None, contact_coeff: float = 1e-3,
                     critical_coeff: float = 1.0, region_radius: float = 0.5,
                     compute_growth: bool = True) -> ContactGeometry:
    """Masks of the solution inside the thin ball of radius `region_radius`.

    Contact threshold: contact_coeff * h^{min(2s, 1)}. The critical set uses
    |grad'(u - phi)| <= critical_coeff * h^s and |flux trace| <= critical_coeff * h^{1-s}.
    """
    config = config or AnalysisConfig()
    grid = solution.grid
    h, s = grid.h, grid.s
    pts = grid.thin_points()
    inner = np.zeros(grid.thin_shape, dtype=bool)
    inner[tuple(slice(1, -1) for _ in range(grid.n))] = True
    region = inner & (np.sqrt(np.sum(pts ** 2, axis=-1)) < region_radius)
    gap = solution.thin_gap()
    tol_c = contact_coeff * h ** min(2 * s, 1.0)
    contact = region & (gap <= tol_c)
    free = contact & _axis_neighbour_any(inner & ~(gap <= tol_c))
    gap_grad = np.stack([np.gradient(gap, h, axis=ax) for ax in range(grid.n)])
    tang = np.sqrt(np.sum(gap_grad ** 2, axis=0))
    flux = weighted_flux_trace(grid, solution.u)
    tol_g = critical_coeff * h ** s
    tol_f = critical_coeff * h ** (1 - s)
    critical = contact & (tang <= tol_g) & (np.abs(flux) <= tol_f)
    growth = np.full(grid.thin_shape, np.nan)
    geom = ContactGeometry(contact, free, critical, pts, growth, config,
                           {"contact": tol_c, "gradient": tol_g, "flux": tol_f})
    if compute_growth and free.any():
        for idx in zip(*np.nonzero(free)):
            try:
                growth[idx] = growth_ratio(solution, pts[idx], config)
            except (ResolutionError, DegenerateError):
                growth[idx] = 0.0
    return geom


def growth_ratio(solution, x0, config: AnalysisConfig) -> float:
    """min over the dyadic panel of H_{u_{x0}}(r) / r^{n+a+2(k+1-theta)}."""
    grid = solution.grid
    radii = dyadic_radii(config.r_max, config.min_cells * grid.h)
    if not radii:
        raise ResolutionError("empty radius panel")
    f = LocalField.corrected(solution, x0, radii[0])
    expo = grid.n + grid.a + 2 * (config.k + 1 - config.theta)
    vals = [frequency_integrals(f, x0, r)["H"] / r ** expo for r in radii]
    return float(min(vals))


def refine_free_points(solution, geom: ContactGeometry, mask: np.ndarray | None = None,
                       reach: int = 2) -> np.ndarray:
    """Sub-cell positions of free-boundary nodes.

    Near a regular point the gap grows like dist^{1+s}, so psi = gap^{1/(1+s)}
    is close to an affine function of position on the non-contact side. psi is
    fitted by least squares over non-contact nodes within `reach` cells and the
    node is projected onto the zero set of the fit. Nodes without a usable fit
    (fewer than n+1 neighbours, or a jump larger than 1.5h) keep their position.
    """
    grid = solution.grid
    n, h, s = grid.n, grid.h, grid.s
    mask = geom.free if mask is None else mask
    gap = np.clip(solution.thin_gap(), 0.0, None)
    noncontact = ~(gap <= geom.thresholds["contact"])
    psi = gap ** (1.0 / (1.0 + s))
    offs = np.stack(np.meshgrid(*[np.arange(-reach, reach + 1)] * n, indexing="ij"), -1).reshape(-1, n)
    offs = offs[np.sum(offs ** 2, axis=1) <= (reach + 0.5) ** 2]
    shape = np.array(grid.thin_shape)
    out = []
    for idx in zip(*np.nonzero(mask)):
        p = geom.points[idx]
        nb = np.array(idx) + offs
        ok = np.all((nb >= 0) & (nb < shape), axis=1)
        nb = nb[ok]
        sel = noncontact[tuple(nb.T)]
        nb = nb[sel]
        if len(nb) < n + 1:
            out.append(p)
            continue
        d = (nb - np.array(idx)) * h
        A = np.concatenate([np.ones((len(nb), 1)), d], axis=1)
        coef, *_ = np.linalg.lstsq(A, psi[tuple(nb.T)], rcond=None)
        c0, c = coef[0], coef[1:]
        cc = float(c @ c)
        shift = -c0 * c / cc if cc > 0 else np.zeros(n)
        out.append(p + shift if np.linalg.norm(shift) <= 1.5 * h else p)
    return np.array(out).reshape(-1, n)


# --------------------------------------------------------------------------
# discrete measures and beta numbers


@dataclass
class PointMeasure:
    """Weighted atoms in R^{n+1} (last coordinate 0).

    anchors, when given, are thin-set points (m, n) where frequency
    quantities attached to each atom are evaluated, typically the grid node
    an atom was refined from.
    """

    points: np.ndarray  # (m, n+1), last coordinate 0
    weights: np.ndarray
    anchors: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(len(self.points))
        if np.any(self.weights < 0):
            raise ConfigurationError("weights must be nonnegative")
        if self.anchors is None:
            self.anchors = self.points[:, :-1].copy()
        else:
            self.anchors = np.asarray(self.anchors, dtype=float).reshape(len(self.points), -1)

    @classmethod
    def unit(cls, thin_points, anchors=None) -> "PointMeasure":
        p = np.atleast_2d(np.asarray(thin_points, dtype=float))
        p = np.concatenate([p, np.zeros((len(p), 1))], axis=1)
        return cls(p, np.ones(len(p)), anchors)

    @classmethod
    def polyline(cls, thin_points, spacing: float, anchors=None, samples: int = 6) -> "PointMeasure":
        """Arc-length measure on a polyline through planar free-boundary points.

        Each point is joined to its nearest neighbour on either side of the
        local tangent (within 2.5 spacing); segments are sampled at `samples`
        midpoints. Atoms inherit the anchor of the nearer endpoint. Unlike
        unit atoms, the mass in a ball does not depend on the point density.
        """
        p = np.atleast_2d(np.asarray(thin_points, dtype=float))
        if p.shape[1] != 2:
            raise ConfigurationError("polyline measures need planar thin points (n = 2)")
        anc = p if anchors is None else np.asarray(anchors, dtype=float).reshape(p.shape)
        reach = 2.5 * spacing
        edges = set()
        for i, x in enumerate(p):
            d = p - x
            dist = np.hypot(d[:, 0], d[:, 1])
            near = np.nonzero((dist < reach) & (dist > 0))[0]
            if len(near) == 0:
                continue
            _, _, vt = np.linalg.svd(d[near] - d[near].mean(axis=0), full_matrices=False)
            side = d[near] @ vt[0]
            for mask in (side > 0, side < 0):
                if np.any(mask):
                    j = near[mask][np.argmin(dist[near[mask]])]
                    edges.add((min(i, j), max(i, j)))
        pts, w, an = [], [], []
        frac = (np.arange(samples) + 0.5) / samples
        for i, j in sorted(edges):
            seg = p[j] - p[i]
            length = float(np.hypot(*seg))
            pts.append(p[i] + frac[:, None] * seg)
            w.append(np.full(samples, length / samples))
            an.append(np.where(frac[:, None] < 0.5, anc[i], anc[j]))
        if not pts:
            return cls.unit(p, anc)
        pts = np.concatenate(pts)
        pts = np.concatenate([pts, np.zeros((len(pts), 1))], axis=1)
        return cls(pts, np.concatenate(w), np.concatenate(an))

    def _inside(self, x0, r):
        x0 = _embed(x0, self.points.shape[1])
        return np.sum((self.points - x0) ** 2, axis=1) < r * r

    def local(self, x0, r):
        inside = self._inside(x0, r)
        return self.points[inside], self.weights[inside]

    def local_anchors(self, x0, r):
        inside = self._inside(x0, r)
        return self.anchors[inside], self.weights[inside]

    def mass(self, x0, r) -> float:
        return float(np.sum(self.local(x0, r)[1]))


def _embed(x0, dim):
    x0 = np.asarray(x0, dtype=float).ravel()
    if len(x0) == dim - 1:
        x0 = np.append(x0, 0.0)
    return x0


def barycenter(mu: PointMeasure, x0, r: float) -> np.ndarray:
    pts, w = mu.local(x0, r)
    m = w.sum()
    if not m > 0:
        raise DegenerateError("no mass in the ball: barycentre undefined")
    return (w[:, None] * pts).sum(axis=0) / m


@dataclass
class BetaRecord:
    x0: tuple
    r: float
    barycenter: np.ndarray
    eigenvalues: np.ndarray  # decreasing
    beta: float
    plane_basis: np.ndarray  # rows span the best (n-1)-plane directions


def moment_form(mu: PointMeasure, x0, r: float):
    pts, w = mu.local(x0, r)
    if not w.sum() > 0:
        raise DegenerateError("no mass in the ball: beta undefined")
    c = (w[:, None] * pts).sum(axis=0) / w.sum()
    d = pts - c
    return c, (w[:, None] * d).T @ d


def beta_number(mu: PointMeasure, x0, r: float) -> BetaRecord:
    """beta^2 = r^{-n-1} (sum of the two smallest eigenvalues of the centred moment form)."""
    c, B = moment_form(mu, x0, r)
    dim = B.shape[0]
    vals, vecs = np.linalg.eigh(B)
    vals = np.clip(vals[::-1], 0.0, None)
    vecs = vecs[:, ::-1]
    n = dim - 1
    basis = vecs[:, : n - 1]
    # lambda_n + lambda_{n+1} evaluated as the residual about the top eigenvectors,
    # which keeps nearly flat supports accurate (no cancellation against the trace)
    pts, w = mu.local(x0, r)
    d = pts - c
    resid = d - (d @ basis) @ basis.T
    tail = float(np.sum(w * np.sum(resid * resid, axis=1)))
    beta = math.sqrt(r ** (-n - 1) * tail)
    return BetaRecord(tuple(_embed(x0, dim).tolist()), r, c, vals, beta, basis.T)


def beta_bruteforce(mu: PointMeasure, x0, r: float, samples: int = 10000) -> float:
    """Direct infimum of r^{-n-1} int dist^2(y, L) dmu over affine (n-1)-planes L.

    For n = 1 the planes are points and the optimum is the barycentre (the
    mean minimizes the sum of squared distances). For n = 2 the planes are
    lines in R^3; the optimal line passes through the barycentre, and its
    direction is scanned over a grid of the unit hemisphere followed by a
    local refinement.
    """
    pts, w = mu.local(x0, r)
    if not w.sum() > 0:
        raise DegenerateError("no mass in the ball")
    dim = pts.shape[1]
    n = dim - 1
    c = (w[:, None] * pts).sum(axis=0) / w.sum()
    d = pts - c
    if n == 1:
        return math.sqrt(r ** (-2) * float(np.sum(w * np.sum(d * d, axis=1))))
    if n != 2:
        raise ConfigurationError("brute force implemented for n in {1, 2}")

    def cost(angles):
        th, ph = angles
        e = np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)])
        resid = d - (d @ e)[:, None] * e
        return float(w @ (resid * resid).sum(axis=1))

    m = int(math.sqrt(samples))
    ths = np.linspace(0, math.pi, m)
    phs = np.linspace(0, math.pi, m, endpoint=False)
    T, P = np.meshgrid(ths, phs, indexing="ij")
    E = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
    tot = np.sum(w * np.sum(d * d, axis=1))
    costs = tot - np.sum(w[None, :] * (E @ d.T) ** 2, axis=1)
    best = int(np.argmin(costs))
    th0, ph0 = T.ravel()[best], P.ravel()[best]
    res = optimize.minimize(cost, [th0, ph0], method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-15 * tot, "maxiter": 4000})
    val = min(res.fun, cost([th0, ph0]))
    return math.sqrt(max(val, 0.0) * r ** (-3))


# --------------------------------------------------------------------------
# tube volumes


@dataclass
class TubeTable:
    radii: np.ndarray
    volumes: np.ndarray
    slope: float


def minkowski_tube(points, h: float, radii, n: int) -> TubeTable:
    """Volume of {x in R^{n+1}: dist(x, points) < r} for thin-set grid points.

    A half-space node grid of spacing h around the set is built, the exact
    Euclidean distance to the set is computed by a distance transform, and
    node counts (thin row weighted by 1/2, then doubled) are turned into
    volumes. The log-log slope over the supplied radii is fitted by least
    squares.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) == 0:
        raise ConfigurationError("empty point set")
    radii = np.asarray(radii, dtype=float)
    if radii.min() < h:
        raise ResolutionError("tube radius below the grid spacing")
    rmax = radii.max()
    pad = int(math.ceil(rmax / h)) + 2
    lo = pts.min(axis=0) - pad * h
    idx = np.round((pts - lo) / h).astype(int)
    shape_h = tuple(int(v) for v in idx.max(axis=0) + pad + 1)
    shape = (pad + 1,) + shape_h
    seeds = np.ones(shape, dtype=bool)
    seeds[(np.zeros(len(idx), dtype=int),) + tuple(idx.T)] = False
    dist = ndimage.distance_transform_edt(seeds, sampling=h)
    row_w = np.ones(shape[0])
    row_w[0] = 0.5
    vols = []
    for r in radii:
        counts = np.sum(dist < r, axis=tuple(range(1, n + 1)))
        vols.append(2.0 * float(np.sum(row_w * counts)) * h ** (n + 1))
    vols = np.array(vols)
    slope = float(np.polyfit(np.log(radii), np.log(vols), 1)[0]) if len(radii) > 1 else math.nan
    return TubeTable(radii, vols, slope)


# --------------------------------------------------------------------------
# mean flatness against radial variation of the frequency


def mean_flatness_diag(solution, mu: PointMeasure, p, r: float, config: AnalysisConfig | None = None,
                       delta_cache: dict | None = None, fields=None) -> dict:
    """beta_mu(p, r)^2 against r^{1-n} (sum over B_r(p) of Delta_{5r/2}^{24r} mu + r^{2 theta} mu(B_r(p)))."""
    from .frequency import delta_variation

    config = config or AnalysisConfig()
    grid = solution.grid
    n = grid.n
    anchors, w = mu.local_anchors(p, r)
    if not w.sum() > 0:
        return {"p": tuple(np.ravel(p).tolist()), "r": r, "skipped": True}
    beta = beta_number(mu, p, r).beta
    acc = 0.0
    cache = {} if delta_cache is None else delta_cache
    for x, wx in zip(anchors, w):
        key = (tuple(np.round(x, 12)), r)
        if key not in cache:
            f = fields.get(x, 24 * r) if fields is not None else LocalField.corrected(solution, x, 24 * r)
            cache[key] = delta_variation(f, x, 2.5 * r, 24 * r, config).value
        acc += max(cache[key], 0.0) * wx
    rhs = r ** (1 - n) * (acc + r ** (2 * config.theta) * w.sum())
    return {"p": tuple(np.ravel(p).tolist()), "r": r, "beta2": beta ** 2, "rhs_core": rhs,
            "ratio": beta ** 2 / rhs, "skipped": False}
