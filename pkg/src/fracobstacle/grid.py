"""Half-space tensor grids with the weight |t|^a, and calculus on them.

Arrays are stored t-major: shape (M+1, N_1+1[, N_2+1]) with axis 0 the
vertical coordinate t = j h, j = 0..M, and the remaining axes the thin-set
coordinates. Values for t < 0 are implied by even reflection and never
stored. Points and vectors, on the other hand, are written in the physical
order (x_1, ..., x_n, t).

The discrete operator is a finite-volume stencil on the dual cells of the
nodes. A horizontal face between two nodes of row j carries the exact
integral of t^a over the row's dual slab; a vertical face between rows j and
j+1 carries the midpoint value t_{j+1/2}^a. With these weights the stencil
annihilates the even extension of x_1^2 exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from collections import OrderedDict

import numpy as np

from .errors import ConfigurationError, ResolutionError


def _power_integral(lo, hi, a):
    """Integral of t^a over [lo, hi] with 0 <= lo <= hi."""
    return (np.power(hi, 1.0 + a) - np.power(lo, 1.0 + a)) / (1.0 + a)


class WeightedGrid:
    """Uniform grid on a box  prod_i [lo_i, lo_i + N_i h] x [0, M h]."""

    def __init__(self, n: int, a: float, h: float, shape, lo=None):
        if n not in (1, 2):
            raise ConfigurationError(f"n must be 1 or 2, got {n}")
        if not -1.0 < a < 1.0:
            raise ConfigurationError(f"a must lie in (-1, 1), got {a}")
        shape = tuple(int(v) for v in shape)
        if len(shape) != n + 1 or min(shape) < 2:
            raise ConfigurationError(f"bad grid shape {shape} for n={n}")
        self.n = n
        self.a = float(a)
        self.h = float(h)
        self.shape = shape
        self.lo = np.zeros(n) if lo is None else np.asarray(lo, dtype=float).reshape(n)

        M = shape[0] - 1
        h = self.h
        j = np.arange(M + 1)
        self.t = j * h
        # cell integrals of t^a over [j h, (j+1) h]
        self.cell_weights = _power_integral(j[:-1] * h, j[1:] * h, a)
        # dual slab integrals over [t_j - h/2, t_j + h/2] clipped to [0, M h]
        lo_s = np.clip((j - 0.5) * h, 0.0, None)
        hi_s = np.clip((j + 0.5) * h, None, M * h)
        self.slab_weights = _power_integral(lo_s, hi_s, a)
        self.slab_lengths = hi_s - lo_s
        self.face_weights = ((j[:-1] + 0.5) * h) ** a
        # stencil coefficients (fluxes are these times h^{n-1})
        self.kappa_h = self.slab_weights / h
        self.kappa_v = self.face_weights

    @classmethod
    def box(cls, n: int, a: float, h: float, R: float = 1.0, height: float | None = None):
        """Grid on [-R, R]^n x [0, height] (height defaults to R)."""
        height = R if height is None else height
        N = int(round(2 * R / h))
        M = int(round(height / h))
        if abs(N * h - 2 * R) > 1e-9 * R or abs(M * h - height) > 1e-9 * height:
            raise ConfigurationError("R and height must be integer multiples of h")
        return cls(n, a, h, (M + 1,) + (N + 1,) * n, lo=-R * np.ones(n))

    @property
    def s(self) -> float:
        return 0.5 * (1.0 - self.a)

    @property
    def M(self) -> int:
        return self.shape[0] - 1

    @property
    def thin_shape(self) -> tuple:
        return self.shape[1:]

    def axis_coords(self, i: int) -> np.ndarray:
        """1-d coordinates of horizontal axis i (0-based among x_1..x_n)."""
        return self.lo[i] + self.h * np.arange(self.shape[1 + i])

    def coords(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays [x_1, ..., x_n, t] over the node array."""
        out = []
        ndim = self.n + 1
        for i in range(self.n):
            shp = [1] * ndim
            shp[1 + i] = -1
            out.append(self.axis_coords(i).reshape(shp))
        shp = [1] * ndim
        shp[0] = -1
        out.append(self.t.reshape(shp))
        return out

    def thin_coords(self) -> list[np.ndarray]:
        """Broadcastable coordinates over the thin grid (shape thin_shape)."""
        out = []
        for i in range(self.n):
            shp = [1] * self.n
            shp[i] = -1
            out.append(self.axis_coords(i).reshape(shp))
        return out

    def thin_points(self) -> np.ndarray:
        """Thin-grid node coordinates, shape thin_shape + (n,)."""
        mesh = np.meshgrid(*[self.axis_coords(i) for i in range(self.n)], indexing="ij")
        return np.stack(mesh, axis=-1)

    def node_index(self, x) -> tuple:
        """Horizontal index of the node nearest to the thin point x."""
        x = np.asarray(x, dtype=float).reshape(self.n)
        return tuple(int(round(v)) for v in (x - self.lo) / self.h)

    def node_point(self, idx) -> np.ndarray:
        return self.lo + self.h * np.asarray(idx, dtype=float)

    def is_node(self, x, rtol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float).reshape(self.n)
        q = (x - self.lo) / self.h
        return bool(np.all(np.abs(q - np.round(q)) <= rtol * max(1.0, np.max(np.abs(q)))))

    def sample(self, func) -> np.ndarray:
        """Evaluate func(x_1, ..., x_n, t) (broadcasting) on every node."""
        vals = func(*self.coords())
        return np.broadcast_to(vals, self.shape).astype(float).copy()

    def sample_polynomial(self, poly) -> np.ndarray:
        return np.broadcast_to(poly.evaluate_on(self.coords()), self.shape).copy()

    def subgrid(self, start, stop, height: int) -> "WeightedGrid":
        """Grid on horizontal node ranges [start_i, stop_i) and rows 0..height-1."""
        shape = (height,) + tuple(b - a for a, b in zip(start, stop))
        return WeightedGrid(self.n, self.a, self.h, shape, lo=self.node_point(start))

    def window(self, center_idx, half_width: int, height: int):
        """Slices and grid of a window of nodes around a thin-grid node."""
        start = [c - half_width for c in center_idx]
        stop = [c + half_width + 1 for c in center_idx]
        if min(start) < 0 or any(b > s for b, s in zip(stop, self.thin_shape)) or height > self.shape[0]:
            raise ResolutionError("window leaves the grid box")
        sl = (slice(0, height),) + tuple(slice(a, b) for a, b in zip(start, stop))
        return sl, self.subgrid(start, stop, height)

    def boundary_mask(self) -> np.ndarray:
        """Dirichlet nodes: horizontal box faces and the top row."""
        mask = np.zeros(self.shape, dtype=bool)
        mask[-1] = True
        for ax in range(1, self.n + 1):
            idx = [slice(None)] * (self.n + 1)
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        return mask

    def node_volumes(self) -> np.ndarray:
        """Weighted dual-cell measures (half-space), shape (M+1, 1, ...)."""
        shp = (-1,) + (1,) * self.n
        vol = self.slab_weights.reshape(shp) * self.h ** self.n
        return vol

    def describe(self) -> dict:
        return {"n": self.n, "a": self.a, "s": self.s, "h": self.h, "shape": list(self.shape),
                "lo": self.lo.tolist()}


def assemble_La(grid: WeightedGrid):
    """Stencil coefficients (kappa_h per row, kappa_v per vertical face).

    The flux into the dual cell of node p is h^{n-1} sum kappa (u_nb - u_p).
    """
    return grid.kappa_h.copy(), grid.kappa_v.copy()


def flux_residual(grid: WeightedGrid, u: np.ndarray) -> np.ndarray:
    """sum over stencil neighbours of kappa (u_nb - u_p), zero on Dirichlet nodes.

    At the thin row only the upper vertical face exists (the lower one is the
    mirror image), which is the half-space form of the doubled reflected flux.
    """
    kh, kv = grid.kappa_h, grid.kappa_v
    n = grid.n
    out = np.zeros_like(u)
    shp = (-1,) + (1,) * n
    for ax in range(1, n + 1):
        d = np.diff(u, axis=ax)  # u[i+1] - u[i]
        flux = kh.reshape(shp) * d
        lo = [slice(None)] * (n + 1)
        hi = [slice(None)] * (n + 1)
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        out[tuple(lo)] += flux
        out[tuple(hi)] -= flux
    dv = np.diff(u, axis=0) * kv.reshape(shp)
    out[:-1] += dv
    out[1:] -= dv
    out[grid.boundary_mask()] = 0.0
    return out


def apply_La(grid: WeightedGrid, u: np.ndarray) -> np.ndarray:
    """Discrete div(|t|^a grad u) per unit dual-cell volume (zero on Dirichlet nodes)."""
    shp = (-1,) + (1,) * grid.n
    return flux_residual(grid, u) / (grid.h * grid.slab_lengths.reshape(shp))


def diagonal(grid: WeightedGrid) -> np.ndarray:
    """Sum of stencil coefficients per row (same for every node of a row)."""
    kh, kv = grid.kappa_h, grid.kappa_v
    d = 2 * grid.n * kh.copy()
    d[:-1] += kv
    d[1:] += kv
    return d


def normalized_residual(grid: WeightedGrid, u: np.ndarray) -> np.ndarray:
    """Residual divided by the stencil diagonal: the local Gauss-Seidel correction."""
    shp = (-1,) + (1,) * grid.n
    return flux_residual(grid, u) / diagonal(grid).reshape(shp)


def dirichlet_energy(grid: WeightedGrid, u: np.ndarray) -> float:
    """Discrete weighted Dirichlet energy (1/2) sum_faces h^{n-1} kappa (du)^2 on the half grid."""
    shp = (-1,) + (1,) * grid.n
    e = 0.0
    for ax in range(1, grid.n + 1):
        e += float(np.sum(grid.kappa_h.reshape(shp) * np.diff(u, axis=ax) ** 2))
    e += float(np.sum(grid.kappa_v.reshape(shp) * np.diff(u, axis=0) ** 2))
    return 0.5 * e * grid.h ** (grid.n - 1)


def horizontal_laplacian(grid: WeightedGrid, v: np.ndarray) -> np.ndarray:
    """Five/three-point Laplacian of a thin-grid array; zero on its border."""
    out = np.zeros_like(v)
    inner = tuple(slice(1, -1) for _ in range(v.ndim))
    for ax in range(v.ndim):
        fwd = [slice(1, -1)] * v.ndim
        bwd = [slice(1, -1)] * v.ndim
        fwd[ax] = slice(2, None)
        bwd[ax] = slice(0, -2)
        out[inner] += v[tuple(fwd)] + v[tuple(bwd)] - 2 * v[inner]
    return out / grid.h ** 2


def weighted_flux_trace(grid: WeightedGrid, u: np.ndarray) -> np.ndarray:
    """Approximation of lim_{t -> 0} t^a d_t u on the thin grid.

    Uses the first two rows with a horizontal-Laplacian correction, which is
    exact for t^{1-a} and for the even extension of x_1^2. It is a positive
    multiple of the thin-row flux residual, so its sign matches the solver's.
    """
    a, h = grid.a, grid.h
    d = u[1] - u[0] + h * h * horizontal_laplacian(grid, u[0]) / (2.0 * (1.0 + a))
    out = (1.0 - a) * d / h ** (1.0 - a)
    border = np.ones(grid.thin_shape, dtype=bool)
    border[tuple(slice(1, -1) for _ in range(grid.n))] = False
    out[border] = 0.0
    return out


def _deriv_along(u: np.ndarray, axis: int, h: float, even_axis0: bool) -> np.ndarray:
    """First derivative along one axis.

    Fourth-order central differences where the five-point stencil fits,
    second-order next to the faces, second-order one-sided on the faces. Along
    the vertical axis rows 0 and 1 use the even reflection (row 0 derivative
    is zero, row 1 is a central difference).
    """
    u = np.moveaxis(u, axis, 0)
    m = u.shape[0]
    out = np.empty_like(u)
    if m >= 5:
        out[2:-2] = (u[:-4] - 8 * u[1:-3] + 8 * u[3:-1] - u[4:]) / (12 * h)
    if m >= 3:
        out[1] = (u[2] - u[0]) / (2 * h)
        out[-2] = (u[-1] - u[-3]) / (2 * h)
        out[0] = (-3 * u[0] + 4 * u[1] - u[2]) / (2 * h)
        out[-1] = (3 * u[-1] - 4 * u[-2] + u[-3]) / (2 * h)
    else:
        out[:] = (u[-1] - u[0]) / h
    if even_axis0:
        out[0] = 0.0
    return np.moveaxis(out, 0, axis)


def gradient(grid: WeightedGrid, u: np.ndarray) -> np.ndarray:
    """Gradient, shape (n+1,) + grid.shape, components ordered (x_1, ..., x_n, t)."""
    comps = [_deriv_along(u, 1 + i, grid.h, False) for i in range(grid.n)]
    comps.append(_deriv_along(u, 0, grid.h, True))
    return np.stack(comps)


# --------------------------------------------------------------------------
# quadrature over balls and annuli centred on the thin set


def cutoff(x):
    """phi(t) = 1 on [0, 1/2], 2(1 - t) on (1/2, 1], 0 beyond."""
    x = np.asarray(x, dtype=float)
    return np.where(x <= 0.5, 1.0, np.where(x <= 1.0, 2.0 * (1.0 - x), 0.0))


def cutoff_slope(x):
    """Derivative of the cutoff: -2 on (1/2, 1), 0 elsewhere."""
    x = np.asarray(x, dtype=float)
    return np.where((x > 0.5) & (x < 1.0), -2.0, 0.0)


KERNELS = ("ball", "annulus", "annulus_over_distance", "indicator")


@dataclass(frozen=True)
class QuadratureSpec:
    """Ball or annulus quadrature about a thin-set point.

    kernel: "ball" uses phi(|x - x0| / r); "annulus" uses -phi'(|x - x0| / r);
    "annulus_over_distance" divides the latter by |x - x0|; "indicator" is the
    characteristic function of B_r(x0).
    """

    center: tuple
    radius: float
    kernel: str = "ball"

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ConfigurationError(f"unknown kernel {self.kernel!r}")


@dataclass(frozen=True)
class BallSamples:
    """Quadrature samples for B_R(x0) on a half grid.

    node: integer node offsets (rows (j, i_1, ..)) relative to the reference node.
    disp: physical displacement x - x0 of each sample, ordered (x_1, .., x_n, t).
    weight: weighted measure of each sample (full space, i.e. doubled).
    Cells crossed by any of the cut spheres are supersampled, others use
    their node as a single sample.
    """

    node: np.ndarray
    disp: np.ndarray
    weight: np.ndarray
    reach: int  # max |offset| horizontally
    height: int  # number of rows touched

    @property
    def dist(self) -> np.ndarray:
        return np.sqrt(np.sum(self.disp ** 2, axis=1))


def _supersample_offsets(S: int, ndim: int):
    g = (np.arange(S) + 0.5) / S - 0.5
    mesh = np.meshgrid(*([g] * ndim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


_SAMPLE_CACHE: OrderedDict = OrderedDict()
_SAMPLE_CACHE_BYTES = 768 * 2 ** 20


def _ball_samples_cached(*key):
    """LRU cache of sample sets bounded by total array size."""
    hit = _SAMPLE_CACHE.get(key)
    if hit is not None:
        _SAMPLE_CACHE.move_to_end(key)
        return hit
    val = _build_ball_samples(*key)
    _SAMPLE_CACHE[key] = val
    total = sum(v.node.nbytes + v.disp.nbytes + v.weight.nbytes for v in _SAMPLE_CACHE.values())
    while total > _SAMPLE_CACHE_BYTES and len(_SAMPLE_CACHE) > 1:
        _, old = _SAMPLE_CACHE.popitem(last=False)
        total -= old.node.nbytes + old.disp.nbytes + old.weight.nbytes
    return val


def _build_ball_samples(n, a, h, R_cells, frac, cuts_rel, S):
    # all lengths in units of h; R_cells = R/h, frac = center offset from reference node
    frac = np.asarray(frac)
    reach = int(math.ceil(R_cells + abs(frac).max() + 1))
    height = int(math.ceil(R_cells + 1)) + 1
    axes = [np.arange(-reach, reach + 1)] * n + [np.arange(0, height)]
    mesh = np.meshgrid(*axes, indexing="ij")
    off = np.stack([m.ravel() for m in mesh], axis=-1).astype(float)  # (x offsets..., j)
    # dual cell of each node relative to the centre (units of h)
    lo = off - 0.5
    hi = off + 0.5
    lo[:, :n] -= frac
    hi[:, :n] -= frac
    lo[:, n] = np.maximum(lo[:, n], 0.0)
    near = np.where(lo > 0, lo, np.where(hi < 0, -hi, 0.0))
    far = np.maximum(np.abs(lo), np.abs(hi))
    dmin = np.sqrt(np.sum(near ** 2, axis=1))
    dmax = np.sqrt(np.sum(far ** 2, axis=1))
    keep = dmin < R_cells
    off, lo, hi, dmin, dmax = off[keep], lo[keep], hi[keep], dmin[keep], dmax[keep]
    cut = np.zeros(len(off), dtype=bool)
    for c in cuts_rel:
        cut |= (dmin < c * R_cells) & (dmax > c * R_cells)

    # single-sample cells: the node itself with the exact slab weight
    plain = ~cut
    node_disp = off.copy()
    node_disp[:, :n] -= frac
    j = off[:, n]
    slab = _power_integral(np.maximum(j - 0.5, 0.0), j + 0.5, a)  # units h^{1+a}
    w_plain = slab[plain]
    nodes = [off[plain]]
    disps = [node_disp[plain]]
    weights = [w_plain]

    if np.any(cut):
        sub = _supersample_offsets(S, n)  # horizontal sub-offsets
        c_off, c_lo, c_hi = off[cut], lo[cut], hi[cut]
        m = len(c_off)
        # vertical sub-intervals with exact t^a weights and weighted centroids
        tv_lo = c_lo[:, n][:, None] + (c_hi[:, n] - c_lo[:, n])[:, None] * (np.arange(S) / S)[None, :]
        tv_hi = c_lo[:, n][:, None] + (c_hi[:, n] - c_lo[:, n])[:, None] * (np.arange(1, S + 1) / S)[None, :]
        wv = _power_integral(tv_lo, tv_hi, a)
        with np.errstate(invalid="ignore", divide="ignore"):
            cv = _power_integral(tv_lo, tv_hi, a + 1.0) / wv
        centre_h = 0.5 * (c_lo[:, :n] + c_hi[:, :n])  # horizontal cell centres
        # samples: m cells x S^n horizontal x S vertical
        hx = centre_h[:, None, :] + sub[None, :, :]  # (m, S^n, n)
        ns = sub.shape[0]
        pos_x = np.repeat(hx[:, :, None, :], S, axis=2)  # (m, S^n, S, n)
        pos_t = np.broadcast_to(cv[:, None, :, None], (m, ns, S, 1))
        pos = np.concatenate([pos_x, pos_t], axis=-1).reshape(-1, n + 1)
        w = np.broadcast_to(wv[:, None, :], (m, ns, S)).reshape(-1) / ns
        nd = np.repeat(c_off, ns * S, axis=0)
        inside = np.sum(pos ** 2, axis=1) < R_cells ** 2
        nodes.append(nd[inside])
        disps.append(pos[inside])
        weights.append(w[inside])

    node = np.concatenate(nodes)
    disp = np.concatenate(disps) * h
    weight = 2.0 * np.concatenate(weights) * h ** (n + 1 + a)  # doubled for reflection
    # node offsets reordered to array order (j, i_1, ..., i_n)
    node_idx = np.concatenate([node[:, n:], node[:, :n]], axis=1).astype(np.int64)
    return BallSamples(node_idx, disp, weight, reach, height)


def ball_samples(grid: WeightedGrid, center, R: float, cuts=(0.5, 1.0), supersample=None,
                 min_cells: float = 4.0):
    """Samples for B_R(center) and the reference node index they are relative to."""
    center = np.asarray(center, dtype=float).reshape(grid.n)
    if R < min_cells * grid.h * (1 - 1e-12):
        raise ResolutionError(f"radius {R:.4g} below resolution guard {min_cells}h = {min_cells * grid.h:.4g}")
    q = (center - grid.lo) / grid.h
    ref = np.round(q).astype(int)
    frac = tuple(np.round(q - ref, 9).tolist())
    S = supersample or (8 if grid.n == 1 else 4)
    samples = _ball_samples_cached(grid.n, round(grid.a, 12), grid.h, round(R / grid.h, 9), frac,
                                   tuple(cuts), S)
    if (np.any(ref - samples.reach < 0) or np.any(ref + samples.reach >= np.array(grid.thin_shape))
            or samples.height > grid.shape[0]):
        raise ResolutionError(f"ball of radius {R:.4g} about {center.tolist()} leaves the grid")
    return samples, ref


def gather(samples: BallSamples, ref, values: np.ndarray) -> np.ndarray:
    """Node values (any leading component axes) at the sample nodes."""
    idx = samples.node.copy()
    idx[:, 1:] += np.asarray(ref)[None, :]
    lead = values.ndim - idx.shape[1]
    sel = (Ellipsis,) + tuple(idx[:, d] for d in range(idx.shape[1]))
    if lead:
        return values[sel]
    return values[tuple(idx[:, d] for d in range(idx.shape[1]))]


def kernel_values(spec: QuadratureSpec, disp: np.ndarray) -> np.ndarray:
    rho = np.sqrt(np.sum(disp ** 2, axis=1))
    x = rho / spec.radius
    if spec.kernel == "ball":
        return cutoff(x)
    if spec.kernel == "indicator":
        return (x < 1.0).astype(float)
    k = -cutoff_slope(x)
    if spec.kernel == "annulus_over_distance":
        with np.errstate(divide="ignore", invalid="ignore"):
            k = np.where(k > 0, k / rho, 0.0)
    return k


def weighted_integral(grid: WeightedGrid, values: np.ndarray, spec: QuadratureSpec,
                      min_cells: float = 4.0) -> float:
    """Full-space integral of kernel * values * |t|^a over the spec's ball.

    `values` is a node array on `grid` (the even extension is implied).
    """
    samples, ref = ball_samples(grid, spec.center, spec.radius, min_cells=min_cells)
    k = kernel_values(spec, samples.disp)
    return float(np.sum(samples.weight * k * gather(samples, ref, values)))
