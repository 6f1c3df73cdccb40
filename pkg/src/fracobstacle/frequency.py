"""Truncated frequency: H, D, G, E, I = rG/H and J = exp(C r^theta) I.

All integrals are over the full space (the half grid doubled) against the
measure |t|^a dx, with the piecewise linear cutoff phi(|x - x0| / r):

    H = -int phi'(rho/r) u^2 / rho          G = -(1/r) int phi'(rho/r) u du/dnu
    D =  int phi(rho/r) |grad u|^2          E = -int phi'(rho/r) rho/r^2 (du/dnu)^2

where rho = |x - x0| and nu = (x - x0)/rho. Every cell contributes to H, G
and E through the same samples, so H E - G^2 >= 0 holds cell by cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigurationError, DegenerateError, ResolutionError
from .grid import WeightedGrid, ball_samples, cutoff, cutoff_slope, gather, gradient
from .poly_extension import corrected_obstacle


@dataclass
class AnalysisConfig:
    theta: float = 0.5
    delta: float = 1e-6
    delta_ladder: tuple = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
    C_mono: float = 1.0
    eps_mono: float = 1e-3
    Lambda_add: float = 0.0
    eps_H: float = 1e-28
    eps_quad: float = 1e-8
    min_cells: float = 16.0
    r_max: float = 0.25
    k: int = 2

    def validate(self):
        if not 0.0 < self.theta < 1.0:
            raise ConfigurationError("theta must lie in (0, 1)")
        for name in ("delta", "eps_mono", "eps_H", "eps_quad", "r_max"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.C_mono < 0 or self.Lambda_add < 0:
            raise ConfigurationError("C_mono and Lambda_add must be nonnegative")
        if self.min_cells < 4:
            raise ConfigurationError("min_cells must be at least 4 (resolution guard)")
        return self


class LocalField:
    """A field (typically u_{x0}) on a grid or window, with its gradient.

    la_density, when present, is the thin-set function r(x') with
    L_a(phi_{x0}) = |t|^a r(x'), broadcast over the node array.
    """

    def __init__(self, grid: WeightedGrid, values: np.ndarray, grad: np.ndarray | None = None,
                 la_density: np.ndarray | None = None):
        self.grid = grid
        self.values = values
        self.grad = gradient(grid, values) if grad is None else grad
        self.la_density = la_density

    @classmethod
    def from_polynomial(cls, grid, poly):
        return cls(grid, grid.sample_polynomial(poly))

    @classmethod
    def corrected(cls, solution, x0, r_max: float, margin: int = 3):
        """u_{x0} on a window of the solution grid large enough for radius r_max."""
        grid = solution.grid
        prob = solution.problem
        idx = grid.node_index(x0)
        half = int(math.ceil(r_max / grid.h)) + margin + 1
        height = min(half + 1, grid.shape[0])
        sl, sub = grid.window(idx, half, height)
        cobs = corrected_obstacle(prob.obstacle, x0, prob.k, prob.s)
        vals = solution.u[sl] - cobs.evaluate_on(sub.coords())
        dens = cobs.La_density(sub.thin_points())[None]
        return cls(sub, vals, la_density=np.broadcast_to(dens, sub.shape))


class CorrectedFieldCache:
    """Hands out u_{x0} fields, sharing one whole-grid field between centres
    whose Taylor polynomials coincide (u_{x0} depends on x0 only through it).

    Grids above `max_nodes` nodes fall back to per-centre windows.
    """

    def __init__(self, solution, max_nodes: float = 3e7):
        self.solution = solution
        self.max_nodes = max_nodes
        self._fields = []

    def get(self, x0, r_max: float) -> LocalField:
        sol = self.solution
        prob = sol.problem
        grid = sol.grid
        cobs = corrected_obstacle(prob.obstacle, x0, prob.k, prob.s)
        for T, f in self._fields:
            if T.allclose(cobs.taylor):
                return f
        if int(np.prod(grid.shape)) > self.max_nodes:
            return LocalField.corrected(sol, x0, r_max)
        vals = sol.u - cobs.evaluate_on(grid.coords())
        dens = cobs.La_density(grid.thin_points())[None]
        f = LocalField(grid, vals, la_density=np.broadcast_to(dens, grid.shape))
        self._fields.append((cobs.taylor, f))
        return f


def _field(solution, x0, r_max, cache):
    if cache is None:
        return LocalField.corrected(solution, x0, r_max)
    return cache.get(x0, r_max)


@dataclass
class FrequencyRecord:
    x0: tuple
    r: float
    H: float
    D: float
    G: float
    E: float
    I: float
    J: float

    def row(self):
        return asdict(self)


def frequency_integrals(field: LocalField, x0, r: float, min_cells: float = 4.0) -> dict:
    """H, D, G, E and two auxiliary integrals at one radius."""
    grid = field.grid
    samples, ref = ball_samples(grid, x0, r, min_cells=min_cells)
    u = gather(samples, ref, field.values)
    g = gather(samples, ref, field.grad)  # (n+1, m)
    rho = samples.dist
    w = samples.weight
    x = rho / r
    ann = -cutoff_slope(x)
    ball = cutoff(x)
    safe = np.where(rho > 0, rho, 1.0)
    dnu = np.sum(g * samples.disp.T, axis=0) / safe
    out = {
        "H": float(np.sum(w * ann * u * u / safe)),
        "G": float(np.sum(w * ann * u * dnu)) / r,
        "D": float(np.sum(w * ball * np.sum(g * g, axis=0))),
        "E": float(np.sum(w * ann * rho * dnu * dnu)) / r ** 2,
        "L2": float(np.sum(w * (x < 1.0) * u * u)),
    }
    if field.la_density is not None:
        dens = gather(samples, ref, field.la_density)
        out["uLa"] = float(np.sum(w * ball * u * dens))
        out["gradLa"] = float(np.sum(w * ball * rho * dnu * dens))
    else:
        out["uLa"] = 0.0
        out["gradLa"] = 0.0
    return out


def frequency_record(field: LocalField, x0, r: float, config: AnalysisConfig | None = None) -> FrequencyRecord:
    config = config or AnalysisConfig()
    q = frequency_integrals(field, x0, r, min_cells=4.0)
    if not q["H"] > config.eps_H:
        raise DegenerateError(f"H = {q['H']:.3e} at r = {r:.4g} (point not analyzable)")
    I = r * q["G"] / q["H"]
    J = math.exp(config.C_mono * r ** config.theta) * I
    return FrequencyRecord(tuple(np.ravel(x0).tolist()), r, q["H"], q["D"], q["G"], q["E"], I, J)


def dyadic_radii(r_max: float, r_min: float) -> list[float]:
    radii = []
    r = r_max
    while r >= r_min * (1 - 1e-12):
        radii.append(r)
        r /= 2
    return radii


@dataclass
class FrequencyProfile:
    x0: tuple
    records: list
    I0: float = math.nan  # value at the smallest radius
    I0_extrapolated: float = math.nan
    lambda_slope: float = math.nan
    flags: list = field(default_factory=list)  # indices j with J(r_{j+1}) > J(r_j) + eps
    truncated: bool = False

    @property
    def radii(self):
        return np.array([rec.r for rec in self.records])

    def column(self, name):
        return np.array([getattr(rec, name) for rec in self.records])

    def recompute_J(self, C_mono: float, theta: float, eps_mono: float):
        for rec in self.records:
            rec.J = math.exp(C_mono * rec.r ** theta) * rec.I
        self.flags = monotonicity_flags(self.column("J"), eps_mono)
        return self


def monotonicity_flags(J: np.ndarray, eps: float) -> list:
    """Indices j (radii decreasing) where J(r_{j+1}) exceeds J(r_j) by more than eps."""
    return [j for j in range(len(J) - 1) if J[j + 1] - J[j] > eps]


def slope_homogeneity(radii, H, n: int, a: float) -> tuple[float, float]:
    """lambda from the least-squares slope of log H against log r, and the max misfit."""
    lr = np.log(np.asarray(radii))
    lh = np.log(np.asarray(H))
    if len(lr) < 2:
        return math.nan, math.nan
    A = np.vstack([lr, np.ones_like(lr)]).T
    coef, *_ = np.linalg.lstsq(A, lh, rcond=None)
    resid = float(np.max(np.abs(A @ coef - lh)))
    return 0.5 * (coef[0] - n - a), resid


def frequency_profile(field: LocalField, x0, config: AnalysisConfig | None = None,
                      radii=None) -> FrequencyProfile:
    config = config or AnalysisConfig()
    grid = field.grid
    if radii is None:
        radii = dyadic_radii(config.r_max, config.min_cells * grid.h)
    if not radii:
        raise ResolutionError("no admissible radius in the dyadic panel")
    records = []
    truncated = False
    for r in radii:
        try:
            records.append(frequency_record(field, x0, r, config))
        except DegenerateError:
            truncated = True
            break
    prof = FrequencyProfile(tuple(np.ravel(x0).tolist()), records, truncated=truncated)
    if not records:
        return prof
    I = prof.column("I")
    prof.I0 = float(I[-1])
    if len(I) >= 3:
        # linear fit of I against r over the three smallest radii, evaluated at r = 0
        rr = prof.radii[-3:]
        coef = np.polyfit(rr, I[-3:], 1)
        prof.I0_extrapolated = float(coef[1])
    else:
        prof.I0_extrapolated = prof.I0
    prof.lambda_slope, _ = slope_homogeneity(prof.radii, prof.column("H"), grid.n, grid.a)
    prof.flags = monotonicity_flags(prof.column("J"), config.eps_mono)
    return prof


def check_identities(field: LocalField, x0, radii, step: float | None = None) -> list[dict]:
    """Residuals of the H', D and D' identities, L2-vs-H and Cauchy-Schwarz per radius.

    Derivatives in r come from centred differences of log H and log D in
    log r, with step about `step` (default sqrt(h r)). The obstacle terms use
    L_a(u_{x0}) = -|t|^a r(x') off the thin set, as carried by `field.la_density`.
    """
    grid = field.grid
    n, a = grid.n, grid.a
    rows = []
    for r in radii:
        q = frequency_integrals(field, x0, r)
        # centred differences in log r, exact for pure powers of r. The step
        # sqrt(h r) balances quadrature jitter (~h/dr) against truncation (~dr^2)
        dr = math.sqrt(grid.h * r) if step is None else step
        ep = math.log1p(dr / r)
        qp = frequency_integrals(field, x0, r * math.exp(ep))
        qm = frequency_integrals(field, x0, r * math.exp(-ep), min_cells=2.0)
        H, D, G, E = q["H"], q["D"], q["G"], q["E"]
        Hp = _log_derivative(H, qp["H"], qm["H"], r, ep)
        Dp = _log_derivative(D, qp["D"], qm["D"], r, ep)
        h_rhs = (n + a) / r * H + 2 * G
        d_rhs = G + q["uLa"]
        dp_rhs = (n + a - 1) / r * D + 2 * E + 2.0 / r * q["gradLa"]
        scale_h = max(abs(Hp), abs(h_rhs), 1e-300)
        scale_d = max(abs(D), abs(G), 1e-300)
        scale_dp = max(abs(Dp), abs(dp_rhs), 1e-300)
        rows.append({
            "r": r, "H": H, "D": D, "G": G, "E": E,
            "Hprime_residual": abs(Hp - h_rhs) / scale_h,
            "D_residual": abs(D - d_rhs) / scale_d,
            "Dprime_residual": abs(Dp - dp_rhs) / scale_dp,
            "L2": q["L2"], "rH": r * H, "L2_vs_H_ok": q["L2"] <= r * H * (1 + 1e-12),
            "cauchy_schwarz": H * E - G * G,
            "cauchy_schwarz_ok": H * E - G * G >= -1e-8 * max(H * E, 1e-300),
        })
    return rows


def _log_derivative(f, fp, fm, r, ep):
    """d f / d r from values at r e^{+-ep}; falls back to plain differences when f vanishes."""
    if min(f, fp, fm) > 0:
        return f / r * (math.log(fp) - math.log(fm)) / (2 * ep)
    return (fp - fm) / (r * (math.exp(ep) - math.exp(-ep)))


def h_ratio_law(profile_radii, H, I, n: int, a: float) -> float:
    """Relative misfit of H(r1)/r1^{n+a} = H(r0)/r0^{n+a} exp(2 int I/t dt) over the panel.

    The integral is a trapezoid rule in log r on the supplied (increasing) radii.
    """
    r = np.asarray(profile_radii)
    order = np.argsort(r)
    r, H, I = r[order], np.asarray(H)[order], np.asarray(I)[order]
    lhs = np.log(H[-1] / r[-1] ** (n + a)) - np.log(H[0] / r[0] ** (n + a))
    trap = np.trapezoid if hasattr(np, "trapezoid") else np.trapz
    rhs = 2 * trap(I, np.log(r))
    return float(abs(lhs - rhs) / max(abs(rhs), 1e-300))


@dataclass
class DeltaVariation:
    x: tuple
    r0: float
    r1: float
    value: float


def delta_variation(field: LocalField, x, r0: float, r1: float,
                    config: AnalysisConfig | None = None) -> DeltaVariation:
    """(I(r1) + Lambda r1^theta) - (I(r0) + Lambda r0^theta)."""
    config = config or AnalysisConfig()
    if r0 > r1:
        raise ConfigurationError("delta_variation needs r0 <= r1")
    lam, th = config.Lambda_add, config.theta
    if r0 == r1:
        return DeltaVariation(tuple(np.ravel(x).tolist()), r0, r1, 0.0)
    I1 = frequency_record(field, x, r1, config).I
    I0 = frequency_record(field, x, r0, config).I
    return DeltaVariation(tuple(np.ravel(x).tolist()), r0, r1, (I1 + lam * r1 ** th) - (I0 + lam * r0 ** th))


def spatial_oscillation_diag(solution, x1, x2, tau: float, config: AnalysisConfig | None = None,
                             cache: CorrectedFieldCache | None = None) -> dict:
    """|I_{x1}(10 tau) - I_{x2}(10 tau)| against sqrt(Delta_{3tau}^{24tau}) at both points plus tau^theta.

    Negative radial variations are clipped at zero before the square root.
    """
    config = config or AnalysisConfig()
    out = {"x1": tuple(np.ravel(x1).tolist()), "x2": tuple(np.ravel(x2).tolist()), "tau": tau}
    vals = {}
    for name, x in (("x1", x1), ("x2", x2)):
        f = _field(solution, x, 24 * tau, cache)
        I10 = frequency_record(f, x, 10 * tau, config).I
        dv = delta_variation(f, x, 3 * tau, 24 * tau, config).value
        vals[name] = (I10, dv)
    lhs = abs(vals["x1"][0] - vals["x2"][0])
    rhs = (math.sqrt(max(vals["x1"][1], 0.0)) + math.sqrt(max(vals["x2"][1], 0.0))
           + tau ** config.theta)
    out.update(lhs=lhs, rhs_core=rhs, ratio=lhs / rhs, delta_x1=vals["x1"][1], delta_x2=vals["x2"][1])
    return out


def spatial_comparability(solution, x0, rho: float, points, config: AnalysisConfig | None = None) -> dict:
    """Ratios H_{u_x}(rho)/H_{u_0}(rho), D ratios and |I_{u_0} - I_{u_x}| over points of B'_{rho/2}(x0)."""
    config = config or AnalysisConfig()
    base = frequency_record(LocalField.corrected(solution, x0, rho), x0, rho, config)
    hr, dr, di = [], [], []
    for x in points:
        if np.linalg.norm(np.asarray(x) - np.asarray(x0)) >= rho / 2:
            continue
        rec = frequency_record(LocalField.corrected(solution, x, rho), x, rho, config)
        hr.append(rec.H / base.H)
        dr.append(rec.D / base.D)
        di.append(abs(rec.I - base.I))
    if not hr:
        return {"count": 0}
    return {"count": len(hr), "H_ratio_min": min(hr), "H_ratio_max": max(hr),
            "D_ratio_min": min(dr), "D_ratio_max": max(dr), "I_diff_max": max(di)}


def calibrate_C_mono(profiles, theta: float, eps_mono: float,
                     ladder=(0.0, 0.5, 1, 2, 4, 8, 16, 32, 64, 128)) -> float:
    """Smallest ladder value making J monotone (up to eps) on every profile.

    Returns inf when no value of the ladder works.
    """
    for C in ladder:
        ok = True
        for prof in profiles:
            J = np.array([math.exp(C * rec.r ** theta) * rec.I for rec in prof.records])
            if monotonicity_flags(J, eps_mono):
                ok = False
                break
        if ok:
            return float(C)
    return math.inf


# --------------------------------------------------------------------------
# classification of limiting frequencies


@dataclass(frozen=True)
class FrequencyClass:
    name: str  # Regular, Singular, OddPlusS, EvenPlus2s or Other
    m: int | None
    candidate: float | None
    ambiguous: bool = False

    def __str__(self):
        return self.name if self.m is None else f"{self.name}({self.m})"


def classify_frequency(lam: float, s: float, tol: float = 0.05) -> FrequencyClass:
    if not lam > 0:
        raise ConfigurationError("frequency must be positive")
    cands = [("Regular", None, 1.0 + s)]
    m_max = int(lam / 2) + 2
    for m in range(1, m_max + 1):
        cands.append(("Singular", m, 2.0 * m))
        if m >= 2:
            cands.append(("OddPlusS", m, 2.0 * m - 1.0 + s))
        cands.append(("EvenPlus2s", m, 2.0 * m + 2.0 * s))
    hits = [(abs(lam - c), name, m, c) for name, m, c in cands if abs(lam - c) <= tol]
    if not hits:
        return FrequencyClass("Other", None, None)
    hits.sort(key=lambda t: t[0])
    _, name, m, c = hits[0]
    distinct = {round(h[3], 12) for h in hits}
    return FrequencyClass(name, m, c, ambiguous=len(distinct) > 1)
