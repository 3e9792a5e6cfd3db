"""The modulated energy and its truncated/localized/electric forms.

Whole-space identities used heavily below (all exact, derivable by testing
h_{N,alpha} against its own weighted Laplacian and applying the smearing
lemma g * delta_x^(eta) = g_eta(. - x)):

    F_N               = (1/2N^2) sum_{i!=j} g(x_i-x_j)
                        - (1/N) sum_i (g*mu)(x_i) + (1/2) iint g dmu dmu,

    calF^alpha        = (1/2N^2) sum_{i!=j} T_ij
                        - (1/N) sum_i (g*mu)(x_i) + (1/2) iint g dmu dmu,

    T_ij = int g_{alpha_j}(. - x_j) d delta_{x_i}^{(alpha_i)}
         = g(x_i - x_j)                          if |x_i-x_j| > alpha_i+alpha_j
         = g_{alpha_i}(|x_i-x_j|) - CAP_ij       otherwise,

with CAP_ij a single polar-cap integral of f_{alpha_j} over the smearing
sphere (the azimuthal weight integrates out because the smearing density and
the integrand only depend on the polar angle towards x_j; the resulting
weight is (1-c^2)^((s-1)/2) in c = cos(theta) for every admissible (d, k)).
In particular calF^alpha = F_N whenever alpha_i <= r_i, and increasing any
alpha_i can only decrease calF^alpha.

On a bounded window the electric form is integrated directly:
    F_N^Omega = (1/(2 c_ds)) [ int_{Omega x R^k} |z|^gamma |grad h_{N,r~}|^2
                - (c_ds/N^2) sum_{I_Omega} g(r~_i) ]
                - (1/N) sum_{I_Omega} int f_{r~_i}(x - x_i) dmu.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np

from .config import Configuration, LocalScales, local_scales, microscale, nn_radii
from .errors import CapabilityError, ParameterError
from .geometry import WholeSpace
from .kernel import RieszKernel
from .measure import BackgroundMeasure, smeared_excess_integral
from .quadrature import gauss_jacobi_01, gauss_legendre_01, jacobi_sym, kahan_sum

__all__ = [
    "EnergyReport",
    "modulated_energy",
    "pair_interaction_sum",
    "truncated_functional",
    "local_modulated_energy",
    "xi_bracket",
    "scale_sums",
    "electric_field_energy",
]


@dataclass
class EnergyReport:
    F_N: float
    pair_sum: float
    cross_term: float
    self_term: float
    F_N_local: float | None = None
    xi: float | None = None
    log_term: float = 0.0
    error_term: float = 0.0
    quadrature_tolerance: float | None = None

    def to_json(self, path=None):
        payload = {k: v for k, v in asdict(self).items()}
        text = json.dumps(payload, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def pair_interaction_sum(kernel: RieszKernel, points: np.ndarray) -> float:
    """(1/2N^2) sum_{i != j} g(x_i - x_j), compensated summation order."""
    pts = np.asarray(points, dtype=float)
    N = len(pts)
    if N < 2:
        return 0.0
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    iu = np.triu_indices(N, 1)
    vals = kernel.g(dist[iu])
    return float(kahan_sum(np.sort(vals)) / N ** 2)


def modulated_energy(config: Configuration, mu: BackgroundMeasure,
                     kernel: RieszKernel) -> EnergyReport:
    """F_N(X_N, mu) with the diagonal excised."""
    pts = config.points
    pair = pair_interaction_sum(kernel, pts)
    cross = float(np.mean(mu.potential(kernel, pts))) if config.N else 0.0
    selfe = mu.self_energy(kernel)
    return EnergyReport(F_N=pair - cross + selfe, pair_sum=pair,
                        cross_term=cross, self_term=selfe)


# ---------------------------------------------------------------------------
# truncated functional (whole-space algebraic path)
# ---------------------------------------------------------------------------

def _cap_integral(kernel: RieszKernel, r: float, a_i: float, a_j: float,
                  n_nodes: int = 48) -> float:
    """int f_{a_j}(. - x_j) d delta_{x_i}^{(a_i)} over the polar cap where the
    smearing sphere enters B(x_j, a_j); 1D Jacobi rule in c = cos(theta)."""
    s = kernel.s
    if r >= a_i + a_j:
        return 0.0
    if kernel.d == 1 and kernel.k == 0:
        # the smearing "sphere" is two points; f at distance 0 would diverge,
        # so sphere points exactly on x_j are nudged by a relative epsilon
        vals = [kernel.f_eta(max(abs(r + sgn * a_i), 1e-14 * a_i), a_j)
                for sgn in (1.0, -1.0)]
        return 0.5 * float(sum(vals))
    expo = (s - 1.0) / 2.0
    c_star = (r * r + a_i * a_i - a_j * a_j) / (2.0 * r * a_i)
    c_star = max(c_star, -1.0)
    if c_star >= 1.0:
        return 0.0
    # denominator: full integral of the weight
    cs, ws = jacobi_sym(n_nodes, expo)
    denom = float(np.sum(ws))
    if c_star <= -1.0 + 1e-14:
        # entire sphere inside the ball: plain symmetric Jacobi rule
        c = cs
        w = ws
        D = np.sqrt(np.maximum(r * r + a_i * a_i - 2 * r * a_i * c, 1e-300))
        return float(np.sum(w * kernel.f_eta(D, a_j))) / denom
    # cap c in (c_star, 1]: weight (1-c)^expo singular at c = 1, (1+c)^expo smooth
    u, w = gauss_jacobi_01(n_nodes, 0.0, expo)     # int_0^1 (1-u)^expo f(u) du
    span = 1.0 - c_star
    c = 1.0 - span * (1.0 - u)
    D = np.sqrt(np.maximum(r * r + a_i * a_i - 2 * r * a_i * c, 1e-300))
    vals = kernel.f_eta(np.maximum(D, 1e-300), a_j) * (1.0 + c) ** expo
    return float(np.sum(w * vals)) * span ** (expo + 1.0) / denom


def truncated_functional(config: Configuration, mu: BackgroundMeasure,
                         kernel: RieszKernel, alphas, region=None,
                         scales: LocalScales | None = None) -> float:
    """calF^alpha; exact algebraic reduction on the whole space, electric
    quadrature on a bounded window."""
    alphas = np.broadcast_to(np.asarray(alphas, dtype=float), (config.N,))
    if np.any(alphas < 0):
        raise ParameterError("truncation radii must be >= 0")
    if region is not None and not isinstance(region, WholeSpace):
        return _truncated_functional_window(config, mu, kernel, alphas, region, scales)
    pts = config.points
    N = config.N
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    terms = []
    for i in range(N):
        for j in range(N):
            if i == j:
                continue
            r = dist[i, j]
            if alphas[i] == 0.0:
                # unsmeared source: plain truncated interaction
                tij = float(kernel.g_eta(r, alphas[j]))
            elif r > alphas[i] + alphas[j]:
                tij = float(kernel.g(r))
            else:
                tij = float(kernel.g_eta(r, alphas[i])) - _cap_integral(
                    kernel, r, alphas[i], alphas[j]
                )
            terms.append(tij)
    pair = kahan_sum(np.sort(np.asarray(terms))) / (2.0 * N * N)
    cross = float(np.mean(mu.potential(kernel, pts)))
    selfe = mu.self_energy(kernel)
    return float(pair - cross + selfe)


def _truncated_functional_window(config, mu, kernel, alphas, region, scales):
    if scales is None:
        scales = local_scales(config, mu, region)
    idx = scales.indices
    if np.any(alphas[idx] <= 0):
        raise ParameterError("window functional needs positive radii inside the window")
    value, _tol = electric_field_energy(config, mu, kernel, alphas, region)
    N = config.N
    g_self = kahan_sum([kernel.g(alphas[i]) for i in idx])
    fints = kahan_sum(
        [smeared_excess_integral(kernel, mu, config.points[i], alphas[i]) for i in idx]
    )
    return float(
        (value - kernel.c_ds / N ** 2 * g_self) / (2.0 * kernel.c_ds) - fints / N
    )


# ---------------------------------------------------------------------------
# electric field energy over a window (quadrature path)
# ---------------------------------------------------------------------------

def _grad_h_truncated(config, mu, kernel, alphas, X, Z):
    """grad h_{N,alpha} at horizontal points X (..., d) and heights Z (...);
    returns (..., d + k) array."""
    pts = config.points
    N = config.N
    d = kernel.d
    P = X[..., None, :] - pts  # (..., N, d)
    r2 = np.sum(P * P, axis=-1) + Z[..., None] ** 2
    r = np.sqrt(r2)
    gp_over_r = -(r2 ** (-(kernel.s + 2.0) / 2.0))
    live = r >= alphas  # inside the truncation ball the gradient vanishes
    coef = np.where(live, gp_over_r, 0.0) / N
    out = np.empty(X.shape[:-1] + (d + kernel.k,))
    out[..., :d] = np.sum(coef[..., None] * P, axis=-2)
    if kernel.k == 1:
        out[..., d] = np.sum(coef * Z[..., None], axis=-1)
        pe = np.concatenate([X, Z[..., None]], axis=-1)
        out -= mu.force(kernel, pe.reshape(-1, d + 1)).reshape(out.shape)
    else:
        out -= mu.force(kernel, X.reshape(-1, d)).reshape(out.shape)
    return out


def electric_field_energy(config, mu, kernel, alphas, region,
                          nx: int = 24, nz: int = 24, refine_levels: int = 2,
                          tail_tol: float = 1e-8):
    """int_{Omega x R^k} |z|^gamma |grad h_{N,alpha}|^2 with Gauss-Jacobi in z
    and panel Gauss rules in x (panels split at particle/ball boundaries and
    refined near the particles).  Returns (value, reported tolerance)."""
    alphas = np.broadcast_to(np.asarray(alphas, dtype=float), (config.N,))
    d = kernel.d

    if d == 1:
        lo, hi = region.interval()
        breaks = {lo, hi}
        for x, a in zip(config.points[:, 0], alphas):
            for b in (x - a, x, x + a):
                if lo < b < hi:
                    breaks.add(float(b))
        edges = np.sort(np.fromiter(breaks, dtype=float))
        u, w = gauss_legendre_01(nx)
        xs, wx = [], []
        for e0, e1 in zip(edges[:-1], edges[1:]):
            xs.append(e0 + (e1 - e0) * u)
            wx.append((e1 - e0) * w)
        X = np.concatenate(xs)[:, None]
        WX = np.concatenate(wx)
    elif d == 2:
        X, WX = _panel_nodes_2d(config, alphas, region, nx, refine_levels)
    else:
        raise CapabilityError("electric energy quadrature implemented for d <= 2")

    if kernel.k == 0:
        G = _grad_h_truncated(config, mu, kernel, alphas, X, np.zeros(len(X)))
        val = float(np.sum(WX * np.sum(G * G, axis=-1)))
        return val, np.nan
    # k = 1: 2 * int_0^Zcut z^gamma |grad h|^2 dz + tail bound
    gamma = kernel.gamma
    s = kernel.s
    scale = max(region.scale() if np.isfinite(region.scale()) else 1.0, 1.0)
    size = np.max(np.abs(config.points)) + scale
    Zcut = 4.0 * size
    # tail: |grad h(x, z)| <= 2 z^{-s-1} for z > Zcut (unit masses both signs)
    def tail_bound(Z):
        area = WX.sum()
        return area * 4.0 * Z ** (gamma - 2 * s - 1) / (2 * s + 1 - gamma)
    while tail_bound(Zcut) > tail_tol and Zcut < 1e6:
        Zcut *= 1.5
    uz, wz = gauss_jacobi_01(nz, gamma)
    zs = Zcut * uz
    wzz = 2.0 * Zcut ** (gamma + 1.0) * wz
    total = 0.0
    for zi, wi in zip(zs, wzz):
        G = _grad_h_truncated(config, mu, kernel, alphas, X, np.full(len(X), zi))
        total += wi * float(np.sum(WX * np.sum(G * G, axis=-1)))
    return total, tail_bound(Zcut)


def _panel_nodes_2d(config, alphas, region, nx, refine_levels):
    lo, hi = region.bounding_box()
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    # panel edges: uniform base grid plus particle-centered refinement
    base = 8
    ex = np.linspace(lo[0], hi[0], base + 1)
    ey = np.linspace(lo[1], hi[1], base + 1)
    panels = [(ex[i], ex[i + 1], ey[j], ey[j + 1]) for i in range(base) for j in range(base)]
    for _ in range(refine_levels):
        new = []
        for (x0, x1, y0, y1) in panels:
            hit = False
            for (px, py), a in zip(config.points, alphas):
                rad = max(a, 0.25 * (x1 - x0))
                if x0 - rad <= px <= x1 + rad and y0 - rad <= py <= y1 + rad:
                    hit = True
                    break
            if hit and (x1 - x0) > 1e-3 * (hi[0] - lo[0]):
                xm, ym = (x0 + x1) / 2, (y0 + y1) / 2
                new.extend([(x0, xm, y0, ym), (xm, x1, y0, ym),
                            (x0, xm, ym, y1), (xm, x1, ym, y1)])
            else:
                new.append((x0, x1, y0, y1))
        panels = new
    u, w = gauss_legendre_01(max(nx // 4, 6))
    Xs, Ws = [], []
    for (x0, x1, y0, y1) in panels:
        gx = x0 + (x1 - x0) * u
        gy = y0 + (y1 - y0) * u
        XX, YY = np.meshgrid(gx, gy, indexing="ij")
        ww = np.outer(w * (x1 - x0), w * (y1 - y0))
        P = np.stack([XX.ravel(), YY.ravel()], axis=-1)
        keep = region.contains(P)
        Xs.append(P[keep])
        Ws.append(ww.ravel()[keep])
    return np.concatenate(Xs), np.concatenate(Ws)


# ---------------------------------------------------------------------------
# localized energy and the bracket
# ---------------------------------------------------------------------------

def local_modulated_energy(config: Configuration, mu: BackgroundMeasure,
                           kernel: RieszKernel, region=None) -> float:
    """F_N^Omega; reduces to F_N on the whole space (electric identity)."""
    if region is None or isinstance(region, WholeSpace):
        return modulated_energy(config, mu, kernel).F_N
    scales = local_scales(config, mu, region)
    return _truncated_functional_window(config, mu, kernel, scales.r_tilde,
                                        region, scales)


def xi_bracket(config: Configuration, mu: BackgroundMeasure, kernel: RieszKernel,
               C: float, region=None, F_window: float | None = None) -> EnergyReport:
    """Xi = (F_N^Omega - #I log(lambda)/(2N^2) 1_{s=0})
           + C #I |mu|_{L^inf(hat Omega)} lambda^{d-s} / N."""
    if C <= 0:
        raise ParameterError("bracket constant C must be positive")
    N = config.N
    if region is None or isinstance(region, WholeSpace):
        rep = modulated_energy(config, mu, kernel)
        lam = microscale(N, mu, None)
        n_in = N
        sup_hat = mu.sup_density(None)
        F_loc = rep.F_N
    else:
        scales = local_scales(config, mu, region)
        lam = scales.lam
        n_in = len(scales.indices)
        sup_hat = mu.sup_density(scales.hat_region)
        F_loc = F_window if F_window is not None else local_modulated_energy(
            config, mu, kernel, region
        )
        rep = EnergyReport(F_N=np.nan, pair_sum=np.nan, cross_term=np.nan,
                           self_term=np.nan)
    log_term = (n_in * np.log(lam) / (2.0 * N * N)) if kernel.s == 0 else 0.0
    err_term = C * n_in * sup_hat * lam ** (kernel.d - kernel.s) / N
    rep.F_N_local = F_loc
    rep.log_term = -log_term
    rep.error_term = err_term
    rep.xi = F_loc - log_term + err_term
    return rep


# ---------------------------------------------------------------------------
# scale-resolved interaction sums
# ---------------------------------------------------------------------------

def scale_sums(config: Configuration, kernel: RieszKernel, region, lam: float,
               ell: float, a: float = 0.0):
    """Micro sum: pairs closer than lambda (with g, or g(./lambda) for s=0),
    both points in the window, the row point >= 2 lambda inside.  Meso sum:
    pairs in [lambda, ell] weighted |x_i-x_j|^(-s-a), row point >= 4 ell
    inside.  Returns dict with both values and the participating pair counts."""
    if lam > ell:
        raise ParameterError("need lambda <= ell")
    pts = config.points
    inside = region.contains(pts)
    dist_b = region.dist_to_boundary(pts)
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    np.fill_diagonal(dist, np.inf)
    both_in = inside[:, None] & inside[None, :]

    micro_rows = both_in & (dist_b[:, None] >= 2.0 * lam) & (dist <= lam)
    if kernel.s == 0:
        micro_vals = kernel.g(np.maximum(dist / lam, 1e-300))
    else:
        micro_vals = kernel.g(np.maximum(dist, 1e-300))
    micro = float(np.sum(np.where(micro_rows, micro_vals, 0.0)) / config.N ** 2)

    meso_rows = both_in & (dist_b[:, None] >= 4.0 * ell) & (dist >= lam) & (dist <= ell)
    meso_vals = np.where(meso_rows, dist ** (-(kernel.s + a)), 0.0)
    meso = float(np.sum(meso_vals) / config.N ** 2)
    return {
        "micro": micro,
        "meso": meso,
        "micro_pairs": int(micro_rows.sum()),
        "meso_pairs": int(meso_rows.sum()),
    }
