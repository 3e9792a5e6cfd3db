"""Quadrature primitives shared across the library.

Everything here integrates functions with power-law singularities of the form
rho^(-s) against polar volume elements rho^(d-1) drho.  The radial rules split
at a smoothly varying radius delta(theta) = delta0*Rex/(delta0+Rex) (harmonic
mean, always <= min(delta0, Rex) and analytic in theta), use Gauss-Jacobi with
weight u^(d-1-s) on the inner segment, and Gauss-Legendre on the outer one.
Angular rules switch to geometrically refined panels near the support rim,
where the chord length Rex(theta) develops a boundary layer of width
~sqrt(1-a/R) for base points at distance a from the center.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

__all__ = [
    "gauss_legendre_01",
    "gauss_jacobi_01",
    "jacobi_sym",
    "theta_panels_disk",
    "PolarFrame",
    "CenteredFrame",
    "kahan_sum",
]


@lru_cache(maxsize=128)
def gauss_legendre_01(n: int):
    """Nodes/weights for int_0^1 f(u) du."""
    x, w = leggauss(n)
    return (x + 1.0) / 2.0, w / 2.0


@lru_cache(maxsize=128)
def gauss_jacobi_01(n: int, beta: float, alpha: float = 0.0):
    """Nodes/weights for int_0^1 (1-u)^alpha u^beta f(u) du, alpha,beta > -1."""
    if alpha <= -1 or beta <= -1:
        raise ValueError(f"Jacobi exponents must exceed -1, got ({alpha}, {beta})")
    x, w = roots_jacobi(n, alpha, beta)
    return (x + 1.0) / 2.0, w * 2.0 ** (-(alpha + beta + 1.0))


@lru_cache(maxsize=128)
def jacobi_sym(n: int, expo: float):
    """Nodes/weights for int_{-1}^{1} (1-c^2)^expo f(c) dc."""
    x, w = roots_jacobi(n, expo, expo)
    return x, w


def kahan_sum(values) -> float:
    """Compensated sum with fixed left-to-right order (cross-run determinism)."""
    total = 0.0
    comp = 0.0
    for v in np.asarray(values, dtype=float).ravel():
        y = v - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


# ---------------------------------------------------------------------------
# angular rules
# ---------------------------------------------------------------------------

def theta_panels_disk(center_offset: float, radius: float, n_uniform: int = 48,
                      n_panel: int = 24, ratio: float = 2.0,
                      refine_factor: float = 0.25):
    """Angular nodes/weights for polar integration over a disk of given radius
    from a base point at distance ``center_offset`` from the disk center.

    Returns offsets relative to the outward direction; caller rotates.
    Uniform midpoint rule well inside; geometric panels focused on the
    outward direction once the boundary layer in Rex(theta) becomes thinner
    than the uniform resolution.
    """
    a = center_offset / radius
    if a < 0.8:
        th = (np.arange(n_uniform) + 0.5) * 2.0 * np.pi / n_uniform
        return th, np.full(n_uniform, 2.0 * np.pi / n_uniform)
    layer = np.sqrt(max(1.0 - a, 1e-30))
    target = max(refine_factor * layer, 1e-6)
    edges = [np.pi]
    x = np.pi
    while x > target:
        x /= ratio
        edges.append(x)
    edges.append(0.0)
    edges = np.array(edges[::-1])
    xg, wg = gauss_legendre_01(n_panel)
    th, w = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        span = hi - lo
        for sgn in (1.0, -1.0):
            th.append(sgn * (lo + span * xg))
            w.append(wg * span)
    return np.concatenate(th), np.concatenate(w)


# ---------------------------------------------------------------------------
# polar frames
# ---------------------------------------------------------------------------

class PolarFrame:
    """Fixed desingularized quadrature nodes around base points inside a
    convex support (d-dim ball or interval).

    For base points P (B, d) the frame integrates
        int_support  rho^{-s} * smooth(y) dy
    as  sum over nodes of  W_sing * [smooth * 1] + W_reg * [rho^{-s} smooth],
    i.e. the inner (singular) block expects the caller to supply the smooth
    factor f(y)*rho^s, the outer block the raw integrand f(y).

    Attributes
    ----------
    Y_sing, Y_reg : (B, n_th, n_r, d) node positions
    RHO_sing, RHO_reg : (B, n_th, n_r) radii
    W_sing, W_reg : matching weights (include the angular weight and the
        full polar volume element; W_sing additionally absorbs rho^{-s})
    """

    def __init__(self, points, support, s: float, n_theta: int = 48,
                 n_r_sing: int = 16, n_r_reg: int = 16, delta0: float | None = None):
        P = np.atleast_2d(np.asarray(points, dtype=float))
        self.P = P
        self.s = float(s)
        d = P.shape[1]
        self.d = d
        if d == 1:
            th_dirs = np.array([[1.0], [-1.0]])
            wth = np.array([1.0, 1.0])
            # Rex per (B, 2): distance to interval ends along each direction
            lo, hi = support.interval()
            Rex = np.stack([hi - P[:, 0], P[:, 0] - lo], axis=-1)
            if np.any(Rex < -1e-12):
                raise ValueError("base point outside interval support")
            Rex = np.clip(Rex, 1e-300, None)
            om = np.broadcast_to(th_dirs[None, :, :], (len(P), 2, 1))
            WTH = np.broadcast_to(wth[None, :], (len(P), 2))
        else:
            cen, R = support.ball()
            rel = P - cen
            a = np.linalg.norm(rel, axis=1)
            if np.any(a > R * (1 + 1e-12)):
                raise ValueError("base point outside ball support")
            th_list, w_list, dirs = [], [], []
            for i in range(len(P)):
                th_i, w_i = theta_panels_disk(a[i], R, n_uniform=n_theta)
                phi = np.arctan2(rel[i, 1], rel[i, 0]) if a[i] > 0 else 0.0
                ang = phi + th_i
                th_list.append(ang)
                w_list.append(w_i)
            n_max = max(len(t) for t in th_list)
            ANG = np.zeros((len(P), n_max))
            WTH = np.zeros((len(P), n_max))
            for i, (t, w) in enumerate(zip(th_list, w_list)):
                ANG[i, : len(t)] = t
                WTH[i, : len(t)] = w
            om = np.stack([np.cos(ANG), np.sin(ANG)], axis=-1)
            b = np.sum(rel[:, None, :] * om, axis=-1)
            disc = b * b + (R * R - (a * a)[:, None])
            Rex = -b + np.sqrt(np.clip(disc, 0.0, None))
            Rex = np.clip(Rex, 1e-300, None)
        if delta0 is None:
            delta0 = 0.5 * support.scale()
        delta = delta0 * Rex / (delta0 + Rex)

        beta = d - 1.0 - s
        u_s, w_s = gauss_jacobi_01(n_r_sing, beta)
        u_r, w_r = gauss_legendre_01(n_r_reg)

        RHO_s = delta[..., None] * u_s
        W_s = WTH[..., None] * (delta[..., None] ** (d - s)) * w_s
        span = Rex - delta
        RHO_r = delta[..., None] + span[..., None] * u_r
        W_r = WTH[..., None] * span[..., None] * w_r * RHO_r ** (d - 1)

        OM = om[:, :, None, :]
        self.Y_sing = P[:, None, None, :] + RHO_s[..., None] * OM
        self.Y_reg = P[:, None, None, :] + RHO_r[..., None] * OM
        self.RHO_sing = RHO_s
        self.RHO_reg = RHO_r
        self.W_sing = W_s
        self.W_reg = W_r
        # closed-form weight of the pure power part per theta ray:
        # int_0^delta rho^{d-1-s} drho  (used by log-split helpers)
        self._delta = delta
        self._WTH = WTH

    def integrate_smooth_pair(self, f_sing_smooth, f_reg):
        """Sum  W_sing * f_sing_smooth(Y_sing)  +  W_reg * f_reg(Y_reg), per base point.

        f_sing_smooth receives (Y, RHO) and must return the integrand with the
        rho^{-s} factor removed; f_reg receives (Y, RHO) and returns the raw
        integrand.
        """
        a = np.sum(self.W_sing * f_sing_smooth(self.Y_sing, self.RHO_sing), axis=(1, 2))
        b = np.sum(self.W_reg * f_reg(self.Y_reg, self.RHO_reg), axis=(1, 2))
        return a + b

    def log_power_weight(self):
        """Closed form of  sum_theta wth * int_0^delta rho^{d-1} log(1/rho) drho,
        per base point (the exactly integrable -log(rho) part for s=0)."""
        d = self.d
        delta = self._delta
        val = delta ** d / d ** 2 - delta ** d * np.log(delta) / d
        return np.sum(self._WTH * val, axis=-1)


class CenteredFrame:
    """Polar quadrature around base points over point-centered disks of a
    shared radius (full circles, constant split radius).  Uniform angular
    nodes keep the exact cancellation of trace-free angular harmonics, which
    the second-derivative commutator integrands rely on.

    Integrates  rho^{-q} * smooth  like PolarFrame: the singular block expects
    the caller to strip rho^{-q}, the graded regular panels take the raw
    integrand.
    """

    def __init__(self, points, radius: float, q: float, n_theta: int = 48,
                 n_r_sing: int = 16, n_r_reg: int = 12, delta0: float | None = None,
                 panel_ratio: float = 2.0):
        P = np.atleast_2d(np.asarray(points, dtype=float))
        self.P = P
        d = P.shape[1]
        self.d = d
        if d == 1:
            om = np.array([[1.0], [-1.0]])
            wth = np.array([1.0, 1.0])
        elif d == 2:
            th = (np.arange(n_theta) + 0.5) * 2.0 * np.pi / n_theta
            om = np.stack([np.cos(th), np.sin(th)], axis=-1)
            wth = np.full(n_theta, 2.0 * np.pi / n_theta)
        else:
            raise ValueError("centered frames implemented for d <= 2")
        if delta0 is None:
            delta0 = radius / 4.0
        delta = min(delta0, radius / 2.0)
        beta = d - 1.0 - q
        u_s, w_s = gauss_jacobi_01(n_r_sing, beta)
        rho_s = delta * u_s                                   # (n_r,)
        w_sing = delta ** (d - q) * w_s
        edges = [delta]
        while edges[-1] < radius:
            edges.append(min(edges[-1] * panel_ratio, radius))
        u_r, w_r = gauss_legendre_01(n_r_reg)
        rho_r, w_reg = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            rho = lo + (hi - lo) * u_r
            rho_r.append(rho)
            w_reg.append((hi - lo) * w_r * rho ** (d - 1))
        rho_r = np.concatenate(rho_r)
        w_reg = np.concatenate(w_reg)
        B = len(P)
        self.RHO_sing = np.broadcast_to(rho_s, (B, len(om), len(rho_s)))
        self.RHO_reg = np.broadcast_to(rho_r, (B, len(om), len(rho_r)))
        self.W_sing = np.broadcast_to(wth[:, None] * w_sing, (B, len(om), len(rho_s)))
        self.W_reg = np.broadcast_to(wth[:, None] * w_reg, (B, len(om), len(rho_r)))
        OM = om[None, :, None, :]
        self.Y_sing = P[:, None, None, :] + self.RHO_sing[..., None] * OM
        self.Y_reg = P[:, None, None, :] + self.RHO_reg[..., None] * OM
