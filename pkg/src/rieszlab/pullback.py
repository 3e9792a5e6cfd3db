"""Pullback quadrature along transport maps Phi_t = I + t v.

Everything a finite-difference derivative of the modulated energy needs is a
*remainder*: integrals of g(Phi_t x - Phi_t y) - g(x - y) against fixed node
sets in the original coordinates.  Quadrature nodes never move with t, only
the integrand does, so the quadrature error is a smooth function of t of the
same O(t) size as the remainder itself; difference quotients then see
relative errors at the level of the rule, not amplified by 1/h.

The remainder integrands keep the kernel's rho^(-s) singularity profile
(ratios like (|Phi x - Phi y| / |x - y|)^(-s) are smooth), so the standard
desingularized polar frames apply unchanged.  For s = 0 the log kernel
cancels exactly: g(r1) - g(r0) = -log(r1/r0).
"""
from __future__ import annotations

import numpy as np

from .errors import CapabilityError
from .geometry import Ball
from .quadrature import PolarFrame, gauss_legendre_01

__all__ = [
    "energy_remainders",
    "pushed_potential",
    "pm_integrals",
    "mm_integral",
    "outer_nodes",
]


# ---------------------------------------------------------------------------
# outer integration grids over a support
# ---------------------------------------------------------------------------

def outer_nodes(support, n_r: int = 24, n_t: int = 48):
    """Nodes/weights integrating dy over a ball/interval support.

    Radial nodes cluster quadratically toward the rim: integrands built from
    interior potential-type integrals develop (R - a)^(2-s) endpoint behavior
    there, which the substitution a = R (1 - (1-u)^2) renders smooth (or, for
    s = 0, an (1-u)^4 log(1-u) term that Gauss rules resolve to ~1e-12).

    Returns a list of (points (B, d), weights (B,)) groups; for a disk each
    radial ring is one group so downstream polar frames share geometry.
    """
    if hasattr(support, "interval") and support.d == 1:
        a, b = support.interval()
        n = max(n_r, 16)
        u, w = gauss_legendre_01(n)
        mid = 0.5 * (a + b)
        half = 0.5 * (b - a)
        # cluster toward both endpoints, one map per half interval
        xi = 1.0 - (1.0 - u) ** 2
        dxi = 2.0 * (1.0 - u)
        left = (mid - half * xi)[::-1]
        wl = (half * w * dxi)[::-1]
        right = mid + half * xi
        wr = half * w * dxi
        pts = np.concatenate([left, right])[:, None]
        return [(pts, np.concatenate([wl, wr]))]
    c, R = support.ball()
    u, w = gauss_legendre_01(n_r)
    xi = 1.0 - (1.0 - u) ** 2
    rr = R * xi
    wr = w * R * 2.0 * (1.0 - u)
    th = (np.arange(n_t) + 0.5) * 2 * np.pi / n_t
    wth = 2 * np.pi / n_t
    groups = []
    for ri, wi in zip(rr, wr):
        pts = c + ri * np.stack([np.cos(th), np.sin(th)], axis=-1)
        groups.append((pts, np.full(n_t, wi * ri * wth)))
    return groups


# ---------------------------------------------------------------------------
# remainder integrals
# ---------------------------------------------------------------------------

class _RemFrame:
    """Polar frame over a support with cached field values at the nodes."""

    def __init__(self, kernel, points, support, field, density_fn,
                 n_theta=48, n_r_sing=14, n_r_reg=14):
        self.kernel = kernel
        self.frame = PolarFrame(points, support, kernel.s,
                                n_theta=n_theta, n_r_sing=n_r_sing, n_r_reg=n_r_reg)
        self.P = self.frame.P
        self.vP = field(self.P)
        self.Ys = self.frame.Y_sing
        self.Yr = self.frame.Y_reg
        self.vYs = field(self.Ys)
        self.vYr = field(self.Yr)
        self.DVs = self.vP[:, None, None, :] - self.vYs
        self.DVr = self.vP[:, None, None, :] - self.vYr
        self.W0s = self.P[:, None, None, :] - self.Ys
        self.W0r = self.P[:, None, None, :] - self.Yr
        self.r0s = np.sqrt(np.sum(self.W0s * self.W0s, axis=-1))
        self.r0r = np.sqrt(np.sum(self.W0r * self.W0r, axis=-1))
        self.dens_s = density_fn(self.Ys)
        self.dens_r = density_fn(self.Yr)

    def rem(self, t: float):
        """int [g(Phi p - Phi y) - g(p - y)] mu(y) dy, per base point."""
        s = self.kernel.s
        D1 = self.W0s + t * self.DVs
        r1 = np.sqrt(np.sum(D1 * D1, axis=-1))
        if s == 0:
            sm = -np.log(r1 / self.r0s)
        else:
            sm = (r1 ** (-s) - self.r0s ** (-s)) / s * self.frame.RHO_sing ** s
        a = np.sum(self.frame.W_sing * sm * self.dens_s, axis=(1, 2))
        D1 = self.W0r + t * self.DVr
        r1 = np.sqrt(np.sum(D1 * D1, axis=-1))
        if s == 0:
            gr = -np.log(r1 / self.r0r)
        else:
            gr = (r1 ** (-s) - self.r0r ** (-s)) / s
        b = np.sum(self.frame.W_reg * gr * self.dens_r, axis=(1, 2))
        return a + b

    def kernel_integral(self, func_sing, func_reg):
        """Generic: sum W_sing*func_sing(...)*dens + W_reg*func_reg(...)*dens."""
        a = np.sum(self.frame.W_sing * func_sing(self) * self.dens_s, axis=(1, 2))
        b = np.sum(self.frame.W_reg * func_reg(self) * self.dens_r, axis=(1, 2))
        return a + b


def _field_support_ball(field, mu):
    """Ball covering supp v when the field is compact and inside supp mu."""
    ell = getattr(field, "support_radius", np.inf)
    if not np.isfinite(ell):
        return None
    center = np.asarray(field.center, dtype=float)
    ball = Ball(tuple(center), float(ell))
    sup = mu.support
    if hasattr(sup, "ball"):
        c, R = sup.ball()
        if np.linalg.norm(center - c) + ell <= R * (1 + 1e-12):
            return ball
    if hasattr(sup, "interval") and mu.d == 1:
        a, b = sup.interval()
        if a <= center[0] - ell and center[0] + ell <= b:
            return ball
    return None


def energy_remainders(kernel, mu, field, tvals, config=None, mode: str = "all",
                      n_theta: int = 48, n_r: int = 14, n_outer=(24, 48)):
    """{t: F(t) - F(0)} for F(t) = modulated energy of the transported pair
    (mode='all', config required), or just the self-energy remainder
    (1/2) iint [g(Phi x - Phi y) - g(x-y)] dmu dmu (mode='self')."""
    tvals = list(tvals)
    dens = lambda Y: mu.density(Y.reshape(-1, mu.d)).reshape(Y.shape[:-1])
    out = {t: 0.0 for t in tvals}

    # self remainder: 2*int_{x in S} int_{y in supp} - int_{x in S} int_{y in S},
    # with S = supp v when compact (rem vanishes if both points miss S)
    S = _field_support_ball(field, mu)
    if S is None:
        groups = outer_nodes(mu.support, *n_outer)
        for pts, w in groups:
            fr = _RemFrame(kernel, pts, mu.support, field, dens,
                           n_theta=max(n_theta // 1, 32), n_r_sing=n_r, n_r_reg=n_r)
            dens_out = mu.density(pts)
            for t in tvals:
                out[t] += 0.5 * float(np.sum(w * dens_out * fr.rem(t)))
    else:
        groups = outer_nodes(S, *n_outer)
        for pts, w in groups:
            fr_full = _RemFrame(kernel, pts, mu.support, field, dens,
                                n_theta=max(n_theta // 1, 32), n_r_sing=n_r, n_r_reg=n_r)
            fr_S = _RemFrame(kernel, pts, S, field, dens,
                             n_theta=max(n_theta // 1, 32), n_r_sing=n_r, n_r_reg=n_r)
            dens_out = mu.density(pts)
            for t in tvals:
                out[t] += 0.5 * float(
                    np.sum(w * dens_out * (2.0 * fr_full.rem(t) - fr_S.rem(t)))
                )

    if mode == "self":
        return out

    if config is None:
        raise CapabilityError("mode='all' requires a configuration")
    X = np.asarray(config.points if hasattr(config, "points") else config, dtype=float)
    N = len(X)
    vX = field(X)
    iu = ~np.eye(N, dtype=bool)
    W0 = (X[:, None, :] - X[None, :, :])[iu]
    DV = (vX[:, None, :] - vX[None, :, :])[iu]
    r0 = np.sqrt(np.sum(W0 * W0, axis=-1))
    fr_cross = _RemFrame(kernel, X, mu.support, field, dens,
                         n_theta=n_theta, n_r_sing=n_r + 2, n_r_reg=n_r + 2)
    s = kernel.s
    for t in tvals:
        D1 = W0 + t * DV
        r1 = np.sqrt(np.sum(D1 * D1, axis=-1))
        if s == 0:
            pair = -np.log(r1 / r0)
        else:
            pair = (r1 ** (-s) - r0 ** (-s)) / s
        pair_rem = 0.5 / N ** 2 * float(np.sum(pair))
        cross_rem = float(np.mean(fr_cross.rem(t)))
        out[t] = pair_rem - cross_rem + out[t]
    return out


# ---------------------------------------------------------------------------
# pushed-measure potential
# ---------------------------------------------------------------------------

def pushed_potential(kernel, base, field, t, p):
    """g * ((I + t v)#mu) at p, by pullback to the base support."""
    p = np.asarray(p, dtype=float)
    squeeze = p.ndim == 1
    P = np.atleast_2d(p)
    d = base.d
    if P.shape[1] == d:
        x, z = P, np.zeros(len(P))
    else:
        x, z = P[:, :d], P[:, d]
    # preimage of the horizontal part under Phi_t
    xstar = x.copy()
    for _ in range(80):
        xn = x - t * field(xstar)
        if np.max(np.abs(xn - xstar)) < 1e-15:
            xstar = xn
            break
        xstar = xn
    inside = base.support.contains(xstar) if hasattr(base.support, "contains") else np.ones(len(P), bool)
    dens = lambda Y: base.density(Y.reshape(-1, d)).reshape(Y.shape[:-1])
    out = np.empty(len(P))
    idx_in = np.nonzero(inside)[0]
    if len(idx_in):
        fr = PolarFrame(xstar[idx_in], base.support, kernel.s, n_theta=48, n_r_sing=16, n_r_reg=16)
        Phi = lambda Y: Y + t * field(Y)
        s = kernel.s
        Ys, Yr = fr.Y_sing, fr.Y_reg
        Ps = Phi(xstar[idx_in])  # == x up to Newton tolerance; use exact target x
        Ps = x[idx_in]
        zz = z[idx_in]
        D = Ps[:, None, None, :] - Phi(Ys)
        r1 = np.sqrt(np.sum(D * D, axis=-1) + zz[:, None, None] ** 2)
        if s == 0:
            # -log r1 = -log(r1/rho) - log rho; the second part integrates in
            # closed form against the frame when the density is frozen at the
            # base point; the variation term is regular
            dens_s = dens(Ys)
            dens_here = base.density(xstar[idx_in])
            sm = -np.log(r1 / fr.RHO_sing) * dens_s
            a = np.sum(fr.W_sing * sm, axis=(1, 2))
            logw = fr.log_power_weight()
            a += dens_here * logw
            corr = -np.log(fr.RHO_sing) * (dens_s - dens_here[:, None, None])
            a += np.sum(fr.W_sing * corr, axis=(1, 2))
        else:
            sm = (r1 / fr.RHO_sing) ** (-s) / s * dens(Ys)
            a = np.sum(fr.W_sing * sm, axis=(1, 2))
        D = Ps[:, None, None, :] - Phi(Yr)
        r1 = np.sqrt(np.sum(D * D, axis=-1) + zz[:, None, None] ** 2)
        b = np.sum(fr.W_reg * kernel.g(r1) * dens(Yr), axis=(1, 2))
        out[idx_in] = a + b
    idx_out = np.nonzero(~inside)[0]
    if len(idx_out):
        groups = outer_nodes(base.support, 32, 64)
        acc = np.zeros(len(idx_out))
        for pts, w in groups:
            moved = pts + t * field(pts)
            diff = x[idx_out][:, None, :] - moved[None, :, :]
            rr = np.sqrt(np.sum(diff * diff, axis=-1) + z[idx_out][:, None] ** 2)
            acc += np.sum(w * base.density(pts) * kernel.g(np.maximum(rr, 1e-300)), axis=-1)
        out[idx_out] = acc
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# transport-form integrals (particle-measure and measure-measure)
# ---------------------------------------------------------------------------

def pm_integrals(kernel, mu, field, points, n: int,
                 n_theta: int = 48, n_r: int = 16):
    """int K_n(p - y, v(p) - v(y)) dmu(y) for each p, where
    K_n(w, a) = grad^(n) g(w) : a^(n);  requires n >= 1 and p inside supp mu."""
    if n < 1:
        raise CapabilityError("transport integrals need n >= 1")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dens = lambda Y: mu.density(Y.reshape(-1, mu.d)).reshape(Y.shape[:-1])
    fr = _RemFrame(kernel, pts, mu.support, field, dens,
                   n_theta=n_theta, n_r_sing=n_r, n_r_reg=n_r)
    s = kernel.s
    # the contraction is rho^{-s} * smooth; multiplying by rho^{s} recovers the
    # smooth factor expected on the singular block (|p - y| == rho on the rays)
    Ks = kernel.contract(fr.W0s, fr.DVs, n) * fr.frame.RHO_sing ** s
    a = np.sum(fr.frame.W_sing * Ks * fr.dens_s, axis=(1, 2))
    Kr = kernel.contract(fr.W0r, fr.DVr, n)
    b = np.sum(fr.frame.W_reg * Kr * fr.dens_r, axis=(1, 2))
    return a + b


_MM_CACHE: dict = {}


def mm_integral(kernel, mu, field, n: int, n_outer=(24, 48),
                n_theta: int = 40, n_r: int = 14):
    """iint K_n(x - y, v(x) - v(y)) dmu(x) dmu(y), cached per instance data."""
    key = ((kernel.d, kernel.s), mu.cache_key(), field.cache_key(), n, n_outer, n_theta, n_r)
    if key in _MM_CACHE:
        return _MM_CACHE[key]
    S = _field_support_ball(field, mu)
    total = 0.0
    if S is None:
        for pts, w in outer_nodes(mu.support, *n_outer):
            inner = pm_integrals(kernel, mu, field, pts, n, n_theta=n_theta, n_r=n_r)
            total += float(np.sum(w * mu.density(pts) * inner))
    else:
        for pts, w in outer_nodes(S, *n_outer):
            inner_full = pm_integrals(kernel, mu, field, pts, n, n_theta=n_theta, n_r=n_r)
            innerS = _pm_over_support(kernel, mu, field, pts, S, n, n_theta, n_r)
            total += float(np.sum(w * mu.density(pts) * (2.0 * inner_full - innerS)))
    _MM_CACHE[key] = total
    return total


def _pm_over_support(kernel, mu, field, pts, support, n, n_theta, n_r):
    dens = lambda Y: mu.density(Y.reshape(-1, mu.d)).reshape(Y.shape[:-1])
    fr = _RemFrame(kernel, pts, support, field, dens,
                   n_theta=n_theta, n_r_sing=n_r, n_r_reg=n_r)
    Ks = kernel.contract(fr.W0s, fr.DVs, n) * fr.frame.RHO_sing ** kernel.s
    a = np.sum(fr.frame.W_sing * Ks * fr.dens_s, axis=(1, 2))
    Kr = kernel.contract(fr.W0r, fr.DVr, n)
    b = np.sum(fr.frame.W_reg * Kr * fr.dens_r, axis=(1, 2))
    return a + b
