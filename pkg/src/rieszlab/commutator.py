"""Transport forms, commutator fields, recursions, and first-order identities.

The order-n transport form is the n-th t-derivative of the modulated energy
along x -> x + t v(x),

    T_n = (1/2) iint_{off-diag} grad^(n) g(x-y) : (v(x)-v(y))^(n)
                                d(mu_N - mu)^(x2)(x, y),

decomposed into particle-particle, particle-measure and measure-measure
parts.  Its finite-difference twin differentiates the pullback energy curve
F(t) directly and serves as the independent oracle.

Commutator fields over the extended space (f a signed source on R^d):

    kappa_t^(n)(p) = int grad^(n) g(p - y - t v(y)) : (vext(p)-vext(y))^(n) df(y)
    nu_i^(n)       = same with one extra gradient slot on g
    mu_ij^(n)      = same with two extra slots

satisfy, with derivatives falling only on g inside nu/mu,

    nu_i^(n)  = d_i kappa^(n) - n (d_i vext . nu^(n-1)),
    mu_ij^(n) = d_i nu_j^(n)  - n (d_i vext^k) mu_jk^(n-1),
    dt kappa_t^(n) + vext . grad kappa_t^(n)
                  = kappa_t^(n+1) + n ((vext . grad) vext) . nu_t^(n-1).

The advection correction in the last line vanishes identically when
(v . grad) v = 0 and at n = 0; it is required for the hierarchy to close at
order n >= 1 (checked here by finite differences).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import exp1

from .config import Configuration
from .errors import CapabilityError, ParameterError, SingularityError
from .geometry import Ball
from .kernel import RieszKernel
from .measure import BackgroundMeasure
from .pullback import energy_remainders, mm_integral, outer_nodes, pm_integrals
from .quadrature import PolarFrame, gauss_jacobi_01, gauss_legendre_01
from .transport import ExtendedField, TransportField, extend

__all__ = [
    "SignedSource",
    "AtomSource",
    "GaussianSource",
    "TransportFormReport",
    "transport_form",
    "fd_energy_derivative",
    "kappa_eval",
    "nu_eval",
    "mu_eval",
    "recursion_residuals",
    "l2gamma_seminorm",
    "first_order_identities",
    "kappa_l2_ratio",
]


# ---------------------------------------------------------------------------
# signed sources
# ---------------------------------------------------------------------------

class SignedSource:
    zero_mean: bool = False

    def total(self) -> float:
        raise NotImplementedError


@dataclass
class AtomSource(SignedSource):
    points: np.ndarray
    weights: np.ndarray
    zero_mean: bool = False

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.zero_mean and abs(self.weights.sum()) > 1e-12:
            raise ParameterError("zero-mean source with nonzero total weight")

    @property
    def d(self):
        return self.points.shape[1]

    def total(self) -> float:
        return float(self.weights.sum())


class GaussianSource(SignedSource):
    """Sum of isotropic Gaussians; closed potential/gradient/Hessian for the
    planar Coulomb kernel (d=2, s=0).  Effective support: 8 sigma tails."""

    def __init__(self, centers, sigmas, weights):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), (len(self.centers),)).copy()
        self.weights = np.broadcast_to(np.asarray(weights, dtype=float), (len(self.centers),)).copy()
        self.d = self.centers.shape[1]
        self.zero_mean = abs(self.weights.sum()) <= 1e-12
        mid = self.centers.mean(axis=0)
        rad = float(np.max(np.linalg.norm(self.centers - mid, axis=1) + 8.0 * self.sigmas))
        self.support = Ball(tuple(mid), rad)

    def scaled(self, factor: float) -> "GaussianSource":
        return GaussianSource(self.centers, self.sigmas, self.weights * factor)

    def total(self) -> float:
        return float(self.weights.sum())

    def density(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for c, s, w in zip(self.centers, self.sigmas, self.weights):
            r2 = np.sum((x - c) ** 2, axis=-1)
            out = out + w * np.exp(-r2 / (2 * s * s)) / ((2 * np.pi) ** (self.d / 2) * s ** self.d)
        return out

    def potential(self, x):
        """h^f = (-log|.|) * f, d = 2 planar Coulomb."""
        if self.d != 2:
            raise CapabilityError("closed potential implemented for d = 2")
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        GAMMA = 0.5772156649015329
        for c, s, w in zip(self.centers, self.sigmas, self.weights):
            r2 = np.sum((x - c) ** 2, axis=-1)
            u = r2 / (2 * s * s)
            small = u < 1e-12
            val = np.empty_like(u)
            val[small] = 0.5 * GAMMA - 0.5 * np.log(2 * s * s)
            un = np.maximum(u[~small], 1e-300)
            val[~small] = -0.5 * np.log(np.maximum(r2[~small], 1e-300)) + 0.5 * exp1(un)
            out = out + w * val
        return out

    def grad_potential(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for c, s, w in zip(self.centers, self.sigmas, self.weights):
            rel = x - c
            r2 = np.sum(rel * rel, axis=-1)
            u = r2 / (2 * s * s)
            small = u < 1e-12
            coef = np.empty_like(u)
            coef[small] = -1.0 / (2 * s * s)
            coef[~small] = np.expm1(-u[~small]) / r2[~small]
            out = out + w * coef[..., None] * rel
        return out

    def hess_potential(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (2,))
        eye = np.eye(2)
        for c, s, w in zip(self.centers, self.sigmas, self.weights):
            rel = x - c
            r2 = np.sum(rel * rel, axis=-1)
            u = r2 / (2 * s * s)
            ex = np.exp(-u)
            small = u < 1e-12
            M_over_r2 = np.empty_like(u)
            M_over_r2[small] = 1.0 / (2 * s * s)
            M_over_r2[~small] = -np.expm1(-u[~small]) / r2[~small]
            hpr = -M_over_r2
            hpp = M_over_r2 - ex / (s * s)
            rr = rel[..., :, None] * rel[..., None, :]
            rhat2 = rr / np.maximum(r2, 1e-300)[..., None, None]
            rhat2[small] = eye / 2.0
            out = out + w * ((hpp - hpr)[..., None, None] * rhat2 + hpr[..., None, None] * eye)
        return out

    def laplace_potential(self, x):
        """Delta h^f = -c_ds f for the planar Coulomb kernel (c_ds = 2 pi)."""
        return -2.0 * np.pi * self.density(x)


# ---------------------------------------------------------------------------
# transport form and its finite-difference twin
# ---------------------------------------------------------------------------

@dataclass
class TransportFormReport:
    value: float          # n-th derivative of F_N along the transport
    raw: float            # the symmetric double integral (= 2 * value)
    pp: float
    pm: float
    mm: float
    n: int


def transport_form(kernel: RieszKernel, config: Configuration,
                   mu: BackgroundMeasure, v: TransportField, n: int,
                   n_theta: int = 48, n_r: int = 16,
                   n_outer=(24, 48)) -> TransportFormReport:
    if n < 1:
        raise ParameterError("transport form defined for n >= 1")
    pts = config.points
    N = config.N
    vX = v(pts)
    iu = ~np.eye(N, dtype=bool)
    W = (pts[:, None, :] - pts[None, :, :])[iu]
    U = (vX[:, None, :] - vX[None, :, :])[iu]
    pp = float(np.sum(kernel.contract(W, U, n))) / N ** 2
    pm_vals = pm_integrals(kernel, mu, v, pts, n, n_theta=n_theta, n_r=n_r)
    pm = -2.0 * float(np.mean(pm_vals))
    mm = mm_integral(kernel, mu, v, n, n_outer=n_outer)
    raw = pp + pm + mm
    return TransportFormReport(value=0.5 * raw, raw=raw, pp=pp, pm=pm, mm=mm, n=n)


def fd_energy_derivative(kernel: RieszKernel, config: Configuration,
                         mu: BackgroundMeasure, v: TransportField, n: int,
                         h: float | None = None,
                         n_theta: int = 48, n_r: int = 14,
                         n_outer=(24, 48)) -> float:
    """Central differences (one Richardson level) of t -> F_N(Phi_t X, Phi_t#mu)
    at t = 0, computed on the pullback remainder curve."""
    if n not in (1, 2, 3):
        raise CapabilityError("finite-difference derivative implemented for n <= 3")
    gn = v.sup_norm(1)
    if h is None:
        h = 1e-3 / max(gn, 1.0)
    if h * gn >= 0.5:
        raise ParameterError("step too large for invertibility of the transport")
    if n in (1, 2):
        tvals = [h, -h, h / 2, -h / 2]
    else:
        tvals = [2 * h, h, -h, -2 * h, h / 2, h / 4, -h / 4, -h / 2]
    G = energy_remainders(kernel, mu, v, tvals, config=config,
                          n_theta=n_theta, n_r=n_r, n_outer=n_outer)
    if n == 1:
        D = (G[h] - G[-h]) / (2 * h)
        Db = (G[h / 2] - G[-h / 2]) / h
        return float((4 * Db - D) / 3)
    if n == 2:
        D = (G[h] + G[-h]) / h ** 2
        Db = (G[h / 2] + G[-h / 2]) / (h / 2) ** 2
        return float((4 * Db - D) / 3)
    D = (G[2 * h] - 2 * G[h] + 2 * G[-h] - G[-2 * h]) / (2 * h ** 3)
    Db = (G[h] - 2 * G[h / 2] + 2 * G[-h / 2] - G[-h]) / (2 * (h / 2) ** 3)
    return float((4 * Db - D) / 3)


# ---------------------------------------------------------------------------
# batched kappa / nu / mu evaluation
# ---------------------------------------------------------------------------

def _extended(v, kernel, ell=None):
    if isinstance(v, ExtendedField) or kernel.k == 0:
        return v
    if ell is None:
        ell = v.support_radius if np.isfinite(v.support_radius) else 1.0
    return extend(v, ell)


def _embed(x, kernel):
    x = np.asarray(x, dtype=float)
    if kernel.k == 0 or x.shape[-1] == kernel.d + kernel.k:
        return x
    pad = np.zeros(x.shape[:-1] + (1,))
    return np.concatenate([x, pad], axis=-1)


def _contract_kind(kernel, kind, W, U, n):
    if kind == "kappa":
        if n == 0:
            return kernel.g(np.sqrt(np.sum(W * W, axis=-1)))
        return kernel.contract(W, U, n)
    if kind == "nu":
        return kernel.contract_grad(W, U, n)
    if kind == "mu":
        return kernel.contract_hess(W, U, n)
    raise ValueError(kind)


def _sing_order(kernel, kind, n):
    """Effective radial singularity exponent of the integrand near the base
    point: rho^(-q) with q = s (kappa, n>=1), s+1 (nu), s+1 (mu after the
    exact angular cancellation of its leading trace-free term)."""
    if kind == "kappa":
        return kernel.s if n >= 1 else kernel.s
    return kernel.s + 1.0


def field_values(kernel: RieszKernel, kind: str, n: int, f: SignedSource,
                 v: TransportField, P, t: float = 0.0, ell: float | None = None,
                 n_theta: int = 48, n_r: int = 18):
    """Batched kappa/nu/mu over extended points P (E, d+k or d)."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    E = len(P)
    Pe = _embed(P, kernel)
    dim = kernel.d + kernel.k
    vext = _extended(v, kernel, ell)
    shape = {"kappa": (E,), "nu": (E, dim), "mu": (E, dim, dim)}[kind]
    out = np.zeros(shape)

    def v_of_points(Y):
        val = v(Y)
        if kernel.k == 1:
            val = np.concatenate([val, np.zeros(val.shape[:-1] + (1,))], axis=-1)
        return val

    def v_of_eval(Q):
        if kernel.k == 0:
            return v(Q)
        return vext(Q)

    if isinstance(f, AtomSource):
        Yt = f.points + t * v(f.points)
        W = Pe[:, None, :] - _embed(Yt, kernel)[None, :, :]
        rmin = np.sqrt(np.sum(W * W, axis=-1)).min()
        if rmin < 1e-12:
            raise SingularityError("evaluation point coincides with a source atom")
        U = v_of_eval(Pe)[:, None, :] - v_of_points(f.points)[None, :, :]
        K = _contract_kind(kernel, kind, W, U, n)
        return _weight_sum(out, f.weights, K, kind)

    assert isinstance(f, GaussianSource)
    sup = f.support
    z = Pe[:, -1] if kernel.k == 1 else np.zeros(E)
    # singular centers: horizontal preimages under Phi_t
    X = Pe[:, : kernel.d]
    cen = X.copy()
    for _ in range(60):
        nxt = X - t * v(cen)
        if np.max(np.abs(nxt - cen)) < 1e-15:
            cen = nxt
            break
        cen = nxt
    on_plane = np.abs(z) < 1e-10 * max(sup.radius, 1.0)
    inside = sup.contains(cen) & on_plane
    # --- smooth (outside) branch: shared graded grid over the source support
    idx_out = np.nonzero(~inside)[0]
    if len(idx_out):
        Y, Wq0 = _gaussian_grid(f)
        Wq = Wq0 * f.density(Y)
        Yt = Y + t * v(Y)
        W = Pe[idx_out, None, :] - _embed(Yt, kernel)[None, :, :]
        U = v_of_eval(Pe[idx_out])[:, None, :] - v_of_points(Y)[None, :, :]
        K = _contract_kind(kernel, kind, W, U, n)
        _weight_add(out, idx_out, Wq, K, kind)
    # --- singular (inside) branch: point-centered disks with uniform angles
    # (constant split radius preserves the exact angular cancellation that
    # the second-derivative integrands need)
    idx_in = np.nonzero(inside)[0]
    if len(idx_in):
        q = _sing_order(kernel, kind, n)
        beta = kernel.d - 1.0 - q
        if beta <= -1.0:
            raise CapabilityError(
                f"{kind} evaluation inside the source support diverges for s={kernel.s}, d={kernel.d}"
            )
        c_sup = np.asarray(sup.center, dtype=float)
        R_big = float(np.max(np.linalg.norm(cen[idx_in] - c_sup, axis=1))) + sup.radius
        delta0 = float(np.min(f.sigmas)) / 2.0
        fr = CenteredFrame(cen[idx_in], R_big, q, n_theta=n_theta,
                           n_r_sing=n_r, n_r_reg=max(n_r - 4, 10), delta0=delta0)
        for blk in ("sing", "reg"):
            Y = getattr(fr, f"Y_{blk}")
            Wq = getattr(fr, f"W_{blk}") * f.density(Y)
            RHO = getattr(fr, f"RHO_{blk}")
            Yt = Y + t * v(Y)
            W = Pe[idx_in, None, None, :] - _embed(Yt, kernel)
            U = v_of_eval(Pe[idx_in])[:, None, None, :] - v_of_points(Y)
            K = _contract_kind(kernel, kind, W, U, n)
            if blk == "sing":
                # the frame weight absorbs rho^{-q}; restore the smooth factor
                if kind == "mu":
                    K = K * RHO[..., None, None] ** q
                elif kind == "nu":
                    K = K * RHO[..., None] ** q
                else:
                    K = K * RHO ** q
            _weight_add_frame(out, idx_in, Wq, K, kind)
    return out


def _gaussian_grid(f: "GaussianSource", n_t: int = 64, n_per_ring: int = 8):
    """Graded polar grid over a Gaussian source: geometric radial panels from
    the narrowest peak scale out to the (8 sigma) support radius."""
    key = (id(f), n_t, n_per_ring)
    cached = _GRID_CACHE.get(key)
    if cached is not None:
        return cached
    c = np.asarray(f.support.center, dtype=float)
    R = f.support.radius
    smin = float(np.min(f.sigmas))
    edges = [0.0, smin / 4.0]
    while edges[-1] < R:
        edges.append(min(edges[-1] * 1.7, R))
    u, w = gauss_legendre_01(n_per_ring)
    th = (np.arange(n_t) + 0.5) * 2 * np.pi / n_t
    om = np.stack([np.cos(th), np.sin(th)], axis=-1)
    pts, wts = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        rr = lo + (hi - lo) * u
        wr = (hi - lo) * w * rr
        pts.append((c + rr[:, None, None] * om[None, :, :]).reshape(-1, 2))
        wts.append(np.repeat(wr, n_t) * (2 * np.pi / n_t))
    out = (np.concatenate(pts), np.concatenate(wts))
    _GRID_CACHE[key] = out
    return out


_GRID_CACHE: dict = {}


def _weight_sum(out, w, K, kind):
    if kind == "kappa":
        out[:] = np.sum(w * K, axis=-1)
    elif kind == "nu":
        out[:] = np.sum(w[None, :, None] * K, axis=1)
    else:
        out[:] = np.sum(w[None, :, None, None] * K, axis=1)
    return out


def _weight_add(out, idx, w, K, kind):
    if kind == "kappa":
        out[idx] += np.sum(w * K, axis=-1)
    elif kind == "nu":
        out[idx] += np.sum(w[None, :, None] * K, axis=1)
    else:
        out[idx] += np.sum(w[None, :, None, None] * K, axis=1)


def _weight_add_frame(out, idx, w, K, kind):
    if kind == "kappa":
        out[idx] += np.sum(w * K, axis=(1, 2))
    elif kind == "nu":
        out[idx] += np.sum(w[..., None] * K, axis=(1, 2))
    else:
        out[idx] += np.sum(w[..., None, None] * K, axis=(1, 2))


def kappa_eval(kernel: RieszKernel, n: int, f: SignedSource, v: TransportField,
               p, t: float = 0.0, ell: float | None = None) -> float:
    """kappa_t^(n),f at a single extended point."""
    if (n == 0 and isinstance(f, GaussianSource) and kernel.d == 2
            and kernel.s == 0 and t == 0.0):
        p = np.asarray(p, dtype=float)
        return float(f.potential(p[None, :2])[0])
    return float(field_values(kernel, "kappa", n, f, v, p, t=t, ell=ell)[0])


def nu_eval(kernel: RieszKernel, n: int, f: SignedSource, v: TransportField,
            p, t: float = 0.0, ell: float | None = None) -> np.ndarray:
    if n == 0 and isinstance(f, GaussianSource) and kernel.d == 2 and kernel.s == 0 and t == 0.0:
        p = np.asarray(p, dtype=float)
        return f.grad_potential(p[None, :2])[0]
    return field_values(kernel, "nu", n, f, v, p, t=t, ell=ell)[0]


def mu_eval(kernel: RieszKernel, n: int, f: SignedSource, v: TransportField,
            p, t: float = 0.0, ell: float | None = None) -> np.ndarray:
    if n == 0 and isinstance(f, GaussianSource) and kernel.d == 2 and kernel.s == 0 and t == 0.0:
        p = np.asarray(p, dtype=float)
        return f.hess_potential(p[None, :2])[0]
    return field_values(kernel, "mu", n, f, v, p, t=t, ell=ell)[0]


# ---------------------------------------------------------------------------
# recursion residual table
# ---------------------------------------------------------------------------

def recursion_residuals(kernel: RieszKernel, n: int, f: SignedSource,
                        v: TransportField, points, fd_step: float = 1e-3,
                        ell: float | None = None):
    """Residual rows for the nu/mu recursions and the transport hierarchy."""
    if n > 3:
        raise CapabilityError("residuals implemented for n <= 3")
    vext = _extended(v, kernel, ell)
    dim = kernel.d + kernel.k
    rows = []
    pts = np.atleast_2d(np.asarray(points, dtype=float))

    def kap(pp, t=0.0):
        return kappa_eval(kernel, n, f, v, pp, t=t, ell=ell)

    for p0 in pts:
        p = _embed(p0, kernel)
        scale = max(float(np.linalg.norm(p)), 1.0)
        hx = fd_step * scale
        Gv = vext.grad(p) if kernel.k == 1 else v.grad(p)    # [i, j] = d_i v^j
        nu_n = nu_eval(kernel, n, f, v, p, ell=ell)
        nu_prev = nu_eval(kernel, n - 1, f, v, p, ell=ell) if n >= 1 else np.zeros(dim)
        for i in range(dim):
            e = np.zeros(dim)
            e[i] = hx
            dk = (kap(p + e) - kap(p - e)) / (2 * hx)
            dk_f = (kap(p + e / 2) - kap(p - e / 2)) / hx
            dk = (4 * dk_f - dk) / 3
            rhs = dk - n * float(Gv[i] @ nu_prev)
            rows.append({"point": tuple(p0), "order": n, "identity": "nu-recursion",
                         "component": str(i), "residual": float(nu_n[i] - rhs)})
        mu_n = mu_eval(kernel, n, f, v, p, ell=ell)
        mu_prev = mu_eval(kernel, n - 1, f, v, p, ell=ell) if n >= 1 else np.zeros((dim, dim))
        for i in range(dim):
            e = np.zeros(dim)
            e[i] = hx
            dnu = (nu_eval(kernel, n, f, v, p + e, ell=ell)
                   - nu_eval(kernel, n, f, v, p - e, ell=ell)) / (2 * hx)
            dnu_f = (nu_eval(kernel, n, f, v, p + e / 2, ell=ell)
                     - nu_eval(kernel, n, f, v, p - e / 2, ell=ell)) / hx
            dnu = (4 * dnu_f - dnu) / 3
            for j in range(dim):
                rhs = dnu[j] - n * float(Gv[i] @ mu_prev[j])
                rows.append({"point": tuple(p0), "order": n, "identity": "mu-recursion",
                             "component": f"{i},{j}", "residual": float(mu_n[i, j] - rhs)})
        ht = fd_step / max(v.sup_norm(1), 1.0)
        dt = (kap(p, t=ht) - kap(p, t=-ht)) / (2 * ht)
        dt_f = (kap(p, t=ht / 2) - kap(p, t=-ht / 2)) / ht
        dt = (4 * dt_f - dt) / 3
        grad_k = np.empty(dim)
        for i in range(dim):
            e = np.zeros(dim)
            e[i] = hx
            gk = (kap(p + e) - kap(p - e)) / (2 * hx)
            gk_f = (kap(p + e / 2) - kap(p - e / 2)) / hx
            grad_k[i] = (4 * gk_f - gk) / 3
        vp = vext(p) if kernel.k == 1 else v(p)
        advect = float(vp @ grad_k)
        corr = n * float((vp @ Gv) @ nu_prev) if n >= 1 else 0.0
        kn1 = kappa_eval(kernel, n + 1, f, v, p, ell=ell)
        rows.append({"point": tuple(p0), "order": n, "identity": "hierarchy",
                     "component": "", "residual": float(dt + advect - corr - kn1)})
    return rows


# ---------------------------------------------------------------------------
# weighted seminorm
# ---------------------------------------------------------------------------

def l2gamma_seminorm(grad_func, kernel: RieszKernel, region: Ball,
                     n_r: int = 40, n_t: int = 64, nz: int = 24,
                     decay_rate: float | None = None,
                     decay_const: float | None = None):
    """(int_{region x R^k} |z|^gamma |grad field|^2)^(1/2), plus a tail bound
    when decay data |grad| <= decay_const * r^(-decay_rate) is supplied."""
    d = kernel.d
    if d == 1:
        a_, b_ = region.interval()
        u, w = gauss_legendre_01(n_r * 2)
        X = (a_ + (b_ - a_) * u)[:, None]
        WX = (b_ - a_) * w
    elif d == 2:
        c, R = region.ball()
        u, w = gauss_legendre_01(n_r)
        rr = u * R
        th = (np.arange(n_t) + 0.5) * 2 * np.pi / n_t
        X = c + np.stack([np.outer(rr, np.cos(th)), np.outer(rr, np.sin(th))], axis=-1).reshape(-1, 2)
        WX = np.outer(w * R * rr, np.full(n_t, 2 * np.pi / n_t)).ravel()
    else:
        raise CapabilityError("seminorm quadrature implemented for d <= 2")
    if kernel.k == 0:
        G = grad_func(X)
        val = float(np.sum(WX * np.sum(G * G, axis=-1)))
    else:
        gamma = kernel.gamma
        Zcut = 6.0 * region.scale()
        uz, wz = gauss_jacobi_01(nz, gamma)
        zs = Zcut * uz
        wzz = 2.0 * Zcut ** (gamma + 1.0) * wz
        val = 0.0
        for zi, wi in zip(zs, wzz):
            P = np.concatenate([X, np.full((len(X), 1), zi)], axis=1)
            G = grad_func(P)
            val += wi * float(np.sum(WX * np.sum(G * G, axis=-1)))
    tail = np.nan
    if decay_rate is not None and decay_const is not None:
        q = decay_rate
        expo = d + kernel.k + kernel.gamma - 2 * q
        if expo >= 0:
            raise ParameterError("tail bound requires decay faster than volume growth")
        tail = decay_const ** 2 * 8.0 * region.scale() ** expo / (-expo)
    return float(np.sqrt(val)), tail


# ---------------------------------------------------------------------------
# first-order identities (planar Coulomb)
# ---------------------------------------------------------------------------

def first_order_identities(kernel: RieszKernel, f: GaussianSource,
                           w: GaussianSource, v: TransportField,
                           sample_points=None, fd_step: float = 1e-3):
    """Stress-tensor identity evaluated by two independent routes, and the
    pointwise elliptic residual of the first commutator (gamma = 0 only)."""
    if not (kernel.d == 2 and kernel.s == 0):
        raise CapabilityError("first-order identities implemented for d=2, s=0")
    groups = outer_nodes(w.support, 28, 56)
    Yw = np.concatenate([g[0] for g in groups])
    Ww = np.concatenate([g[1] for g in groups]) * w.density(Yw)
    kap_at_w = field_values(kernel, "kappa", 1, f, v, Yw)
    stress_lhs = float(np.sum(Ww * kap_at_w))

    ell = v.support_radius
    if not np.isfinite(ell):
        raise CapabilityError("stress route needs a compactly supported field")
    cen = np.asarray(v.center, dtype=float)
    u, wq = gauss_legendre_01(48)
    rr = u * ell
    th = (np.arange(96) + 0.5) * 2 * np.pi / 96
    X = cen + np.stack([np.outer(rr, np.cos(th)), np.outer(rr, np.sin(th))], axis=-1).reshape(-1, 2)
    WX = np.outer(wq * ell * rr, np.full(96, 2 * np.pi / 96)).ravel()
    Gf = f.grad_potential(X)
    Gw = w.grad_potential(X)
    Gv = v.grad(X)
    dot = np.sum(Gf * Gw, axis=-1)
    stress = (Gf[..., :, None] * Gw[..., None, :] + Gw[..., :, None] * Gf[..., None, :]
              - dot[..., None, None] * np.eye(2))
    stress_rhs = float(np.sum(WX * np.sum(Gv * stress, axis=(-2, -1)))) / kernel.c_ds

    if sample_points is None:
        sample_points = cen + 0.31 * ell * np.array(
            [[1.0, 0.3], [-0.6, 0.8], [0.2, -1.1], [-0.9, -0.5]]
        )
    res = []
    h = fd_step * ell
    for p in np.atleast_2d(sample_points):
        lap = 0.0
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            lap += (kappa_eval(kernel, 1, f, v, p + e)
                    - 2 * kappa_eval(kernel, 1, f, v, p)
                    + kappa_eval(kernel, 1, f, v, p - e)) / h ** 2
        T2 = v.grad_tensor_at(p, 2)
        G1 = v.grad_tensor_at(p, 1)
        gh = f.grad_potential(p)
        Hh = f.hess_potential(p)
        lap_h = float(f.laplace_potential(p[None, :])[0])
        lap_v = np.einsum("iim->m", T2)
        div_v = np.trace(G1)
        rhs = (-float(lap_v @ gh)
               - 2.0 * float(np.einsum("im,im->", G1, Hh))
               + div_v * lap_h)
        res.append(float(-lap - rhs))
    return {"stress_lhs": stress_lhs, "stress_rhs": stress_rhs, "pde_residual": res}


# ---------------------------------------------------------------------------
# L2 ratio for the first commutator
# ---------------------------------------------------------------------------

def kappa_l2_ratio(kernel: RieszKernel, f: GaussianSource, v: TransportField,
                   R_max: float | None = None, n_r: int = 10, n_t: int = 48):
    """|grad kappa^(1),f|_{L2(R^2)} / (|grad v|_inf |grad h^f|_{L2(supp grad v)})
    for the planar Coulomb kernel;
    grad kappa = nu^(1) + (grad v)^T grad h^f pointwise."""
    if not (kernel.d == 2 and kernel.s == 0):
        raise CapabilityError("ratio implemented for the planar Coulomb kernel")
    ell = v.support_radius
    cen = np.asarray(v.center, dtype=float)
    scale = max(ell, float(f.support.radius))
    if R_max is None:
        R_max = 24.0 * scale

    def grad_kappa(P):
        nu1 = field_values(kernel, "nu", 1, f, v, P)
        return nu1 + np.einsum("...im,...i->...m", v.grad(P), f.grad_potential(P))

    u, wq = gauss_legendre_01(n_r)
    edges = np.concatenate([[1e-9], np.geomspace(0.05 * scale, R_max, 14)])
    th = (np.arange(n_t) + 0.5) * 2 * np.pi / n_t
    num2 = 0.0
    for r0, r1 in zip(edges[:-1], edges[1:]):
        rr = r0 + (r1 - r0) * u
        X = cen + np.stack([np.outer(rr, np.cos(th)), np.outer(rr, np.sin(th))], axis=-1).reshape(-1, 2)
        WX = np.outer(wq * (r1 - r0) * rr, np.full(n_t, 2 * np.pi / n_t)).ravel()
        G = grad_kappa(X)
        num2 += float(np.sum(WX * np.sum(G * G, axis=-1)))
    ring = cen + R_max * np.stack([np.cos(th), np.sin(th)], axis=-1)
    Gr = grad_kappa(ring)
    Cdecay = float(np.max(np.sqrt(np.sum(Gr * Gr, axis=-1)))) * R_max ** 2
    tail = np.pi * Cdecay ** 2 * R_max ** (-2)
    num = float(np.sqrt(num2))
    den, _ = l2gamma_seminorm(f.grad_potential, kernel, Ball(tuple(cen), float(ell)),
                              n_r=24, n_t=n_t)
    gn = v.sup_norm(1)
    return {"ratio": num / (gn * den), "numerator": num, "denominator": den,
            "grad_norm": gn, "tail_bound_sq": tail}
