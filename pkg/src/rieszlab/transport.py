"""Transport vector fields with exact derivative oracles.

Built-in families: affine (incl. dilation and rotation) and compactly
supported bump shears v(x) = amp * psi(|x - x0| / ell) * e with the standard
exp(-1/(1-t^2)) profile.  Derivatives of the radial profile are generated by
an exact polynomial recursion (psi^(k) = psi * P_k(t)/(1-t^2)^(2k)), so the
tensor oracles are closed-form at every order.

The extension to R^(d+k) multiplies by a smooth cutoff chi(z/ell) equal to 1
for |z| <= ell and 0 for |z| >= 2 ell, with vanishing last component.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import CapabilityError, ParameterError

__all__ = [
    "TransportField",
    "AffineField",
    "DilationField",
    "RotationField",
    "BumpShearField",
    "ExtendedField",
    "extend",
    "push_points",
    "sup_norms",
    "chi_cutoff",
    "chi_cutoff_prime",
]

MAX_ORDER = 6


# ---------------------------------------------------------------------------
# bump profile and its exact derivatives
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _bump_deriv_polys(kmax: int):
    """P_k with psi^(k)(t) = psi(t) * P_k(t) / (1-t^2)^(2k), psi = e^{1-1/(1-t^2)}."""
    one_minus = np.array([1.0, 0.0, -1.0])          # 1 - t^2
    polys = [np.array([1.0])]                       # P_0 = 1
    P = np.array([0.0, -2.0])                       # P_1 = -2t
    polys.append(P)
    for k in range(1, kmax):
        dP = npoly.polyder(P)
        term = npoly.polyadd(
            npoly.polymul(np.array([0.0, -2.0]), P),
            npoly.polymul(npoly.polymul(one_minus, one_minus), dP),
        )
        term = npoly.polyadd(term, npoly.polymul(np.array([0.0, 4.0 * k]), npoly.polymul(one_minus, P)))
        P = term
        polys.append(P)
    return polys


def bump_profile(t, order: int = 0):
    """psi^(order)(t) for psi(t) = exp(1 - 1/(1-t^2)) on |t|<1, 0 outside."""
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    out = np.zeros_like(t)
    m = np.abs(t) < 1.0
    if np.any(m):
        tm = t[m]
        base = np.exp(1.0 - 1.0 / (1.0 - tm ** 2))
        if order == 0:
            out[m] = base
        else:
            P = _bump_deriv_polys(order)[order]
            out[m] = base * npoly.polyval(tm, P) / (1.0 - tm ** 2) ** (2 * order)
    return out[0] if scalar else out


@lru_cache(maxsize=32)
def _radial_chain_table(mmax: int):
    """a[m][j] with  d^m/du^m  psi(r(u)) = sum_j a[m][j] psi^(j)(r) r^(j-2m),
    u = r^2/2."""
    table = {1: {1: 1.0}}
    for m in range(1, mmax):
        nxt: dict[int, float] = {}
        for j, c in table[m].items():
            nxt[j + 1] = nxt.get(j + 1, 0.0) + c
            nxt[j] = nxt.get(j, 0.0) + c * (j - 2 * m)
        table[m + 1] = nxt
    return table


def _radial_F_derivs(profile, r, scale: float, mmax: int):
    """[F, F', ..., F^(mmax)](u) for F(u) = profile(sqrt(2u)/scale), u = r^2/2."""
    r = np.asarray(r, dtype=float)
    t = r / scale
    out = [profile(t, 0)]
    if mmax == 0:
        return out
    tab = _radial_chain_table(mmax)
    derivs = [profile(t, j) / scale ** j for j in range(mmax + 1)]
    for m in range(1, mmax + 1):
        acc = np.zeros_like(r)
        for j, c in tab[m].items():
            acc = acc + c * derivs[j] * r ** (j - 2 * m)
        out.append(acc)
    return out


def _radial_tensor(F, x, n: int):
    """Full grad^(n) of a radial scalar with u-derivative list F at x (single point)."""
    from .kernel import _pair_patterns  # shared index patterns

    x = np.asarray(x, dtype=float)
    m = x.shape[-1]
    if n == 0:
        return np.array(F[0])
    eye = np.eye(m)
    letters = "abcdefghij"
    out = np.zeros((m,) * n)
    for p, patterns in _pair_patterns(n).items():
        coef = float(F[n - p])
        if coef == 0.0:
            continue
        for pairs, singles in patterns:
            sub_out = [""] * n
            operands, subs = [], []
            li = 0
            for (i, j) in pairs:
                subs.append(letters[li] + letters[li + 1])
                operands.append(eye)
                sub_out[i] = letters[li]
                sub_out[j] = letters[li + 1]
                li += 2
            for pos in singles:
                subs.append(letters[li])
                operands.append(x)
                sub_out[pos] = letters[li]
                li += 1
            out += coef * np.einsum(",".join(subs) + "->" + "".join(sub_out), *operands)
    return out


# ---------------------------------------------------------------------------
# field classes
# ---------------------------------------------------------------------------

class TransportField:
    """Base: value/grad/tensor oracles on R^d."""

    family = "user"
    d: int
    max_order: int = MAX_ORDER
    support_radius: float = np.inf   # ell; inf for global fields

    def __call__(self, x):
        raise NotImplementedError

    def grad(self, x):
        """Jacobian, shape (..., d, d) with entry [i, j] = d_i v^j."""
        raise NotImplementedError

    def grad_tensor_at(self, x, k: int):
        """Full tensor of order k at a single point: shape (d,)*k + (d,),
        component [i_1..i_k, j] = d_{i_1}..d_{i_k} v^j."""
        raise NotImplementedError

    def sup_norm(self, k: int) -> float:
        raise NotImplementedError

    def cache_key(self):
        raise NotImplementedError


@dataclass(frozen=True)
class AffineField(TransportField):
    """v(x) = A x + b."""
    A: tuple
    b: tuple

    family = "affine"

    @property
    def d(self):
        return len(self.b)

    def _mat(self):
        return np.asarray(self.A, dtype=float).reshape(self.d, self.d)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self._mat().T + np.asarray(self.b)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        # [i, j] = d_i v^j = A[j, i]
        G = self._mat().T
        return np.broadcast_to(G, x.shape[:-1] + G.shape).copy()

    def grad_tensor_at(self, x, k):
        if k == 0:
            return np.asarray(self(x))
        if k == 1:
            return self._mat().T.copy()
        return np.zeros((self.d,) * k + (self.d,))

    def sup_norm(self, k):
        if k == 0:
            return np.inf
        if k == 1:
            return float(np.linalg.norm(self._mat(), 2))
        return 0.0

    def cache_key(self):
        return ("affine", self.A, self.b)


def DilationField(d: int) -> AffineField:
    """v(x) = x."""
    return AffineField(A=tuple(np.eye(d).ravel()), b=(0.0,) * d)


def RotationField(omega: float = 1.0) -> AffineField:
    """d=2 rotation v(x) = omega * J x with J antisymmetric."""
    J = omega * np.array([[0.0, -1.0], [1.0, 0.0]])
    return AffineField(A=tuple(J.ravel()), b=(0.0, 0.0))


@dataclass(frozen=True)
class BumpShearField(TransportField):
    """v(x) = amplitude * psi(|x - center| / ell) * direction."""
    center: tuple
    ell: float
    direction: tuple
    amplitude: float = 1.0

    family = "bump-shear"

    @property
    def d(self):
        return len(self.center)

    @property
    def support_radius(self):
        return float(self.ell)

    def _unit_e(self):
        e = np.asarray(self.direction, dtype=float)
        return e / np.linalg.norm(e)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        rel = x - np.asarray(self.center)
        r = np.atleast_1d(np.sqrt(np.sum(rel * rel, axis=-1)))
        val = self.amplitude * bump_profile(r / self.ell)[..., None] * self._unit_e()
        return val[0] if x.ndim == 1 else val.reshape(x.shape)

    def _phi_F(self, r, mmax):
        return _radial_F_derivs(bump_profile, r, self.ell, mmax)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        rel = np.atleast_2d(x - np.asarray(self.center))
        shape = x.shape[:-1]
        rel = rel.reshape(-1, self.d)
        r = np.sqrt(np.sum(rel * rel, axis=-1))
        F = self._phi_F(r, 1)
        # grad phi = F'(u) * x_rel ; grad v[i, j] = d_i phi * e_j
        gphi = F[1][..., None] * rel
        G = self.amplitude * gphi[..., :, None] * self._unit_e()
        return G.reshape(shape + (self.d, self.d))

    def grad_tensor_at(self, x, k):
        x = np.asarray(x, dtype=float).reshape(self.d)
        rel = x - np.asarray(self.center)
        r = float(np.linalg.norm(rel))
        if k == 0:
            return np.asarray(self(x))
        if r == 0.0:
            r = 1e-300
        F = self._phi_F(np.array([r]), k)
        Fs = [float(f[0]) for f in F]
        T = _radial_tensor(Fs, rel, k)
        return self.amplitude * np.multiply.outer(T, self._unit_e())

    def sup_norm(self, k, n_grid: int = 2000):
        """Max over radius of the Frobenius norm of grad^(k) v (for k=1 this is
        the spectral norm: grad v is rank one); dense-grid maximization."""
        if k == 0:
            return abs(self.amplitude)
        rs = np.linspace(1e-9, self.ell * (1 - 1e-9), n_grid)
        e1 = np.zeros(self.d)
        e1[0] = 1.0
        best = 0.0
        for r in rs:
            T = self.grad_tensor_at(np.asarray(self.center) + r * e1, k)
            best = max(best, float(np.sqrt(np.sum(T * T))))
        return best

    def cache_key(self):
        return ("bump-shear", self.center, self.ell, self.direction, self.amplitude)


# ---------------------------------------------------------------------------
# extension to R^(d+k)
# ---------------------------------------------------------------------------

def _smooth_step(u):
    """H(u) = exp(-1/u) for u > 0 else 0."""
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    out = np.zeros_like(u)
    m = u > 0
    out[m] = np.exp(-1.0 / u[m])
    return out[0] if scalar else out


def _smooth_step_prime(u):
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    out = np.zeros_like(u)
    m = u > 0
    out[m] = np.exp(-1.0 / u[m]) / u[m] ** 2
    return out[0] if scalar else out


def chi_cutoff(z):
    """chi(z) = 1 for |z|<=1, 0 for |z|>=2, smooth transition."""
    z = np.abs(np.asarray(z, dtype=float))
    a = _smooth_step(2.0 - z)
    b = _smooth_step(z - 1.0)
    return a / (a + b + 1e-300)


def chi_cutoff_prime(z):
    z = np.asarray(z, dtype=float)
    az = np.abs(z)
    a = _smooth_step(2.0 - az)
    b = _smooth_step(az - 1.0)
    ap = -_smooth_step_prime(2.0 - az)
    bp = _smooth_step_prime(az - 1.0)
    denom = (a + b) ** 2 + 1e-300
    dchi_dabs = (ap * b - a * bp) / denom
    return np.sign(z) * dchi_dabs


@dataclass(frozen=True)
class ExtendedField:
    """chi(z/ell) * (v(x), 0) on R^(d+1); identical to (v, 0) for |z| <= ell."""
    base: TransportField
    ell: float

    @property
    def d(self):
        return self.base.d

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        x, z = p[..., :-1], p[..., -1]
        vx = self.base(x)
        cz = chi_cutoff(z / self.ell)
        out = np.concatenate([vx * cz[..., None], np.zeros(z.shape + (1,))], axis=-1)
        return out

    def grad(self, p):
        """[i, j] = d_i vtilde^j over R^(d+1); last column identically zero."""
        p = np.asarray(p, dtype=float)
        x, z = p[..., :-1], p[..., -1]
        d = self.d
        G = np.zeros(p.shape[:-1] + (d + 1, d + 1))
        cz = chi_cutoff(z / self.ell)
        Gx = self.base.grad(x)
        G[..., :d, :d] = Gx * cz[..., None, None]
        vx = self.base(x)
        G[..., d, :d] = vx * (chi_cutoff_prime(z / self.ell) / self.ell)[..., None]
        return G

    def cache_key(self):
        return ("extended", self.base.cache_key(), self.ell)


def extend(v: TransportField, ell: float) -> ExtendedField:
    """Cutoff extension; a no-op wrapper is still valid for k = 0 usage."""
    if ell <= 0:
        raise ParameterError("extension scale ell must be positive")
    return ExtendedField(base=v, ell=float(ell))


# ---------------------------------------------------------------------------
# push-forward and norms
# ---------------------------------------------------------------------------

def push_points(points, v: TransportField, t: float):
    points = np.asarray(points, dtype=float)
    return points + t * v(points)


def sup_norms(v: TransportField, k: int) -> float:
    """sup-norm oracle |grad^(k) v|_inf; exact for affine, dense-grid for bump."""
    if k > v.max_order:
        raise CapabilityError(f"derivative order {k} beyond declared {v.max_order}")
    return v.sup_norm(k)
