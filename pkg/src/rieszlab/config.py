"""Point configurations, nearest-neighbor radii, and localized scales."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ParameterError
from .geometry import Ball, Box, WholeSpace

__all__ = ["Configuration", "nn_radii", "local_scales", "LocalScales", "microscale"]


@dataclass
class Configuration:
    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2:
            raise ParameterError("points must be an (N, d) array")
        self.points = pts
        self._nn = None
        if self.N > 1 and self.min_gap() <= 0:
            raise ParameterError("configuration has duplicate points")

    @property
    def N(self) -> int:
        return len(self.points)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    # -- nearest-neighbor distances -----------------------------------------

    def nn_distances(self) -> np.ndarray:
        """Distance to the nearest other point, per point; brute force for
        N <= 2e4, uniform cell hashing above."""
        if self._nn is None:
            if self.N == 1:
                self._nn = np.array([np.inf])
            elif self.N <= 20000:
                diff = self.points[:, None, :] - self.points[None, :, :]
                dist = np.sqrt(np.sum(diff * diff, axis=-1))
                np.fill_diagonal(dist, np.inf)
                self._nn = dist.min(axis=1)
            else:
                self._nn = _nn_cell_hash(self.points)
        return self._nn

    def min_gap(self) -> float:
        return float(self.nn_distances().min()) if self.N > 1 else np.inf

    # -- io -------------------------------------------------------------------

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{j}" for j in range(self.d)])
            for p in self.points:
                writer.writerow([repr(float(v)) for v in p])

    @classmethod
    def load_csv(cls, path) -> "Configuration":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                if row:
                    rows.append([float(v) for v in row])
        return cls(np.asarray(rows))


def _nn_cell_hash(pts: np.ndarray) -> np.ndarray:
    """Uniform-cell nearest-neighbor distances, O(N) cells."""
    N, d = pts.shape
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-300)
    cell = float(np.max(span)) / max(int(N ** (1.0 / d)), 1)
    keys = np.floor((pts - lo) / cell).astype(np.int64)
    buckets: dict[tuple, list] = {}
    for i, k in enumerate(map(tuple, keys)):
        buckets.setdefault(k, []).append(i)
    out = np.full(N, np.inf)
    offsets = np.array(np.meshgrid(*([[-1, 0, 1]] * d), indexing="ij")).reshape(d, -1).T
    for k, idxs in buckets.items():
        cand = []
        for off in offsets:
            cand.extend(buckets.get(tuple(np.asarray(k) + off), []))
        cand = np.asarray(cand)
        sub = pts[cand]
        for i in idxs:
            dist = np.sqrt(np.sum((sub - pts[i]) ** 2, axis=-1))
            dist[cand == i] = np.inf
            if len(dist):
                out[i] = min(out[i], dist.min())
    # cell hashing can miss neighbors farther than one cell away; fall back to
    # a second pass with doubled cells for points that found nothing
    missing = ~np.isfinite(out)
    if np.any(missing):
        diff = pts[missing][:, None, :] - pts[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        for row, i in enumerate(np.nonzero(missing)[0]):
            dist[row, i] = np.inf
        out[missing] = dist.min(axis=1)
    return out


# ---------------------------------------------------------------------------
# radii and localized scales
# ---------------------------------------------------------------------------

def microscale(N: int, mu, region=None) -> float:
    """lambda = (N * sup-density)^(-1/d)."""
    sup = mu.sup_density(region)
    if sup <= 0:
        raise ParameterError("measure has zero sup density on the region")
    return float((N * sup) ** (-1.0 / mu.d))


def nn_radii(config: Configuration, mu) -> np.ndarray:
    """r_i = (1/4) min(nearest-neighbor gap, (N |mu|_inf)^(-1/d)); the balls
    B(x_i, r_i) are pairwise disjoint by construction (asserted)."""
    lam_global = (config.N * mu.sup_density(None)) ** (-1.0 / config.d)
    r = 0.25 * np.minimum(config.nn_distances(), lam_global)
    # disjointness: r_i + r_j <= (gap_i + gap_j)/4 <= gap_ij/2 < gap_ij
    if config.N > 1:
        assert 2 * float(r.max()) < config.min_gap()
    return r


@dataclass
class LocalScales:
    lam: float
    r_tilde: np.ndarray
    indices: np.ndarray     # I_Omega
    region: object
    hat_region: object


def local_scales(config: Configuration, mu, region=None,
                 boundary_slack: float = 1e-12) -> LocalScales:
    """Localized truncation radii: lambda from the sup density over the
    region; r~_i interpolates between the nearest-neighbor radius well inside
    and lambda/4 near the boundary (three-case rule, continuous across the
    case boundaries); ties at dist = 2*lambda resolve to the interpolation
    branch."""
    if region is None:
        region = WholeSpace(config.d)
    lam = microscale(config.N, mu, region)
    gaps = config.nn_distances()
    base = np.minimum(gaps, lam)
    if isinstance(region, WholeSpace):
        r_t = 0.25 * base
        idx = np.arange(config.N)
        return LocalScales(lam=lam, r_tilde=r_t, indices=idx, region=region,
                           hat_region=region)
    dist = region.dist_to_boundary(config.points)
    inside = dist >= -boundary_slack
    # the three cases collapse to one continuous clip: t = 0 within lambda of
    # the boundary, t = 1 beyond 2*lambda, linear in between
    t = np.clip(np.abs(dist) / lam - 1.0, 0.0, 1.0)
    r_t = 0.25 * (t * base + (1.0 - t) * lam)
    idx = np.nonzero(inside)[0]
    hat = region.grow(0.25 * lam) if hasattr(region, "grow") else region
    return LocalScales(lam=lam, r_tilde=r_t, indices=idx, region=region, hat_region=hat)
