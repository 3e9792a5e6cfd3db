"""Support/region descriptors: whole space, balls (intervals in d=1), boxes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["WholeSpace", "Ball", "Box", "region_from_dict"]


@dataclass(frozen=True)
class WholeSpace:
    d: int

    kind = "whole-space"

    def contains(self, x):
        x = np.atleast_2d(x)
        return np.ones(len(x), dtype=bool)

    def dist_to_boundary(self, x):
        x = np.atleast_2d(x)
        return np.full(len(x), np.inf)

    def scale(self):
        return np.inf


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    kind = "ball"

    @property
    def d(self):
        return len(self.center)

    def contains(self, x, slack: float = 1e-12):
        x = np.atleast_2d(x)
        c = np.asarray(self.center)
        return np.linalg.norm(x - c, axis=-1) <= self.radius * (1 + slack) + slack

    def dist_to_boundary(self, x):
        x = np.atleast_2d(x)
        c = np.asarray(self.center)
        return self.radius - np.linalg.norm(x - c, axis=-1)

    def ball(self):
        return np.asarray(self.center, dtype=float), float(self.radius)

    def interval(self):
        if self.d != 1:
            raise ValueError("interval() only for d=1")
        c, r = self.center[0], self.radius
        return c - r, c + r

    def bounding_box(self):
        c = np.asarray(self.center, dtype=float)
        return c - self.radius, c + self.radius

    def scale(self):
        return float(self.radius)

    def volume(self):
        d, r = self.d, self.radius
        if d == 1:
            return 2 * r
        if d == 2:
            return np.pi * r ** 2
        if d == 3:
            return 4 * np.pi * r ** 3 / 3
        raise ValueError("volume for d <= 3")

    def grow(self, margin: float) -> "Ball":
        return Ball(self.center, self.radius + margin)


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    kind = "box"

    @property
    def d(self):
        return len(self.lo)

    def contains(self, x, slack: float = 1e-12):
        x = np.atleast_2d(x)
        lo = np.asarray(self.lo) - slack
        hi = np.asarray(self.hi) + slack
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def dist_to_boundary(self, x):
        x = np.atleast_2d(x)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        inner = np.minimum(x - lo, hi - x)
        return np.min(inner, axis=-1)

    def bounding_box(self):
        return np.asarray(self.lo, dtype=float), np.asarray(self.hi, dtype=float)

    def scale(self):
        return float(np.min(np.asarray(self.hi) - np.asarray(self.lo)) / 2)

    def volume(self):
        return float(np.prod(np.asarray(self.hi) - np.asarray(self.lo)))

    def interval(self):
        if self.d != 1:
            raise ValueError("interval() only for d=1")
        return float(self.lo[0]), float(self.hi[0])

    def grow(self, margin: float) -> "Box":
        lo = tuple(x - margin for x in self.lo)
        hi = tuple(x + margin for x in self.hi)
        return Box(lo, hi)


def region_from_dict(d: int, spec: dict):
    kind = spec.get("kind", "whole-space")
    if kind == "whole-space":
        return WholeSpace(d)
    if kind == "ball":
        return Ball(tuple(spec["center"]), float(spec["radius"]))
    if kind == "box":
        return Box(tuple(spec["lo"]), tuple(spec["hi"]))
    raise ValueError(f"unknown region kind {kind!r}")
