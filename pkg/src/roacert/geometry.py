"""Boxes, H-polytopes, convex hulls, epsilon-nets and ROI construction."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection
from scipy.spatial import QhullError

SCHEMA_VERSION = 1


class DegenerateHullError(ValueError):
    pass


class NoConvergentSamplesError(RuntimeError):
    pass


class GridTooLargeError(ValueError):
    pass


def _ro(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo, hi = _ro(np.atleast_1d(self.lo)), _ro(np.atleast_1d(self.hi))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be vectors of equal length")
        if not np.all(lo < hi):
            raise ValueError(f"box needs lo < hi elementwise, got {lo} / {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, r: float, n: int) -> "Box":
        return cls(-r * np.ones(n), r * np.ones(n))

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x, tol: float = 0.0):
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo - tol) & (x <= self.hi + tol), axis=-1)

    def contains_interior(self, x):
        x = np.asarray(x, dtype=float)
        return np.all((x > self.lo) & (x < self.hi), axis=-1)

    def vertices(self) -> np.ndarray:
        n = self.dim
        corners = np.array(np.meshgrid(*[[0, 1]] * n, indexing="ij")).reshape(n, -1).T
        return self.lo + corners * self.width

    def as_polytope(self) -> "Polytope":
        n = self.dim
        A = np.vstack([np.eye(n), -np.eye(n)])
        b = np.concatenate([self.hi, -self.lo])
        return Polytope(A, b)

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Box":
        return cls(np.array(d["lo"], dtype=float), np.array(d["hi"], dtype=float))


@dataclass(frozen=True, eq=False)
class Polytope:
    """Bounded polytope ``{x | A x <= b}``."""

    A: np.ndarray
    b: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        A = _ro(np.atleast_2d(self.A))
        b = _ro(np.atleast_1d(self.b))
        if A.shape[0] != b.shape[0]:
            raise ValueError(f"A has {A.shape[0]} rows but b has {b.shape[0]} entries")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite polytope data")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        self.bounding_box()  # raises when empty or unbounded

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def n_facets(self) -> int:
        return self.A.shape[0]

    def contains(self, x, tol: float = 1e-9):
        x = np.asarray(x, dtype=float)
        return np.all(x @ self.A.T <= self.b + tol, axis=-1)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if "bbox" not in self._cache:
            n = self.dim
            lo, hi = np.empty(n), np.empty(n)
            for i in range(n):
                for sign, out in ((1.0, lo), (-1.0, hi)):
                    c = np.zeros(n)
                    c[i] = sign
                    res = linprog(c, A_ub=self.A, b_ub=self.b, bounds=[(None, None)] * n, method="highs")
                    if res.status == 2:
                        raise ValueError("empty polytope")
                    if res.status == 3:
                        raise ValueError("unbounded polytope")
                    if res.status != 0:
                        raise ValueError(f"bounding-box LP failed: {res.message}")
                    out[i] = sign * res.fun
            self._cache["bbox"] = (_ro(lo), _ro(hi))
        return self._cache["bbox"]

    def chebyshev_center(self) -> tuple[np.ndarray, float]:
        n = self.dim
        norms = np.linalg.norm(self.A, axis=1)
        c = np.zeros(n + 1)
        c[-1] = -1.0
        res = linprog(
            c,
            A_ub=np.hstack([self.A, norms[:, None]]),
            b_ub=self.b,
            bounds=[(None, None)] * n + [(0, None)],
            method="highs",
        )
        return res.x[:n], float(res.x[-1])

    def vertices(self) -> np.ndarray:
        if "vertices" not in self._cache:
            center, radius = self.chebyshev_center()
            if radius <= 1e-12:
                raise ValueError("polytope has empty interior")
            hs = HalfspaceIntersection(np.hstack([self.A, -self.b[:, None]]), center)
            v = hs.intersections
            # merge numerically duplicated vertices
            v = np.unique(np.round(v, 12), axis=0)
            self._cache["vertices"] = _ro(v)
        return self._cache["vertices"]

    def facet_vertices(self, i: int, tol: float = 1e-8) -> np.ndarray:
        v = self.vertices()
        scale = max(1.0, abs(self.b[i]))
        return v[np.abs(v @ self.A[i] - self.b[i]) <= tol * scale]

    def max_inf_norm(self) -> float:
        return float(np.abs(self.vertices()).max())

    def digest(self) -> str:
        import hashlib

        return hashlib.sha256(np.ascontiguousarray(self.A).tobytes() + np.ascontiguousarray(self.b).tobytes()).hexdigest()

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "A": self.A.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Polytope":
        return cls(np.array(d["A"], dtype=float), np.array(d["b"], dtype=float))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Polytope":
        return cls.from_dict(json.loads(Path(path).read_text()))


def convex_hull(points) -> Polytope:
    """H-representation of the convex hull of 2-D or 3-D points.

    Coplanar facets reported separately by Qhull are merged, so a cube yields
    six rows.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] not in (2, 3):
        raise ValueError("convex_hull supports 2-D and 3-D point sets only")
    n = pts.shape[1]
    if len(pts) < n + 1:
        raise DegenerateHullError(f"need at least {n + 1} points, got {len(pts)}")
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise DegenerateHullError(f"points are affinely dependent: {exc}") from exc
    eq = hull.equations
    A, b = eq[:, :n], -eq[:, n]
    key = np.round(np.hstack([A, b[:, None]]), 9)
    _, idx = np.unique(key, axis=0, return_index=True)
    idx = np.sort(idx)
    A, b = A[idx], b[idx]
    # outward slack so every input point satisfies A x <= b exactly
    b = np.maximum(b, (pts @ A.T).max(axis=0))
    return Polytope(A, b)


def scale(poly: Polytope, tau: float) -> Polytope:
    """``{x | A x <= tau * b}``; shrinks the polytope towards the origin."""
    if not (0 < tau <= 1):
        raise ValueError("tau must lie in (0, 1]")
    return Polytope(poly.A, tau * poly.b)


@dataclass(frozen=True)
class EpsNet:
    samples: np.ndarray
    eps: float

    def __len__(self):
        return len(self.samples)

    def covering_distance(self, probes) -> np.ndarray:
        """l-inf distance from each probe to its nearest sample."""
        from scipy.spatial import cKDTree

        tree = cKDTree(self.samples)
        d, _ = tree.query(np.atleast_2d(probes), p=np.inf)
        return d

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x_{i + 1}" for i in range(self.samples.shape[1])])
            for row in self.samples:
                w.writerow([repr(float(v)) for v in row])


def grid_eps_net(region, eps: float, max_samples: int = 2_000_000) -> EpsNet:
    """Uniform grid with spacing at most ``2 eps`` covering ``region`` in l-inf.

    For a polytope the grid spans its bounding box and keeps every grid point
    whose l-inf cell of radius ``eps`` can meet the polytope, so the kept set
    still covers the polytope.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if isinstance(region, Box):
        lo, hi = region.lo, region.hi
    else:
        lo, hi = region.bounding_box()
    counts = np.ceil((hi - lo) / (2 * eps)).astype(int) + 1
    total = int(np.prod(counts.astype(float)))
    if total > max_samples:
        raise GridTooLargeError(f"grid would hold {total} points (cap {max_samples})")
    axes = [np.linspace(l, h, c) for l, h, c in zip(lo, hi, counts)]
    pts = np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(lo), -1).T
    if isinstance(region, Polytope):
        slack = eps * np.abs(region.A).sum(axis=1)
        pts = pts[np.all(pts @ region.A.T <= region.b + slack, axis=1)]
    return EpsNet(_ro(pts), float(eps))


def convergent_samples(fmap, region: Box, density: int, steps: int, conv_tol: float):
    """Grid initial states over ``region`` and flag those whose ``steps``-step state is within ``conv_tol``."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    axes = [np.linspace(l, h, density) for l, h in zip(region.lo, region.hi)]
    X0 = np.array(np.meshgrid(*axes, indexing="ij")).reshape(region.dim, -1).T
    X = X0.copy()
    with np.errstate(all="ignore"):
        for _ in range(steps):
            X = fmap(X)
            X[~np.all(np.isfinite(X), axis=1)] = np.inf
    ok = np.all(np.abs(X) <= conv_tol, axis=1)
    return X0, ok


def build_roi(fmap, region: Box, density: int = 150, steps: int = 50, conv_tol: float = 0.05, tau: float = 0.9) -> Polytope:
    """Scaled convex hull of grid initial states that converge under ``fmap``."""
    X0, ok = convergent_samples(fmap, region, density, steps, conv_tol)
    if not ok.any():
        raise NoConvergentSamplesError("no convergent samples in the sampling region")
    return scale(convex_hull(X0[ok]), tau)
