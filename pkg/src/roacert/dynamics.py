"""Benchmark maps, Euler discretization, Jacobians and uncertain-system simulation."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .error_model import ErrorBound
from .geometry import Box, Polytope
from .relu_net import ReluNetwork, forward


@dataclass(frozen=True)
class NonlinearMap:
    """A map ``x -> f(x)`` evaluated row-wise on ``(N, n)`` or on a single ``(n,)`` state."""

    dim: int
    fn: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.fn(x)


def rational2d(x):
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack(
        [x1 - (x1 + x2**3) / (1 + x1**2), x2 + (x1**3 - 0.25 * x2) / (1 + x2**2)],
        axis=-1,
    )


def poly3d_continuous(x):
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    r = x1**2 + x2**2 - 1
    return np.stack(
        [x1 * r - x2 * (x3**2 + 1), x2 * r + x1 * (x3**2 + 1), 10 * x3 * (x3**2 - 1)],
        axis=-1,
    )


def euler_discretize(f, dt: float, dim: int | None = None, name: str | None = None) -> NonlinearMap:
    """Forward-Euler map ``x + dt * f(x)``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dim is None:
        dim = getattr(f, "dim", None)
    base = getattr(f, "name", getattr(f, "__name__", "f"))
    return NonlinearMap(dim, lambda x: np.asarray(x, float) + dt * f(x), name or f"euler({base},{dt})")


def get_benchmark(name: str, dt: float = 0.1) -> NonlinearMap:
    if name == "rational2d":
        return NonlinearMap(2, rational2d, "rational2d")
    if name == "poly3d":
        return euler_discretize(poly3d_continuous, dt, dim=3, name=f"poly3d_dt{dt}")
    raise KeyError(f"unknown benchmark {name!r}")


def jacobian_at_origin(f, dim: int | None = None, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference Jacobian of ``f`` at 0."""
    n = dim if dim is not None else f.dim
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        J[:, j] = (np.asarray(f(e)) - np.asarray(f(-e))) / (2 * h)
    if not np.all(np.isfinite(J)):
        raise ValueError("non-finite Jacobian entries")
    return J


@dataclass(frozen=True, eq=False)
class UncertainSystem:
    """``x+ = A x + f_NN(x) + w`` with ``||w||_inf <= error_bound(x)`` on ``roi``."""

    A: np.ndarray
    net: ReluNetwork
    error_bound: ErrorBound
    roi: Polytope
    excluded: Box
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        n = A.shape[0]
        if A.shape != (n, n) or self.net.input_dim != n or self.net.output_dim != n:
            raise ValueError("A and the network must share the state dimension")
        if self.roi.dim != n or self.excluded.dim != n:
            raise ValueError("ROI and excluded box must match the state dimension")
        if self.check:
            if np.max(np.abs(np.linalg.eigvals(A))) >= 1:
                raise ValueError("A is not Schur stable")
            if not np.all(self.roi.b > 0):
                raise ValueError("origin must lie in the interior of the ROI")
            if not np.all(self.excluded.lo < 0) or not np.all(self.excluded.hi > 0):
                raise ValueError("origin must lie in the interior of the excluded box")
            if not np.all(self.roi.contains(self.excluded.vertices())):
                raise ValueError("excluded box must lie inside the ROI")

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def nominal(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.A.T + forward(self.net, x)

    def disturbance_bound(self, x):
        return self.error_bound(x)

    def step(self, x, w):
        return self.nominal(x) + np.asarray(w, dtype=float)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.A).tobytes())
        h.update(self.net.digest().encode())
        h.update(json.dumps(self.error_bound.to_dict(), sort_keys=True).encode())
        h.update(self.roi.digest().encode())
        h.update(np.ascontiguousarray(self.excluded.lo).tobytes() + np.ascontiguousarray(self.excluded.hi).tobytes())
        return h.hexdigest()


@dataclass
class Trajectory:
    states: np.ndarray  # (steps + 1, n)
    disturbances: np.ndarray  # (steps, n)
    bounds: np.ndarray  # (steps,) disturbance radius at each visited state
    escaped_at: int | None = None

    def save_csv(self, path) -> None:
        n = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", *[f"x_{i + 1}" for i in range(n)], *[f"w_{i + 1}" for i in range(n)]])
            for k, x in enumerate(self.states):
                ws = [repr(float(v)) for v in self.disturbances[k]] if k < len(self.disturbances) else [""] * n
                w.writerow([k, *[repr(float(v)) for v in x], *ws])


def _disturbance(policy: str, radius, n, rng):
    radius = np.asarray(radius, dtype=float)
    shape = radius.shape + (n,)
    if policy == "zero":
        return np.zeros(shape)
    if policy == "uniform":
        return rng.uniform(-1.0, 1.0, size=shape) * radius[..., None]
    if policy == "corner":
        return rng.choice([-1.0, 1.0], size=shape) * radius[..., None]
    raise ValueError(f"unknown disturbance policy {policy!r}")


def simulate(sys: UncertainSystem, x0, steps: int, policy: str = "zero", seed: int | None = 0, safety_box: Box | None = None) -> Trajectory:
    """Roll out ``x+ = A x + f_NN(x) + w`` with ``w`` drawn per ``policy``.

    ``policy`` is ``zero``, ``uniform`` (per coordinate over the l-inf ball of
    the admissible radius) or ``corner`` (random vertex of that ball).
    Leaving ``safety_box`` stops the rollout and sets ``escaped_at``.
    """
    rng = np.random.default_rng(seed)
    n = sys.dim
    x = np.asarray(x0, dtype=float).copy()
    states, ws, radii = [x.copy()], [], []
    escaped = None
    for k in range(steps):
        r = float(sys.error_bound(x))
        w = _disturbance(policy, r, n, rng)
        x = sys.step(x, w)
        ws.append(w)
        radii.append(r)
        states.append(x.copy())
        if safety_box is not None and not safety_box.contains(x):
            escaped = k + 1
            break
    return Trajectory(np.array(states), np.array(ws).reshape(-1, n), np.array(radii), escaped)


def simulate_batch(sys: UncertainSystem, X0, steps: int, policy: str = "zero", seed: int | None = 0):
    """Vectorized rollouts; returns states ``(steps+1, N, n)`` and disturbances ``(steps, N, n)``."""
    rng = np.random.default_rng(seed)
    X = np.atleast_2d(np.asarray(X0, dtype=float)).copy()
    states, ws = [X.copy()], []
    for _ in range(steps):
        W = _disturbance(policy, sys.error_bound(X), sys.dim, rng)
        X = sys.step(X, W)
        states.append(X.copy())
        ws.append(W)
    return np.array(states), np.array(ws)
