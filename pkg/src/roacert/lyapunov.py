"""Trajectory basis ``z_k``, quadratic candidates ``V_k = z_k' P z_k`` and cut matrices.

``z_k(x) = [x; f(x); f(f(x)); ...; f^(k)(x)]`` with ``f`` the nominal map
``A x + f_NN(x)``. The Lyapunov difference ``V_k(f(x) + w) - V_k(x)`` is
linear in ``P`` and equals ``<P, C>`` for the cut matrix
``C = z(y) z(y)' - z(x) z(x)'``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class LyapCandidate:
    k: int
    P: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if self.k < 0:
            raise ValueError("order k must be nonnegative")
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("P must be square")
        if not np.allclose(P, P.T, atol=1e-12, rtol=0):
            raise ValueError("P must be symmetric")
        P = 0.5 * (P + P.T)
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @property
    def dim(self) -> int:
        return self.P.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.P)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "k": self.k, "P": self.P.tolist()}

    @classmethod
    def from_dict(cls, d) -> "LyapCandidate":
        return cls(int(d["k"]), np.array(d["P"], dtype=float))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def basis(sys, k: int, x) -> np.ndarray:
    if k < 0:
        raise ValueError("k must be nonnegative")
    x = np.asarray(x, dtype=float)
    blocks = [x]
    cur = x
    for _ in range(k):
        cur = sys.nominal(cur)
        blocks.append(cur)
    z = np.concatenate(blocks, axis=-1)
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("non-finite iterate in trajectory basis")
    return z


def _check_dims(cand: LyapCandidate, sys):
    if cand.dim != (cand.k + 1) * sys.dim:
        raise ValueError(f"P has size {cand.dim}, expected {(cand.k + 1) * sys.dim} for k={cand.k}")


def eval_V(cand: LyapCandidate, sys, x):
    _check_dims(cand, sys)
    z = basis(sys, cand.k, x)
    return np.einsum("...i,ij,...j->...", z, cand.P, z)


def eval_dV(cand: LyapCandidate, sys, x, w):
    x = np.asarray(x, dtype=float)
    y = sys.nominal(x) + np.asarray(w, dtype=float)
    return eval_V(cand, sys, y) - eval_V(cand, sys, x)


@dataclass(frozen=True)
class CutMatrix:
    C: np.ndarray
    x: np.ndarray
    w: np.ndarray

    def value(self, P) -> float:
        return float(np.sum(np.asarray(P) * self.C))


def cut_matrix(sys, k: int, x, w, self_check: bool = True) -> CutMatrix:
    """Matrix ``C`` with ``<P, C> = dV_k(x, w, P)`` for every symmetric ``P``."""
    x = np.asarray(x, dtype=float).copy()
    w = np.asarray(w, dtype=float).copy()
    y = sys.nominal(x) + w
    zx, zy = basis(sys, k, x), basis(sys, k, y)
    C = np.outer(zy, zy) - np.outer(zx, zx)
    C = 0.5 * (C + C.T)
    if self_check:
        rng = np.random.default_rng(0)
        d = C.shape[0]
        for _ in range(5):
            R = rng.normal(size=(d, d))
            P = 0.5 * (R + R.T)
            direct = zy @ P @ zy - zx @ P @ zx
            assert abs(np.sum(P * C) - direct) <= 1e-9 * max(1.0, abs(direct)), "cut matrix self-check failed"
    for a in (C, x, w):
        a.setflags(write=False)
    return CutMatrix(C, x, w)


@dataclass
class SampleSet:
    """Counterexample pairs ``(x, w)`` with their cut matrices."""

    cuts: list = field(default_factory=list)

    def __len__(self):
        return len(self.cuts)

    def __iter__(self):
        return iter(self.cuts)

    def add(self, cut: CutMatrix) -> None:
        self.cuts.append(cut)

    def contains_pair(self, x, w, tol: float = 1e-9) -> bool:
        return any(np.max(np.abs(c.x - x)) <= tol and np.max(np.abs(c.w - w)) <= tol for c in self.cuts)

    def matrices(self) -> list[np.ndarray]:
        return [c.C for c in self.cuts]
