"""Approximation-error bounds ``||w(x)||_inf <= min_i (gamma_i ||x||_inf + delta_i)``.

The residual of a decomposition ``f(x) = A x + f_NN(x) + w(x)`` is sampled on
an epsilon-net; admissible (gamma, delta) pairs dominate every sampled
residual and can be inflated by a Lipschitz argument to cover the whole
region.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .relu_net import forward

SCHEMA_VERSION = 1

DEFAULT_GAMMAS = (0.0, 0.01, 0.025, 0.05, 0.1)


class Provenance(str, Enum):
    SAMPLED = "SAMPLED"
    INFLATED = "INFLATED"


@dataclass(frozen=True)
class ErrorBound:
    pieces: tuple  # ((gamma, delta), ...)
    provenance: Provenance = Provenance.SAMPLED
    eps: float | None = None
    lipschitz_w: float | None = None

    def __post_init__(self):
        pieces = tuple((float(g), float(d)) for g, d in self.pieces)
        if not pieces:
            raise ValueError("an error bound needs at least one piece")
        for g, d in pieces:
            if g < 0 or d < 0 or not (np.isfinite(g) and np.isfinite(d)):
                raise ValueError(f"invalid piece (gamma={g}, delta={d})")
        object.__setattr__(self, "pieces", pieces)
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @classmethod
    def zero(cls) -> "ErrorBound":
        return cls(((0.0, 0.0),))

    @property
    def gammas(self) -> np.ndarray:
        return np.array([g for g, _ in self.pieces])

    @property
    def deltas(self) -> np.ndarray:
        return np.array([d for _, d in self.pieces])

    @property
    def is_deterministic(self) -> bool:
        return self.provenance == Provenance.INFLATED

    def at_norm(self, r):
        """Bound value for ``||x||_inf = r`` (scalar or array)."""
        r = np.asarray(r, dtype=float)
        return np.min(self.gammas * r[..., None] + self.deltas, axis=-1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.at_norm(np.abs(x).max(axis=-1))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "pieces": [{"gamma": g, "delta": d} for g, d in self.pieces],
            "provenance": self.provenance.value,
            "eps": self.eps,
            "lipschitz_w": self.lipschitz_w,
        }

    @classmethod
    def from_dict(cls, d) -> "ErrorBound":
        return cls(
            tuple((p["gamma"], p["delta"]) for p in d["pieces"]),
            Provenance(d.get("provenance", "SAMPLED")),
            d.get("eps"),
            d.get("lipschitz_w"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "ErrorBound":
        return cls.from_dict(json.loads(Path(path).read_text()))


def residuals(fmap, A, net, samples) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(||x||_inf, ||w(x)||_inf)`` for each sample, ``w = f(x) - A x - f_NN(x)``."""
    X = np.atleast_2d(np.asarray(getattr(samples, "samples", samples), dtype=float))
    W = fmap(X) - X @ np.asarray(A, dtype=float).T - forward(net, X)
    return np.abs(X).max(axis=1), np.abs(W).max(axis=1)


def admissible_delta(x_norms, w_norms, gamma: float) -> float:
    """Smallest delta with ``w <= gamma * x + delta`` on every sample (never negative)."""
    x_norms = np.asarray(x_norms, dtype=float)
    w_norms = np.asarray(w_norms, dtype=float)
    if x_norms.size == 0:
        raise ValueError("no residual samples")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    return max(0.0, float(np.max(w_norms - gamma * x_norms)))


def inflate(bound, eps: float, lipschitz_f: float, lipschitz_n: float) -> ErrorBound:
    """Extend a sampled bound from an eps-net to the covered region.

    Each piece becomes ``(gamma, delta + (L_f + L_N + gamma) * eps)``.
    """
    if eps < 0 or lipschitz_f < 0 or lipschitz_n < 0:
        raise ValueError("eps and Lipschitz constants must be nonnegative")
    pieces = bound.pieces if isinstance(bound, ErrorBound) else bound
    lw = lipschitz_f + lipschitz_n
    return ErrorBound(
        tuple((g, d + (lw + g) * eps) for g, d in pieces),
        Provenance.INFLATED,
        eps=float(eps),
        lipschitz_w=float(lw),
    )


def prune_pieces(pieces: Sequence[tuple], radius: float) -> tuple:
    """Drop pieces that another piece dominates on ``0 <= ||x||_inf <= radius``."""
    pieces = list(dict.fromkeys((float(g), float(d)) for g, d in pieces))
    keep = []
    for i, (g, d) in enumerate(pieces):
        dominated = False
        for j, (g2, d2) in enumerate(pieces):
            if i == j:
                continue
            le0, leR = d2 <= d, g2 * radius + d2 <= g * radius + d
            strict = d2 < d or g2 * radius + d2 < g * radius + d
            if le0 and leR and (strict or j < i):
                dominated = True
                break
        if not dominated:
            keep.append((g, d))
    return tuple(keep)


def concave_bound(x_norms, w_norms, gammas: Sequence[float] = DEFAULT_GAMMAS, radius: float | None = None) -> ErrorBound:
    """Min-of-affine bound with one admissible piece per slope in ``gammas``.

    With ``radius`` given, pieces dominated over ``[0, radius]`` are pruned.
    """
    if len(gammas) == 0:
        raise ValueError("need at least one gamma")
    pieces = tuple((float(g), admissible_delta(x_norms, w_norms, g)) for g in gammas)
    if radius is not None:
        pieces = prune_pieces(pieces, radius)
    return ErrorBound(pieces, Provenance.SAMPLED)
