"""Certified region-of-attraction estimates from a robust Lyapunov function.

The estimate is the sublevel set ``{x in X : V(x) <= c_max}`` where
``c_max`` is a certified lower bound on ``min V`` over the boundary of the
ROI ``X``. Trajectories from it end in ``{V <= c_min}``, with ``c_min`` a
certified upper bound on ``V`` over the successor set of ``B``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import UncertainSystem, simulate_batch
from .geometry import Polytope
from .lyapunov import LyapCandidate, eval_dV, eval_V
from .verifier import VerifierConfig, VerifierStatus, max_V_successor, min_V_boundary

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class LevelSetIndeterminate(RuntimeError):
    """A level-set bound could not be closed within the verifier budget."""


@dataclass
class RoaEstimate:
    sys: UncertainSystem
    cand: LyapCandidate
    c_max: float
    c_min: float
    attained_boundary: float = float("nan")  # V at the best boundary point found
    attained_successor: float = float("nan")
    flags: list = field(default_factory=list)

    @property
    def degenerate(self) -> bool:
        return not self.c_min < self.c_max

    def V(self, x):
        return eval_V(self.cand, self.sys, x)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "c_max": self.c_max,
            "c_min": self.c_min,
            "degenerate": self.degenerate,
            "flags": list(self.flags),
        }


def _level_config(config: VerifierConfig | None) -> VerifierConfig:
    config = config or VerifierConfig()
    return VerifierConfig(**{**config.__dict__, "mode": "optimize", "log_path": None})


def levels(sys: UncertainSystem, cand: LyapCandidate, config: VerifierConfig | None = None) -> tuple[float, float]:
    """Return ``(c_max, c_min)``; both bounds lean towards a smaller claim."""
    est = estimate(sys, cand, config)
    return est.c_max, est.c_min


def estimate(sys: UncertainSystem, cand: LyapCandidate, config: VerifierConfig | None = None) -> RoaEstimate:
    cfg = _level_config(config)
    bnd = min_V_boundary(sys, cand, config=cfg)
    if bnd.status == VerifierStatus.INDETERMINATE:
        raise LevelSetIndeterminate(f"boundary minimum not closed after {bnd.nodes} nodes")
    suc = max_V_successor(sys, cand, config=cfg)
    if suc.status == VerifierStatus.INDETERMINATE:
        raise LevelSetIndeterminate(f"successor maximum not closed after {suc.nodes} nodes")
    est = RoaEstimate(sys, cand, -bnd.ub, max(suc.ub, 0.0), -bnd.value, suc.value)
    if est.degenerate:
        est.flags.append("DEGENERATE")
        logger.warning("c_min %.6g >= c_max %.6g: the certified statement is empty", est.c_min, est.c_max)
    return est


def contains(est: RoaEstimate, x):
    x = np.asarray(x, dtype=float)
    return (est.V(x) <= est.c_max) & est.sys.roi.contains(x)


# grids -------------------------------------------------------------------------
@dataclass
class GridSlice:
    """V sampled on a 2-D mesh; ``fixed`` maps a frozen coordinate index to its value."""

    axes: tuple  # (axis index a, axis index b)
    u: np.ndarray  # coordinates along axes[0]
    v: np.ndarray  # coordinates along axes[1]
    points: np.ndarray  # (len(u), len(v), n)
    values: np.ndarray  # (len(u), len(v))
    inside: np.ndarray  # (len(u), len(v)) bool, V <= c_max and in the ROI
    in_roi: np.ndarray
    fixed: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        write_grid_csv(path, self.points.reshape(-1, self.points.shape[-1]), self.values.ravel(), self.inside.ravel())


def _mesh(est: RoaEstimate, axes, fixed, resolution):
    lo, hi = est.sys.roi.bounding_box()
    n = est.sys.dim
    u = np.linspace(lo[axes[0]], hi[axes[0]], resolution)
    v = np.linspace(lo[axes[1]], hi[axes[1]], resolution)
    pts = np.zeros((resolution, resolution, n))
    U, W = np.meshgrid(u, v, indexing="ij")
    pts[..., axes[0]] = U
    pts[..., axes[1]] = W
    for i, val in fixed.items():
        pts[..., i] = val
    flat = pts.reshape(-1, n)
    vals = est.V(flat).reshape(resolution, resolution)
    in_roi = est.sys.roi.contains(flat).reshape(resolution, resolution)
    return GridSlice(tuple(axes), u, v, pts, vals, (vals <= est.c_max) & in_roi, in_roi, dict(fixed))


def grid(est: RoaEstimate, resolution: int = 201) -> list[GridSlice]:
    """Mesh over the ROI bounding box in 2-D; slices ``x_1 = 0`` and ``x_3 = 0`` in 3-D."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    n = est.sys.dim
    if n == 2:
        return [_mesh(est, (0, 1), {}, resolution)]
    if n == 3:
        return [_mesh(est, (1, 2), {0: 0.0}, resolution), _mesh(est, (0, 1), {2: 0.0}, resolution)]
    raise ValueError("grids are available for 2-D and 3-D systems only")


def write_grid_csv(path, points, values, inside) -> None:
    n = points.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*[f"x_{i + 1}" for i in range(n)], "V", "inside"])
        for p, val, ins in zip(points, values, inside):
            w.writerow([*[repr(float(c)) for c in p], repr(float(val)), int(bool(ins))])


# plotting ----------------------------------------------------------------------
ROI_STYLE = 'fill="none" stroke="#d62728" stroke-width="1.5" stroke-dasharray="6,4"'
B_STYLE = 'fill="none" stroke="#000000" stroke-width="1"'
EST_STYLE = 'fill="none" stroke="#1f77b4" stroke-width="2"'


def _section(poly: Polytope, axes, fixed) -> np.ndarray:
    """Vertices, in counter-clockwise order, of the polytope cut by the fixed coordinates."""
    A, b = poly.A, poly.b.copy()
    for i, val in fixed.items():
        b = b - A[:, i] * val
    A2 = A[:, list(axes)]
    keep = np.linalg.norm(A2, axis=1) > 1e-12
    if np.any(b[~keep] < -1e-12):
        return np.zeros((0, 2))
    sec = Polytope(A2[keep], b[keep])
    v = sec.vertices()
    c = v.mean(axis=0)
    return v[np.argsort(np.arctan2(v[:, 1] - c[1], v[:, 0] - c[0]))]


def contour_paths(sl: GridSlice, level: float) -> list[np.ndarray]:
    """Level curves of V at ``level`` restricted to the ROI, in data coordinates."""
    from skimage.measure import find_contours

    # outside the ROI the field is lifted above the level so curves stay inside it
    field_ = np.where(sl.in_roi, sl.values, max(float(sl.values.max()), level) + 1.0)
    paths = []
    for c in find_contours(field_, level):
        u = np.interp(c[:, 0], np.arange(len(sl.u)), sl.u)
        v = np.interp(c[:, 1], np.arange(len(sl.v)), sl.v)
        paths.append(np.column_stack([u, v]))
    paths.sort(key=lambda p: (-len(p), float(p[0, 0]), float(p[0, 1])))
    return paths


def svg(est: RoaEstimate, sl: GridSlice, width: int = 480, title: str = "") -> str:
    """SVG with the ROI section, the excluded box and the estimate boundary, always in that order."""
    lo = np.array([sl.u[0], sl.v[0]])
    hi = np.array([sl.u[-1], sl.v[-1]])
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    height = int(round(width * (hi[1] - lo[1]) / (hi[0] - lo[0])))

    def tx(p):
        p = np.atleast_2d(p)
        X = (p[:, 0] - lo[0]) / (hi[0] - lo[0]) * width
        Y = (hi[1] - p[:, 1]) / (hi[1] - lo[1]) * height
        return " ".join(f"{a:.3f},{b:.3f}" for a, b in zip(X, Y))

    a0, a1 = sl.axes
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f"<title>{title}</title>" if title else "<title>ROA estimate</title>",
    ]
    roi = _section(est.sys.roi, sl.axes, sl.fixed)
    out.append(f'<polygon id="roi" points="{tx(roi)}" {ROI_STYLE}/>')
    B = est.sys.excluded
    if all(B.lo[i] <= val <= B.hi[i] for i, val in sl.fixed.items()):
        corners = np.array([[B.lo[a0], B.lo[a1]], [B.hi[a0], B.lo[a1]], [B.hi[a0], B.hi[a1]], [B.lo[a0], B.hi[a1]]])
        out.append(f'<polygon id="excluded" points="{tx(corners)}" {B_STYLE}/>')
    for i, path in enumerate(contour_paths(sl, est.c_max)):
        out.append(f'<polyline id="estimate{i}" points="{tx(path)}" {EST_STYLE}/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# simulation check ----------------------------------------------------------------
@dataclass
class SimulationReport:
    n_trajectories: int
    steps: int
    converged: int
    decrease_checks: int
    decrease_violations: int
    max_dV_outside_B: float

    @property
    def fraction(self) -> float:
        return self.converged / self.n_trajectories if self.n_trajectories else float("nan")

    @property
    def passed(self) -> bool:
        return self.converged == self.n_trajectories and self.decrease_violations == 0

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "n_trajectories": self.n_trajectories,
            "steps": self.steps,
            "converged": self.converged,
            "fraction": self.fraction,
            "decrease_checks": self.decrease_checks,
            "decrease_violations": self.decrease_violations,
            "max_dV_outside_B": self.max_dV_outside_B,
        }


def sample_inside(est: RoaEstimate, count: int, rng) -> np.ndarray:
    """Rejection samples from the estimate, uniform over its volume."""
    lo, hi = est.sys.roi.bounding_box()
    got = []
    total = 0
    while total < count:
        cand = rng.uniform(lo, hi, size=(max(4 * count, 1000), len(lo)))
        cand = cand[contains(est, cand)]
        got.append(cand)
        total += len(cand)
        if len(got) > 1000:
            raise RuntimeError("estimate has negligible volume; cannot sample initial states")
    return np.concatenate(got)[:count]


def validate_by_simulation(est: RoaEstimate, n_trajectories: int = 500, steps: int = 100, seed: int = 0,
                           policy: str = "corner") -> SimulationReport:
    """Simulate from states sampled in the estimate and check the certified claims.

    A trajectory counts as converged when its final state satisfies
    ``V <= c_min``. Every visited ``x`` in ``X`` outside the interior of ``B``
    is also checked for a strict decrease of ``V`` under the realized ``w``.
    """
    rng = np.random.default_rng(seed)
    X0 = sample_inside(est, n_trajectories, rng)
    states, ws = simulate_batch(est.sys, X0, steps, policy=policy, seed=int(rng.integers(2**31)))
    final = est.V(states[-1])
    converged = int(np.sum(final <= est.c_min))
    xs = states[:-1].reshape(-1, est.sys.dim)
    wv = ws.reshape(-1, est.sys.dim)
    mask = est.sys.roi.contains(xs) & ~est.sys.excluded.contains_interior(xs)
    dv = eval_dV(est.cand, est.sys, xs[mask], wv[mask]) if mask.any() else np.zeros(0)
    report = SimulationReport(n_trajectories, steps, converged, int(mask.sum()), int(np.sum(dv >= 0)),
                              float(dv.max()) if dv.size else float("-inf"))
    logger.info("simulation: %d/%d converged, %d decrease violations", converged, n_trajectories,
                report.decrease_violations)
    return report


def save_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


__all__ = [
    "RoaEstimate",
    "LevelSetIndeterminate",
    "GridSlice",
    "SimulationReport",
    "levels",
    "estimate",
    "contains",
    "grid",
    "write_grid_csv",
    "contour_paths",
    "svg",
    "sample_inside",
    "validate_by_simulation",
]
