"""Best-first branch and bound for the Lyapunov decrease and level-set problems."""

from __future__ import annotations

import csv
import heapq
import itertools
import json
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from ..geometry import Box, Polytope
from ..lyapunov import LyapCandidate
from .relax import Node, QuadraticTrajectoryProblem, Root

logger = logging.getLogger(__name__)


class VerifierStatus(str, Enum):
    CERTIFIED = "CERTIFIED"
    COUNTEREXAMPLE = "COUNTEREXAMPLE"
    INDETERMINATE = "INDETERMINATE"
    OPTIMAL = "OPTIMAL"


@dataclass
class VerifierConfig:
    eps_margin: float = 1e-6
    node_cap: int = 200_000
    time_limit: float | None = None
    mode: str = "decide"  # or "optimize" (run max_dV to a closed gap)
    gap_abs: float = 1e-6
    gap_rel: float = 1e-4
    presearch_samples: int = 2048
    ascent_starts: int = 8
    ascent_iters: int = 40
    kelley_rounds: int = 3
    neuron_branch_max_unstable: int = 8
    seed: int = 0
    debug: bool = False  # spot-check relaxation dominance at every node
    log_path: str | None = None  # node-log CSV

    def __post_init__(self):
        if self.mode not in ("decide", "optimize"):
            raise ValueError("mode must be 'decide' or 'optimize'")
        if self.eps_margin < 0 or self.node_cap < 1:
            raise ValueError("eps_margin must be >= 0 and node_cap >= 1")


@dataclass
class VerifierOutcome:
    status: VerifierStatus
    ub: float  # certified upper bound on the maximum
    value: float  # best exact objective found (lower bound on the maximum)
    x: np.ndarray | None = None
    w: np.ndarray | None = None
    nodes: int = 0
    lp_solves: int = 0
    wall_time: float = 0.0
    history: list = field(default_factory=list)  # (node, global ub, incumbent) on incumbent change
    node_log: list = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return self.status == VerifierStatus.CERTIFIED

    def counterexample_dict(self) -> dict:
        if self.x is None:
            raise ValueError("outcome carries no point")
        return {"x": self.x.tolist(), "w": None if self.w is None else self.w.tolist(), "dV": float(self.value)}

    def save_counterexample(self, path) -> None:
        Path(path).write_text(json.dumps(self.counterexample_dict(), indent=1) + "\n")


def write_node_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "depth", "node_ub", "global_ub", "incumbent"])
        for r in rows:
            w.writerow([r[0], r[1], repr(float(r[2])), repr(float(r[3])), repr(float(r[4]))])


# point repair and local ascent -------------------------------------------------
def _repair(problem: QuadraticTrajectoryProblem, root: Root, V):
    V = np.array(V, dtype=float, copy=True)
    x, w = problem.split(V)
    n = problem.n
    for _ in range(2):
        x = np.clip(x, root.lo[:n], root.hi[:n])
        if root.eq is not None:
            a, b = root.eq
            x = x + np.outer((b - x @ a) / (a @ a), a)
        if problem.region is not None and problem.kind != "succ":
            Ax = x @ problem.region.A.T
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(Ax > problem.region.b, problem.region.b / Ax, 1.0)
            x = x * np.min(ratio, axis=1, keepdims=True)
    if problem.has_w:
        om = problem.sys.error_bound(x)[:, None]
        w = np.clip(w, np.maximum(root.lo[n:], -om), np.minimum(root.hi[n:], om))
        w = np.clip(w, -om, om)
        return np.hstack([x, w])
    return x


def _ascent(problem, root, V0, iters: int):
    """Projected finite-difference ascent on the exact objective."""
    v = _repair(problem, root, V0[None])[0]
    f = float(problem.objective(v))
    diam = float(np.max(root.hi - root.lo))
    step = 0.1 * diam
    nv = v.size
    h = 1e-7 * max(1.0, diam)
    for _ in range(iters):
        pts = np.vstack([v + h * np.eye(nv), v - h * np.eye(nv)])
        vals = problem.objective(pts)
        g = (vals[:nv] - vals[nv:]) / (2 * h)
        gn = np.linalg.norm(g)
        if gn == 0 or step < 1e-12 * max(1.0, diam):
            break
        while step >= 1e-12 * max(1.0, diam):
            cand = _repair(problem, root, (v + step * g / gn)[None])[0]
            fc = float(problem.objective(cand))
            if fc > f:
                v, f = cand, fc
                step *= 1.5
                break
            step *= 0.5
    return v, f


def _sample_root(problem, root: Root, count: int, rng):
    n = problem.n
    if root.eq is not None and problem.kind == "boundary":
        if root.vertices is None or len(root.vertices) == 0:
            return rng.uniform(root.lo, root.hi, size=(count, n))
        return rng.dirichlet(np.ones(len(root.vertices)), size=count) @ root.vertices
    X = rng.uniform(root.lo[:n], root.hi[:n], size=(count, n))
    if not problem.has_w:
        return X
    om = problem.sys.error_bound(X)
    signs = np.array(list(itertools.product([-1.0, 1.0], repeat=n)))
    pts = [np.hstack([X, np.zeros_like(X)])]
    for s in signs:
        pts.append(np.hstack([X, s * om[:, None]]))
    return np.vstack(pts)


class _Search:
    def __init__(self, problem: QuadraticTrajectoryProblem, config: VerifierConfig, decide: bool, stop_at_nonneg: bool):
        self.p = problem
        self.cfg = config
        self.decide = decide
        self.stop_at_nonneg = stop_at_nonneg
        self.best_v = None
        self.best_root = None
        self.lb = -np.inf
        self.history = []
        self.node_log = []
        self.nodes = 0
        self.lp = 0

    def offer(self, V, root_idx: int, node_id: int, global_ub: float):
        root = self.p.roots[root_idx]
        V = np.atleast_2d(V)
        ok = self.p.feasible(V, root)
        if not ok.any():
            return
        V = V[ok]
        vals = self.p.objective(V)
        i = int(np.argmax(vals))
        if vals[i] > self.lb:
            self.lb = float(vals[i])
            self.best_v = V[i].copy()
            self.best_root = root_idx
            self.history.append((node_id, float(global_ub), self.lb))

    def threshold(self) -> float:
        if self.decide:
            return -self.cfg.eps_margin
        if not np.isfinite(self.lb):
            return -np.inf
        return self.lb + max(self.cfg.gap_abs, self.cfg.gap_rel * abs(self.lb))

    def presearch(self, rng):
        cfg = self.cfg
        cands = []
        for ri, root in enumerate(self.p.roots):
            V = _sample_root(self.p, root, cfg.presearch_samples, rng)
            V = _repair(self.p, root, V)
            ok = self.p.feasible(V, root)
            if not ok.any():
                continue
            V = V[ok]
            vals = self.p.objective(V)
            order = np.argsort(-vals, kind="stable")[: cfg.ascent_starts]
            cands.extend((float(vals[j]), ri, V[j]) for j in order)
        cands.sort(key=lambda t: -t[0])
        for _, ri, v in cands[: cfg.ascent_starts]:
            self.offer(v[None], ri, 0, np.inf)
            v2, _ = _ascent(self.p, self.p.roots[ri], v, cfg.ascent_iters)
            self.offer(v2[None], ri, 0, np.inf)

    def polish(self):
        if self.best_v is None:
            return
        v2, _ = _ascent(self.p, self.p.roots[self.best_root], self.best_v, 3 * self.cfg.ascent_iters)
        self.offer(v2[None], self.best_root, self.nodes, np.inf)

    def branch(self, node: Node, rel):
        cfg = self.cfg
        lo, hi = rel.lo, rel.hi
        viol = rel.violations()
        if rel.unstable and len(rel.unstable) <= cfg.neuron_branch_max_unstable and viol.max(initial=0.0) > 1e-9:
            xs = [i for i, nu in enumerate(rel.unstable) if nu.key[0] == 0 and viol[i] > 1e-9]
            pool = xs if xs else range(len(rel.unstable))
            i = max(pool, key=lambda j: (viol[j], -j))
            key = rel.unstable[i].key
            kids = []
            for ph in (0, 1):
                phases = dict(node.phases)
                phases[key] = ph
                kids.append(Node(lo.copy(), hi.copy(), node.root, phases, node.depth + 1))
            return kids
        width = hi - lo
        score = np.zeros_like(width)
        for d in rel.directions:
            score += abs(d.mu) * (d.thi - d.tlo) * d.sens
        score *= width
        root = self.p.roots[node.root]
        rel_w = width / np.maximum(root.hi - root.lo, 1e-300)
        if not np.any(score > 0):
            score = rel_w.copy()
        score[width <= 1e-9 * np.maximum(1.0, np.abs(root.hi - root.lo))] = 0.0
        if not np.any(score > 0):
            if rel.unstable:
                i = int(np.argmax(viol)) if viol.size else 0
                key = rel.unstable[i].key
                kids = []
                for ph in (0, 1):
                    phases = dict(node.phases)
                    phases[key] = ph
                    kids.append(Node(lo.copy(), hi.copy(), node.root, phases, node.depth + 1))
                return kids
            return []
        j = int(np.argmax(score))
        mid = 0.5 * (lo[j] + hi[j])
        a_hi, b_lo = hi.copy(), lo.copy()
        a_hi[j] = mid
        b_lo[j] = mid
        return [
            Node(lo.copy(), a_hi, node.root, dict(node.phases), node.depth + 1),
            Node(b_lo, hi.copy(), node.root, dict(node.phases), node.depth + 1),
        ]

    def debug_check(self, node, rel, rng):
        root = self.p.roots[node.root]
        V = rng.uniform(rel.lo, rel.hi, size=(64, self.p.nv))
        V = _repair(self.p, root, V)
        inside = np.all((V >= node.lo - 1e-12) & (V <= node.hi + 1e-12), axis=1) & self.p.feasible(V, root)
        if node.phases and inside.any():
            inside &= self._pattern_ok(V, node.phases)
        if inside.any():
            worst = float(self.p.objective(V[inside]).max())
            if worst > rel.ub + 1e-7 * max(1.0, abs(worst)):
                raise AssertionError(f"relaxation bound {rel.ub} below exact value {worst} at node {node.id}")

    def _pattern_ok(self, V, phases):
        p = self.p
        x, w = p.split(V)
        chains = [[x], []]
        cur = x
        for _ in range(p.copies[0]):
            cur = p.sys.nominal(cur)
            chains[0].append(cur)
        if p.has_w:
            cur = chains[0][1] + w
            chains[1].append(cur)
            for _ in range(p.copies[1]):
                cur = p.sys.nominal(cur)
                chains[1].append(cur)
        ok = np.ones(len(V), dtype=bool)
        for (chain, copy, layer, idx), ph in phases.items():
            pre = p.net.pre_activations(chains[chain][copy])[layer][:, idx]
            ok &= (pre >= 0) if ph == 1 else (pre <= 0)
        return ok

    def run(self) -> VerifierOutcome:
        cfg = self.cfg
        t0 = time.perf_counter()
        rng = np.random.default_rng(cfg.seed)
        self.presearch(rng)
        if self.stop_at_nonneg and self.lb >= 0:
            self.polish()
            return self._finish(VerifierStatus.COUNTEREXAMPLE, np.inf, t0)
        heap = []
        counter = itertools.count()
        for ri, root in enumerate(self.p.roots):
            nid = next(counter)
            heapq.heappush(heap, (-np.inf, nid, Node(root.lo.copy(), root.hi.copy(), ri, {}, 0, np.inf, nid)))
        closed = -np.inf
        capped = False
        while heap:
            neg_ub, _, node = heapq.heappop(heap)
            parent_ub = -neg_ub
            thr = self.threshold()
            if parent_ub <= thr:
                closed = max(closed, parent_ub)
                continue
            if self.nodes >= cfg.node_cap or (cfg.time_limit is not None and time.perf_counter() - t0 > cfg.time_limit):
                heapq.heappush(heap, (neg_ub, node.id, node))
                capped = True
                break
            self.nodes += 1
            rel = self.p.relax(node, thr, cfg.kelley_rounds)
            if rel is None:
                continue
            self.lp += rel.lp_solves
            ub = min(rel.ub, parent_ub)
            if cfg.debug:
                self.debug_check(node, rel, rng)
            if rel.v is not None:
                root = self.p.roots[node.root]
                V = _repair(self.p, root, np.clip(rel.v, rel.lo, rel.hi)[None])
                gub = max(closed, ub, -heap[0][0] if heap else -np.inf)
                self.offer(V, node.root, node.id, gub)
                if self.stop_at_nonneg and self.lb >= 0:
                    self.polish()
                    return self._finish(VerifierStatus.COUNTEREXAMPLE, np.inf, t0)
            thr = self.threshold()
            gub = max(closed, ub, -heap[0][0] if heap else -np.inf)
            if cfg.log_path is not None or cfg.debug:
                self.node_log.append((node.id, node.depth, ub, gub, self.lb))
            if ub <= thr:
                closed = max(closed, ub)
                continue
            kids = self.branch(node, rel)
            if not kids:
                closed = max(closed, ub)
                continue
            for kid in kids:
                kid.id = next(counter)
                kid.ub = ub
                heapq.heappush(heap, (-ub, kid.id, kid))
            if self.nodes % 500 == 0:
                logger.debug("node %d  global ub %.6g  incumbent %.6g  open %d", self.nodes, gub, self.lb, len(heap))
        open_ub = -heap[0][0] if heap else -np.inf
        ub = max(closed, open_ub)
        if not self.decide:
            ub = max(ub, self.lb)
        if capped:
            return self._finish(VerifierStatus.INDETERMINATE, ub, t0)
        if self.decide:
            status = VerifierStatus.CERTIFIED if ub <= -cfg.eps_margin else VerifierStatus.INDETERMINATE
        else:
            status = VerifierStatus.OPTIMAL
        return self._finish(status, ub, t0)

    def _finish(self, status, ub, t0) -> VerifierOutcome:
        x = w = None
        if self.best_v is not None:
            x, w = self.p.split(self.best_v)
            x = np.array(x)
            w = None if w is None else np.array(w)
        out = VerifierOutcome(status, float(ub), float(self.lb), x, w, self.nodes, self.lp,
                              time.perf_counter() - t0, self.history, self.node_log)
        if self.cfg.log_path is not None:
            write_node_log(self.node_log, self.cfg.log_path)
        return out


# root construction -----------------------------------------------------------
def complement_roots(region: Polytope, excluded: Box, w_radius: float | None) -> list[Root]:
    """Disjoint boxes covering ``bbox(region)`` minus the interior of ``excluded``."""
    blo, bhi = region.bounding_box()
    n = region.dim
    roots = []
    for i in range(n):
        for side in ("hi", "lo"):
            lo, hi = blo.copy(), bhi.copy()
            lo[:i] = np.maximum(lo[:i], excluded.lo[:i])
            hi[:i] = np.minimum(hi[:i], excluded.hi[:i])
            if side == "hi":
                lo[i] = excluded.hi[i]
            else:
                hi[i] = excluded.lo[i]
            if np.any(lo >= hi):
                continue
            if w_radius is not None:
                lo = np.concatenate([lo, -w_radius * np.ones(n)])
                hi = np.concatenate([hi, w_radius * np.ones(n)])
            roots.append(Root(lo, hi, None, f"x{i + 1}-{side}"))
    return roots


def _check(sys, cand: LyapCandidate):
    if cand.dim != (cand.k + 1) * sys.dim:
        raise ValueError(f"candidate size {cand.dim} does not match k={cand.k} and n={sys.dim}")


def max_dV(sys, cand: LyapCandidate, config: VerifierConfig | None = None) -> VerifierOutcome:
    """Maximize ``V(A x + f_NN(x) + w) - V(x)`` over ``x in X \\ int(B)`` and admissible ``w``.

    ``decide`` mode stops at the first exact counterexample or when the global
    upper bound falls to ``-eps_margin``; ``optimize`` mode closes the gap.
    """
    config = config or VerifierConfig()
    _check(sys, cand)
    om = float(sys.error_bound.at_norm(sys.roi.max_inf_norm()))
    roots = complement_roots(sys.roi, sys.excluded, max(om, 0.0))
    problem = QuadraticTrajectoryProblem(sys, cand.P, cand.k, "dV", roots, region=sys.roi)
    search = _Search(problem, config, decide=config.mode == "decide", stop_at_nonneg=config.mode == "decide")
    out = search.run()
    if config.mode == "optimize" and out.status == VerifierStatus.OPTIMAL:
        if out.ub <= -config.eps_margin:
            out.status = VerifierStatus.CERTIFIED
        elif out.value >= 0:
            out.status = VerifierStatus.COUNTEREXAMPLE
        else:
            out.status = VerifierStatus.INDETERMINATE
    if out.status == VerifierStatus.COUNTEREXAMPLE:
        _validate_counterexample(sys, cand, out)
    logger.info("max_dV: %s ub=%.6g incumbent=%.6g nodes=%d", out.status.value, out.ub, out.value, out.nodes)
    return out


def _validate_counterexample(sys, cand, out):
    from ..lyapunov import eval_dV

    x, w = out.x, out.w
    val = float(eval_dV(cand, sys, x, w))
    ok = sys.roi.contains(x, tol=1e-9) and not sys.excluded.contains_interior(x)
    ok = ok and float(np.abs(w).max()) <= float(sys.error_bound(x)) + 1e-9
    if not ok or val < 0:
        raise AssertionError(f"counterexample failed exact re-check (dV={val}, feasible={ok})")
    out.value = val


def max_V_successor(sys, cand: LyapCandidate, box: Box | None = None, config: VerifierConfig | None = None) -> VerifierOutcome:
    """Upper bound on ``max V(A x + f_NN(x) + w)`` over ``x in box`` and admissible ``w``."""
    config = config or VerifierConfig()
    _check(sys, cand)
    box = box or sys.excluded
    om = float(sys.error_bound.at_norm(max(np.abs(box.lo).max(), np.abs(box.hi).max())))
    n = sys.dim
    root = Root(np.concatenate([box.lo, -om * np.ones(n)]), np.concatenate([box.hi, om * np.ones(n)]), None, "B")
    problem = QuadraticTrajectoryProblem(sys, cand.P, cand.k, "succ", [root])
    out = _Search(problem, config, decide=False, stop_at_nonneg=False).run()
    logger.info("max_V_successor: ub=%.6g incumbent=%.6g nodes=%d", out.ub, out.value, out.nodes)
    return out


def min_V_boundary(sys, cand: LyapCandidate, region: Polytope | None = None, config: VerifierConfig | None = None) -> VerifierOutcome:
    """Certified bound on ``min V`` over the boundary of ``region``.

    The returned outcome maximizes ``-V``: ``-out.ub`` is a lower bound on the
    boundary minimum and ``-out.value`` an attained value.
    """
    config = config or VerifierConfig()
    _check(sys, cand)
    region = region or sys.roi
    roots = []
    for i in range(region.n_facets):
        verts = region.facet_vertices(i)
        if len(verts) == 0:
            continue
        lo, hi = verts.min(axis=0), verts.max(axis=0)
        pad = 1e-12 * np.maximum(1.0, np.abs(hi))
        roots.append(Root(lo - pad, hi + pad, (region.A[i].copy(), float(region.b[i])), f"facet{i}", verts))
    problem = QuadraticTrajectoryProblem(sys, cand.P, cand.k, "boundary", roots, region=region)
    out = _Search(problem, config, decide=False, stop_at_nonneg=False).run()
    logger.info("min_V_boundary: lb=%.6g attained=%.6g nodes=%d", -out.ub, -out.value, out.nodes)
    return out
