"""Node relaxations for quadratic objectives over ReLU trajectory stacks.

A node is a box on the decision vector ``v`` (``(x, w)`` or ``x``) plus a set
of ReLU phases fixed by branching. Propagation runs symbolic interval bounds
(affine lower/upper forms in ``v``) through every network copy. Unstable
neurons become LP variables with the triangle relaxation; stable and fixed
neurons are substituted exactly. The objective
``sum_s sign_s z_s' P z_s`` is split along eigen-directions of ``sign_s P``:
convex directions are overestimated by secants, concave ones by tangent cuts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

_LP_OPTIONS = {"primal_feasibility_tolerance": 1e-9, "dual_feasibility_tolerance": 1e-9, "presolve": True}


def _pos(M):
    return np.maximum(M, 0.0)


def _neg(M):
    return np.minimum(M, 0.0)


def _cmax(M, c, lo, hi):
    return c + _pos(M) @ hi + _neg(M) @ lo


def _cmin(M, c, lo, hi):
    return c + _pos(M) @ lo + _neg(M) @ hi


@dataclass
class Root:
    """A root region: a box on ``v`` plus an optional equality ``a.x = b``."""

    lo: np.ndarray
    hi: np.ndarray
    eq: tuple | None = None
    label: str = ""
    vertices: np.ndarray | None = None  # facet vertices, for sampling


@dataclass
class Node:
    lo: np.ndarray
    hi: np.ndarray
    root: int
    phases: dict = field(default_factory=dict)  # (chain, copy, layer, idx) -> 0/1
    depth: int = 0
    ub: float = np.inf
    id: int = 0


@dataclass
class _Iterate:
    E: np.ndarray  # exact expression rows in u
    e: np.ndarray
    L: np.ndarray  # lower form in v
    cL: np.ndarray
    U: np.ndarray
    cU: np.ndarray


@dataclass
class Unstable:
    key: tuple
    col: int
    row: np.ndarray
    const: float
    lo: float
    up: float


@dataclass
class Direction:
    mu: float
    row: np.ndarray
    const: float
    tlo: float
    thi: float
    sens: np.ndarray  # |d t / d v_j| from the symbolic forms


@dataclass
class Relaxation:
    ub: float
    u: np.ndarray | None
    v: np.ndarray | None
    unstable: list
    directions: list
    lo: np.ndarray
    hi: np.ndarray
    lp_solves: int = 0
    interval_only: bool = False

    def violations(self) -> np.ndarray:
        if self.u is None or not self.unstable:
            return np.zeros(len(self.unstable))
        out = []
        for nu in self.unstable:
            pre = float(nu.row[: self.u.size] @ self.u + nu.const)
            out.append(self.u[nu.col] - max(pre, 0.0))
        return np.maximum(np.array(out), 0.0)


class QuadraticTrajectoryProblem:
    """Maximize ``sum_s sign_s z_s' P z_s`` over roots, with trajectory stacks from ReLU dynamics.

    ``kind`` is ``dV`` (v = (x, w), objective V(y) - V(x)), ``succ``
    (v = (x, w), objective V(y)) or ``boundary`` (v = x, objective -V(x)).
    """

    def __init__(self, sys, P, k: int, kind: str, roots: list, region=None, track_w: bool = True):
        if kind not in ("dV", "succ", "boundary"):
            raise ValueError(f"unknown problem kind {kind!r}")
        self.sys = sys
        self.P = np.asarray(P, dtype=float)
        self.k = int(k)
        self.kind = kind
        self.n = sys.dim
        self.has_w = kind in ("dV", "succ")
        self.nv = 2 * self.n if self.has_w else self.n
        self.roots = roots
        self.region = region  # Polytope on x or None
        self.net = sys.net
        self.A = np.asarray(sys.A, dtype=float)
        if kind == "dV":
            self.copies = (max(self.k, 1), self.k)
            self.terms = ((1, 1.0), (0, -1.0))
        elif kind == "succ":
            self.copies = (1, self.k)
            self.terms = ((1, 1.0),)
        else:
            self.copies = (self.k, 0)
            self.terms = ((0, -1.0),)
        per_copy = sum(self.net.hidden_sizes)
        self.maxcols = self.nv + per_copy * sum(self.copies)
        self.eig = []
        for _, sign in self.terms:
            mu, Q = np.linalg.eigh(sign * self.P)
            keep = np.abs(mu) > 1e-13 * max(1.0, np.abs(mu).max())
            self.eig.append((mu[keep], Q[:, keep]))
        self.Ws = [np.asarray(W) for W in self.net.weights]
        self.bs = [np.asarray(b) for b in self.net.biases]

    # exact evaluation -------------------------------------------------------
    def split(self, V):
        V = np.asarray(V, dtype=float)
        if self.has_w:
            return V[..., : self.n], V[..., self.n :]
        return V, None

    def _stack(self, x):
        blocks = [x]
        cur = x
        for _ in range(self.k):
            cur = self.sys.nominal(cur)
            blocks.append(cur)
        return np.concatenate(blocks, axis=-1)

    def objective(self, V) -> np.ndarray:
        x, w = self.split(V)
        P = self.P
        out = 0.0
        if self.kind in ("dV", "succ"):
            zy = self._stack(self.sys.nominal(x) + w)
            out = out + np.einsum("...i,ij,...j->...", zy, P, zy)
        if self.kind in ("dV", "boundary"):
            zx = self._stack(x)
            out = out - np.einsum("...i,ij,...j->...", zx, P, zx)
        return out

    def feasible(self, V, root: Root | None = None, tol: float = 1e-9) -> np.ndarray:
        V = np.atleast_2d(V)
        x, w = self.split(V)
        ok = np.all(np.isfinite(V), axis=1)
        if self.kind == "dV":
            ok &= self.region.contains(x, tol=tol)
            ok &= ~self.sys.excluded.contains_interior(x)
        elif self.kind == "succ":
            ok &= self.sys.excluded.contains(x, tol=tol)
        else:
            ok &= self.region.contains(x, tol=tol)
            if root is not None and root.eq is not None:
                a, b = root.eq
                ok &= np.abs(x @ a - b) <= tol * max(1.0, abs(b))
        if self.has_w:
            ok &= np.abs(w).max(axis=1) <= self.sys.error_bound(x) + 1e-12
        return ok

    def omega(self, x_lo, x_hi) -> float:
        smax = float(max(np.abs(x_lo).max(), np.abs(x_hi).max()))
        return float(self.sys.error_bound.at_norm(smax))

    # propagation -------------------------------------------------------------
    def _copy(self, inp: _Iterate, chain: int, copy: int, lo, hi, phases, ctx) -> _Iterate | None:
        E, e, L, cL, U, cU = inp.E, inp.e, inp.L, inp.cL, inp.U, inp.cU
        nl = len(self.Ws)
        for layer in range(nl - 1):
            W, b = self.Ws[layer], self.bs[layer]
            Wp, Wn = _pos(W), _neg(W)
            pE, pe = W @ E, W @ e + b
            pU, pcU = Wp @ U + Wn @ L, Wp @ cU + Wn @ cL + b
            pL, pcL = Wp @ L + Wn @ U, Wp @ cL + Wn @ cU + b
            up = _cmax(pU, pcU, lo, hi)
            lw = _cmin(pL, pcL, lo, hi)
            m = W.shape[0]
            nE, ne = np.zeros_like(pE), np.zeros(m)
            nL, ncL = np.zeros_like(pL), np.zeros(m)
            nU, ncU = np.zeros_like(pU), np.zeros(m)
            for i in range(m):
                ph = phases.get((chain, copy, layer, i)) if phases else None
                if ph == 1:
                    if up[i] < 0:
                        return None
                    ctx["rows"].append((-pE[i], pe[i]))
                    active = True
                elif ph == 0:
                    if lw[i] > 0:
                        return None
                    ctx["rows"].append((pE[i], -pe[i]))
                    continue
                elif lw[i] >= 0:
                    active = True
                elif up[i] <= 0:
                    continue
                else:
                    col = ctx["ncols"]
                    ctx["ncols"] += 1
                    ctx["unstable"].append(Unstable((chain, copy, layer, i), col, pE[i].copy(), float(pe[i]), float(lw[i]), float(up[i])))
                    nE[i, col] = 1.0
                    lU = float(_cmin(pU[i : i + 1], pcU[i : i + 1], lo, hi)[0])
                    if lU >= 0:
                        nU[i], ncU[i] = pU[i], pcU[i]
                    else:
                        s = up[i] / (up[i] - lU)
                        nU[i], ncU[i] = s * pU[i], s * (pcU[i] - lU)
                    if up[i] > -lw[i]:
                        nL[i], ncL[i] = pL[i], pcL[i]
                    continue
                if active:
                    nE[i], ne[i] = pE[i], pe[i]
                    nL[i], ncL[i] = pL[i], pcL[i]
                    nU[i], ncU[i] = pU[i], pcU[i]
            E, e, L, cL, U, cU = nE, ne, nL, ncL, nU, ncU
        W, b = self.Ws[-1], self.bs[-1]
        Wp, Wn = _pos(W), _neg(W)
        A = self.A
        Ap, An = _pos(A), _neg(A)
        return _Iterate(
            A @ inp.E + W @ E,
            A @ inp.e + W @ e + b,
            Ap @ inp.L + An @ inp.U + Wp @ L + Wn @ U,
            Ap @ inp.cL + An @ inp.cU + Wp @ cL + Wn @ cU + b,
            Ap @ inp.U + An @ inp.L + Wp @ U + Wn @ L,
            Ap @ inp.cU + An @ inp.cL + Wp @ cU + Wn @ cL + b,
        )

    def node_box(self, node: Node):
        lo, hi = node.lo.copy(), node.hi.copy()
        if self.has_w:
            n = self.n
            om = self.omega(lo[:n], hi[:n])
            lo[n:] = np.maximum(lo[n:], -om)
            hi[n:] = np.minimum(hi[n:], om)
            if np.any(lo > hi):
                return None
        return lo, hi

    def propagate(self, node: Node):
        box = self.node_box(node)
        if box is None:
            return None
        lo, hi = box
        n, nv, mc = self.n, self.nv, self.maxcols
        ctx = {"ncols": nv, "unstable": [], "rows": []}
        E0 = np.zeros((n, mc))
        E0[:, :n] = np.eye(n)
        F0 = np.zeros((n, nv))
        F0[:, :n] = np.eye(n)
        chains = [[_Iterate(E0, np.zeros(n), F0, np.zeros(n), F0.copy(), np.zeros(n))], []]
        for c in range(self.copies[0]):
            nxt = self._copy(chains[0][-1], 0, c, lo, hi, node.phases, ctx)
            if nxt is None:
                return None
            chains[0].append(nxt)
        if self.has_w:
            x1 = chains[0][1]
            Ew = np.zeros((n, mc))
            Ew[:, n : 2 * n] = np.eye(n)
            Fw = np.zeros((n, nv))
            Fw[:, n:] = np.eye(n)
            chains[1].append(_Iterate(x1.E + Ew, x1.e.copy(), x1.L + Fw, x1.cL.copy(), x1.U + Fw, x1.cU.copy()))
            for c in range(self.copies[1]):
                nxt = self._copy(chains[1][-1], 1, c, lo, hi, node.phases, ctx)
                if nxt is None:
                    return None
                chains[1].append(nxt)
        ncols = ctx["ncols"]
        dirs = []
        for (chain, _), (mu, Q) in zip(self.terms, self.eig):
            its = chains[chain][: self.k + 1]
            ZE = np.vstack([it.E for it in its])[:, :ncols]
            ze = np.concatenate([it.e for it in its])
            ZL = np.vstack([it.L for it in its])
            zcL = np.concatenate([it.cL for it in its])
            ZU = np.vstack([it.U for it in its])
            zcU = np.concatenate([it.cU for it in its])
            for j in range(len(mu)):
                q = Q[:, j]
                qp, qn = _pos(q), _neg(q)
                tU, tcU = qp @ ZU + qn @ ZL, qp @ zcU + qn @ zcL
                tL, tcL = qp @ ZL + qn @ ZU, qp @ zcL + qn @ zcU
                thi = float(_cmax(tU[None], np.array([tcU]), lo, hi)[0])
                tlo = float(_cmin(tL[None], np.array([tcL]), lo, hi)[0])
                if tlo > thi:
                    tlo = thi = 0.5 * (tlo + thi)
                sens = 0.5 * (np.abs(tU) + np.abs(tL))
                dirs.append(Direction(float(mu[j]), q @ ZE, float(q @ ze), tlo, thi, sens))
        unstable = ctx["unstable"]
        for nu in unstable:
            nu.row = nu.row[:ncols]
        rows = [(r[:ncols], rhs) for r, rhs in ctx["rows"]]
        return lo, hi, ncols, unstable, rows, dirs

    # bounds ------------------------------------------------------------------
    @staticmethod
    def interval_ub(dirs) -> float:
        val = 0.0
        for d in dirs:
            if d.mu > 0:
                val += d.mu * max(d.tlo**2, d.thi**2)
            else:
                m = 0.0 if d.tlo <= 0 <= d.thi else min(d.tlo**2, d.thi**2)
                val += d.mu * m
        return val

    def relax(self, node: Node, threshold: float = -np.inf, kelley_rounds: int = 3) -> Relaxation | None:
        """Upper bound of the objective over the node; ``None`` when the node is empty."""
        prop = self.propagate(node)
        if prop is None:
            return None
        lo, hi, ncols, unstable, rows, dirs = prop
        iub = self.interval_ub(dirs)
        if iub <= threshold:
            return Relaxation(iub, None, None, unstable, dirs, lo, hi, 0, True)
        neg = [d for d in dirs if d.mu < 0]
        nr = len(neg)
        nvar = ncols + nr
        c = np.zeros(nvar)
        const = 0.0
        for d in dirs:
            if d.mu > 0:
                c[:ncols] += d.mu * (d.tlo + d.thi) * d.row
                const += d.mu * ((d.tlo + d.thi) * d.const - d.tlo * d.thi)
        for j, d in enumerate(neg):
            c[ncols + j] = d.mu
        A_rows, b_rows = [], []

        def add(row_u, rhs, rcol=None, rcoef=0.0):
            r = np.zeros(nvar)
            r[:ncols] = row_u
            if rcol is not None:
                r[ncols + rcol] = rcoef
            A_rows.append(r)
            b_rows.append(rhs)

        root = self.roots[node.root]
        if self.region is not None and self.kind in ("dV", "boundary"):
            for a, b in zip(self.region.A, self.region.b):
                r = np.zeros(ncols)
                r[: self.n] = a
                add(r, b)
        for nu in unstable:
            r = nu.row.copy()
            r[nu.col] -= 1.0
            add(r, -nu.const)
            s = nu.up / (nu.up - nu.lo)
            r = -s * nu.row
            r[nu.col] += 1.0
            add(r, s * (nu.const - nu.lo))
        for r, rhs in rows:
            add(r, rhs)

        def tangent(j, d, a):
            add(2 * a * d.row, a * a - 2 * a * d.const, j, -1.0)

        for j, d in enumerate(neg):
            pts = {d.tlo, 0.5 * (d.tlo + d.thi), d.thi}
            if d.tlo < 0 < d.thi:
                pts.add(0.0)
            for a in sorted(pts):
                tangent(j, d, a)
        A_eq = b_eq = None
        if root.eq is not None:
            a, b = root.eq
            r = np.zeros(nvar)
            r[: self.n] = a
            A_eq, b_eq = r[None], np.array([b])
        bounds = [(lo[i], hi[i]) for i in range(self.nv)]
        ub_of = {nu.col: nu.up for nu in unstable}
        bounds += [(0.0, ub_of[j]) for j in range(self.nv, ncols)]
        bounds += [(0.0, None)] * nr
        solves = 0
        best = iub
        u = None
        for _ in range(kelley_rounds + 1):
            res = linprog(-c, A_ub=np.array(A_rows) if A_rows else None, b_ub=np.array(b_rows) if b_rows else None,
                          A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs", options=_LP_OPTIONS)
            solves += 1
            if res.status == 2:
                return None
            if res.status != 0:
                break
            val = -res.fun + const
            val += 1e-9 * (1.0 + abs(val))
            if val < best:
                best = val
            u = res.x
            if best <= threshold:
                break
            added = False
            for j, d in enumerate(neg):
                t = float(d.row @ u[:ncols] + d.const)
                if t * t - u[ncols + j] > 1e-9 * max(1.0, t * t):
                    tangent(j, d, t)
                    added = True
            if not added:
                break
        if u is None:
            return Relaxation(iub, None, None, unstable, dirs, lo, hi, solves, True)
        uc = u[:ncols]
        return Relaxation(best, uc, uc[: self.nv].copy(), unstable, dirs, lo, hi, solves)
