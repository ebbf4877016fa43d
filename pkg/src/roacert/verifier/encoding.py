"""Explicit mixed-integer linear encoding of the decrease problem.

Variables are laid out in one vector: ``x``, ``w``, ``y``, the post-activation
and output of every network copy, the ``||x||_inf`` auxiliary ``s`` and the
binaries. Unstable neurons get one binary each with the four big-M rows;
stable neurons are equalities. ``x`` outside the interior of ``B`` is enforced
with ``2n`` face selectors, ``||x||_inf`` with ``2n`` sign selectors.

The branch-and-bound solver does not read this object; it uses the triangle
relaxation, which is the projection of this encoding's LP relaxation onto
the continuous variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from ..geometry import Box
from ..relu_net import ActivationBounds, NeuronStatus, interval_bounds, neuron_status


class EncodingError(ValueError):
    pass


@dataclass
class MilEncoding:
    n_vars: int
    names: list
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray  # bool mask
    A_ub: np.ndarray
    b_ub: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    index: dict  # name -> slice or int
    copies: list  # per copy: dict(chain, copy, input, pre, post, out, status, bounds)
    P: np.ndarray
    k: int
    zx_idx: list = field(default_factory=list)
    zy_idx: list = field(default_factory=list)
    excluded: Box | None = None

    @property
    def binaries(self) -> np.ndarray:
        return np.flatnonzero(self.integer)

    @property
    def network_binaries(self) -> int:
        return int(sum(np.sum(c["status_flat"] == NeuronStatus.UNSTABLE) for c in self.copies))

    def objective(self, values) -> float:
        v = np.asarray(values, dtype=float)
        zy = np.concatenate([v[s] for s in self.zy_idx])
        zx = np.concatenate([v[s] for s in self.zx_idx])
        return float(zy @ self.P @ zy - zx @ self.P @ zx)

    def check(self, values, tol: float = 1e-7) -> bool:
        v = np.asarray(values, dtype=float)
        if v.shape != (self.n_vars,):
            return False
        if np.any(v < self.lb - tol) or np.any(v > self.ub + tol):
            return False
        if np.any(np.abs(v[self.integer] - np.round(v[self.integer])) > tol):
            return False
        scale = 1.0 + np.abs(self.b_ub)
        if self.A_ub.size and np.any(self.A_ub @ v - self.b_ub > tol * scale):
            return False
        scale = 1.0 + np.abs(self.b_eq)
        if self.A_eq.size and np.any(np.abs(self.A_eq @ v - self.b_eq) > tol * scale):
            return False
        return True

    def complete(self, x, w, sys) -> np.ndarray:
        """Variable vector from the true forward pass and matching binaries."""
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        v = np.zeros(self.n_vars)
        ix = self.index
        v[ix["x"]] = x
        v[ix["w"]] = w
        inputs = {}
        chain_iter = {(0, 0): x}
        y = sys.nominal(x) + w
        v[ix["y"]] = y
        chain_iter[(1, 0)] = y
        for c in self.copies:
            h = chain_iter[(c["chain"], c["copy"])]
            inputs[(c["chain"], c["copy"])] = h
            pres = sys.net.pre_activations(h)
            for layer, p in enumerate(pres[:-1]):
                v[c["post"][layer]] = np.maximum(p, 0.0)
                for i, col in enumerate(c["binary"][layer]):
                    if col >= 0:
                        v[col] = 1.0 if p[i] > 0 else 0.0
            nxt = sys.A @ h + pres[-1]
            v[c["out"]] = nxt
            chain_iter[(c["chain"], c["copy"] + 1)] = nxt
        if "s" in ix:
            s = np.abs(x).max()
            v[ix["s"]] = s
            j = int(np.argmax(np.abs(x)))
            sel = np.zeros(2 * len(x))
            sel[2 * j + (0 if x[j] >= 0 else 1)] = 1.0
            v[ix["norm_sel"]] = sel
        B = self.excluded
        sel = np.zeros(2 * len(x))
        for i in range(len(x)):
            if x[i] >= B.hi[i]:
                sel[2 * i] = 1.0
                break
            if x[i] <= B.lo[i]:
                sel[2 * i + 1] = 1.0
                break
        v[ix["b_sel"]] = sel
        return v

    def fixed_binary_lp(self, x, w, assignment) -> bool:
        """Feasibility of the encoding with ``x``, ``w`` and every binary fixed."""
        lb, ub = self.lb.copy(), self.ub.copy()
        for name, val in (("x", x), ("w", w)):
            sl = self.index[name]
            lb[sl] = ub[sl] = np.asarray(val, dtype=float)
        bins = self.binaries
        lb[bins] = ub[bins] = np.asarray(assignment, dtype=float)
        res = linprog(np.zeros(self.n_vars), A_ub=self.A_ub if self.A_ub.size else None, b_ub=self.b_ub if self.A_ub.size else None,
                      A_eq=self.A_eq if self.A_eq.size else None, b_eq=self.b_eq if self.A_eq.size else None,
                      bounds=list(zip(lb, ub)), method="highs")
        return res.status == 0


class _Builder:
    def __init__(self):
        self.names, self.lb, self.ub, self.integer = [], [], [], []
        self.ub_rows, self.eq_rows = [], []

    def var(self, name, lo, hi, integer=False) -> int:
        self.names.append(name)
        self.lb.append(float(lo))
        self.ub.append(float(hi))
        self.integer.append(integer)
        return len(self.names) - 1

    def vec(self, name, lo, hi, integer=False) -> np.ndarray:
        return np.array([self.var(f"{name}[{i}]", l, h, integer) for i, (l, h) in enumerate(zip(lo, hi))], dtype=int)

    def le(self, terms, rhs):
        self.ub_rows.append((terms, float(rhs)))

    def eq(self, terms, rhs):
        self.eq_rows.append((terms, float(rhs)))

    def dense(self, rows):
        n = len(self.names)
        A = np.zeros((len(rows), n))
        b = np.zeros(len(rows))
        for r, (terms, rhs) in enumerate(rows):
            for col, coef in terms:
                A[r, col] += coef
            b[r] = rhs
        return A, b


def _box_image(sys, box_lo, box_hi, bounds: ActivationBounds):
    A = np.asarray(sys.A)
    Ap, An = np.maximum(A, 0), np.minimum(A, 0)
    lo = Ap @ box_lo + An @ box_hi + bounds.lower[-1]
    hi = Ap @ box_hi + An @ box_lo + bounds.upper[-1]
    return lo, hi


def copy_bounds(sys, k: int, x_lo, x_hi, w_radius: float):
    """Interval bounds for every network copy of the decrease problem.

    Returns a list of ``(chain, copy, input_lo, input_hi, ActivationBounds)``.
    """
    out = []
    lo, hi = np.asarray(x_lo, float), np.asarray(x_hi, float)
    for c in range(max(k, 1)):
        b = interval_bounds(sys.net, lo, hi)
        out.append((0, c, lo, hi, b))
        nlo, nhi = _box_image(sys, lo, hi, b)
        if c == 0:
            y_lo, y_hi = nlo - w_radius, nhi + w_radius
        lo, hi = nlo, nhi
    lo, hi = y_lo, y_hi
    for c in range(k):
        b = interval_bounds(sys.net, lo, hi)
        out.append((1, c, lo, hi, b))
        lo, hi = _box_image(sys, lo, hi, b)
    return out


def encode(sys, cand, bounds=None) -> MilEncoding:
    """Mixed-integer encoding of ``max V(y) - V(x)`` over ``x in X \\ int(B)``, ``||w|| <= bound(x)``."""
    n, k = sys.dim, cand.k
    if cand.dim != (k + 1) * n:
        raise EncodingError("candidate size does not match the system")
    x_lo, x_hi = sys.roi.bounding_box()
    om = float(sys.error_bound.at_norm(max(np.abs(x_lo).max(), np.abs(x_hi).max())))
    if bounds is None:
        bounds = copy_bounds(sys, k, x_lo, x_hi, om)
    for *_, ab in bounds:
        for lo, hi in zip(ab.lower, ab.upper):
            if np.any(lo > hi + 1e-12):
                raise EncodingError("activation bounds with lower > upper")
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise EncodingError("unbounded big-M constant")
    bld = _Builder()
    X = bld.vec("x", x_lo, x_hi)
    W = bld.vec("w", -om * np.ones(n), om * np.ones(n))
    by_key = {(c, i): (ilo, ihi, ab) for c, i, ilo, ihi, ab in bounds}
    y_lo, y_hi = by_key[(1, 0)][:2] if (1, 0) in by_key else _y_box(sys, by_key[(0, 0)], om)
    Y = bld.vec("y", y_lo, y_hi)
    for a, b in zip(sys.roi.A, sys.roi.b):
        bld.le(list(zip(X, a)), b)
    # x outside int(B)
    B = sys.excluded
    bsel = []
    for i in range(n):
        sp = bld.var(f"b_sel[{2 * i}]", 0, 1, True)
        sm = bld.var(f"b_sel[{2 * i + 1}]", 0, 1, True)
        bsel += [sp, sm]
        M = B.hi[i] - x_lo[i]
        bld.le([(X[i], -1.0), (sp, M)], -B.hi[i] + M)  # x_i >= hi_i - M(1 - sp)
        M = x_hi[i] - B.lo[i]
        bld.le([(X[i], 1.0), (sm, M)], B.lo[i] + M)  # x_i <= lo_i + M(1 - sm)
    bld.le([(s, -1.0) for s in bsel], -1.0)
    index = {"x": X, "w": W, "y": Y, "b_sel": np.array(bsel)}
    # disturbance set
    pieces = sys.error_bound.pieces
    if any(g > 0 for g, _ in pieces):
        smax = float(max(np.abs(x_lo).max(), np.abs(x_hi).max()))
        S = bld.var("s", 0.0, smax)
        nsel = []
        M = 2 * smax
        for i in range(n):
            for sgn in (1.0, -1.0):
                mu = bld.var(f"norm_sel[{len(nsel)}]", 0, 1, True)
                nsel.append(mu)
                bld.le([(X[i], sgn), (S, -1.0)], 0.0)  # s >= sgn x_i
                bld.le([(S, 1.0), (X[i], -sgn), (mu, M)], M)  # s <= sgn x_i + M(1 - mu)
        bld.eq([(mu, 1.0) for mu in nsel], 1.0)
        index["s"] = S
        index["norm_sel"] = np.array(nsel)
        for g, d in pieces:
            for j in range(n):
                bld.le([(W[j], 1.0), (S, -g)], d)
                bld.le([(W[j], -1.0), (S, -g)], d)
    else:
        dmin = min(d for _, d in pieces)
        for j in range(n):
            bld.le([(W[j], 1.0)], dmin)
            bld.le([(W[j], -1.0)], dmin)
    # network copies
    A = np.asarray(sys.A)
    copies = []
    chain_in = {(0, 0): X, (1, 0): Y}
    order = [(c, i) for c, i, *_ in bounds]
    for chain, cp in order:
        ilo, ihi, ab = by_key[(chain, cp)]
        h = chain_in[(chain, cp)]
        status = neuron_status(ab)
        posts, bins = [], []
        for layer, (Wl, bl) in enumerate(zip(sys.net.weights[:-1], sys.net.biases[:-1])):
            m = Wl.shape[0]
            lo_l, hi_l = ab.lower[layer], ab.upper[layer]
            z = bld.vec(f"z{chain}.{cp}.{layer}", np.zeros(m), np.maximum(hi_l, 0.0))
            bcols = -np.ones(m, dtype=int)
            for i in range(m):
                pre = [(int(col), float(Wl[i, j])) for j, col in enumerate(h)]
                st = status[layer][i]
                if st == NeuronStatus.ACTIVE:
                    bld.eq([(z[i], 1.0)] + [(c, -a) for c, a in pre], bl[i])
                elif st == NeuronStatus.INACTIVE:
                    bld.eq([(z[i], 1.0)], 0.0)
                else:
                    t = bld.var(f"t{chain}.{cp}.{layer}[{i}]", 0, 1, True)
                    bcols[i] = t
                    l, u = lo_l[i], hi_l[i]
                    bld.le([(c, a) for c, a in pre] + [(z[i], -1.0)], -bl[i])  # z >= pre
                    bld.le([(z[i], 1.0)] + [(c, -a) for c, a in pre] + [(t, -l)], bl[i] - l)  # z <= pre - l(1-t)
                    bld.le([(z[i], 1.0), (t, -u)], 0.0)  # z <= u t
            posts.append(z)
            bins.append(bcols)
            h = z
        Wl, bl = sys.net.weights[-1], sys.net.biases[-1]
        olo, ohi = _box_image(sys, ilo, ihi, ab)
        out = bld.vec(f"iter{chain}.{cp + 1}", olo, ohi)
        src = chain_in[(chain, cp)]
        for i in range(n):
            terms = [(out[i], 1.0)]
            terms += [(int(c), -float(A[i, j])) for j, c in enumerate(src)]
            terms += [(int(c), -float(Wl[i, j])) for j, c in enumerate(h)]
            bld.eq(terms, bl[i])
        chain_in[(chain, cp + 1)] = out
        copies.append({
            "chain": chain, "copy": cp, "post": posts, "binary": bins, "out": out,
            "status": status, "status_flat": np.concatenate([np.asarray(s) for s in status]), "bounds": ab,
        })
    # y = x_1 + w
    x1 = chain_in[(0, 1)]
    for i in range(n):
        bld.eq([(Y[i], 1.0), (x1[i], -1.0), (W[i], -1.0)], 0.0)
    A_ub, b_ub = bld.dense(bld.ub_rows)
    A_eq, b_eq = bld.dense(bld.eq_rows)
    enc = MilEncoding(
        len(bld.names), bld.names, np.array(bld.lb), np.array(bld.ub), np.array(bld.integer, dtype=bool),
        A_ub, b_ub, A_eq, b_eq, index, copies, np.asarray(cand.P), k,
        [chain_in[(0, j)] for j in range(k + 1)], [chain_in[(1, j)] for j in range(k + 1)], B,
    )
    return enc


def _y_box(sys, x_entry, om):
    ilo, ihi, ab = x_entry
    lo, hi = _box_image(sys, ilo, ihi, ab)
    return lo - om, hi + om
