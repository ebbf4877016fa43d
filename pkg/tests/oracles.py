"""Independent reference computations used by the test-suite.

Nothing here calls the verifier or its relaxations. The exact maximizer
enumerates every activation pattern of every network copy and, per pattern,
every face of the pattern polytope.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linprog


def layer_by_layer(layers, x):
    """Plain loop evaluator of a ReLU network given as [(W, b), ...]."""
    h = [float(v) for v in x]
    for idx, (W, b) in enumerate(layers):
        out = []
        for i in range(len(b)):
            s = b[i]
            for j in range(len(h)):
                s += W[i][j] * h[j]
            out.append(max(s, 0.0) if idx < len(layers) - 1 else s)
        h = out
    return np.array(h)


def _affine_chain(layers, A, M, c, pattern):
    """Affine form of ``A h + net(h)`` for ``h = M v + c`` under a fixed pattern.

    Returns (M_out, c_out, rows, rhs) with pattern constraints ``rows v <= rhs``.
    """
    rows, rhs = [], []
    hM, hc = M, c
    for li, (W, b) in enumerate(layers[:-1]):
        pM, pc = W @ hM, W @ hc + b
        on = pattern[li]
        for i in range(len(b)):
            if on[i]:  # pre >= 0
                rows.append(-pM[i])
                rhs.append(pc[i])
            else:
                rows.append(pM[i])
                rhs.append(-pc[i])
        hM = pM * on[:, None]
        hc = pc * on
    W, b = layers[-1]
    return A @ M + W @ hM, A @ c + W @ hc + b, rows, rhs


def _max_quadratic_on_polytope(H, g, c0, G, h, tol=1e-9):
    """Max of ``v'Hv + g'v + c0`` over ``{G v <= h}`` by face enumeration."""
    dim = H.shape[0]
    m = G.shape[0]
    best, arg = -np.inf, None
    for r in range(0, min(dim, m) + 1):
        for S in itertools.combinations(range(m), r):
            S = list(S)
            # stationarity on {G_S v = h_S}: 2 H v + g = G_S' lam
            K = np.zeros((dim + r, dim + r))
            K[:dim, :dim] = 2 * H
            K[:dim, dim:] = -G[S].T
            K[dim:, :dim] = G[S]
            rhs = np.concatenate([-g, h[S]])
            if np.linalg.cond(K) > 1e10:
                continue  # covered by a lower-dimensional face
            sol = np.linalg.solve(K, rhs)
            v = sol[:dim]
            if np.all(G @ v <= h + tol * (1 + np.abs(h))):
                val = v @ H @ v + g @ v + c0
                if val > best:
                    best, arg = val, v
    return best, arg


def exact_max_dV(layers, A, P, k, slabs, delta):
    """Exact ``max dV`` over ``x`` in the union of ``slabs`` and ``|w|_inf <= delta``.

    ``layers`` is the network as [(W, b), ...]; the disturbance bound is the
    constant ``delta``. Every activation pattern of the ``max(k, 1)`` x-chain
    copies and ``k`` y-chain copies is enumerated.
    """
    n = A.shape[0]
    hidden = [len(b) for _, b in layers[:-1]]
    per_copy = sum(hidden)
    copies = max(k, 1) + k
    use_w = delta > 0
    dim = 2 * n if use_w else n
    best, arg = -np.inf, None
    for bits in itertools.product((0, 1), repeat=per_copy * copies):
        bits = np.array(bits, dtype=float)
        pats = []
        for cp in range(copies):
            chunk = bits[cp * per_copy:(cp + 1) * per_copy]
            pats.append(np.split(chunk, np.cumsum(hidden)[:-1]))
        rows, rhs = [], []
        Mx = np.zeros((n, dim))
        Mx[:, :n] = np.eye(n)
        cx = np.zeros(n)
        zx = [(Mx, cx)]
        cur = (Mx, cx)
        for cp in range(max(k, 1)):
            M2, c2, r2, s2 = _affine_chain(layers, A, cur[0], cur[1], pats[cp])
            rows += r2
            rhs += s2
            cur = (M2, c2)
            zx.append(cur)
        My, cy = zx[1][0].copy(), zx[1][1].copy()
        if use_w:
            My[:, n:] += np.eye(n)
        zy = [(My, cy)]
        cur = (My, cy)
        for cp in range(k):
            M2, c2, r2, s2 = _affine_chain(layers, A, cur[0], cur[1], pats[max(k, 1) + cp])
            rows += r2
            rhs += s2
            cur = (M2, c2)
            zy.append(cur)
        Zx = np.vstack([m for m, _ in zx[:k + 1]])
        zx0 = np.concatenate([c for _, c in zx[:k + 1]])
        Zy = np.vstack([m for m, _ in zy[:k + 1]])
        zy0 = np.concatenate([c for _, c in zy[:k + 1]])
        H = Zy.T @ P @ Zy - Zx.T @ P @ Zx
        g = 2 * (Zy.T @ P @ zy0 - Zx.T @ P @ zx0)
        c0 = zy0 @ P @ zy0 - zx0 @ P @ zx0
        H = 0.5 * (H + H.T)
        for lo, hi in slabs:
            G = list(rows)
            h = list(rhs)
            for i in range(n):
                e = np.zeros(dim)
                e[i] = 1
                G += [e, -e]
                h += [hi[i], -lo[i]]
            if use_w:
                for i in range(n):
                    e = np.zeros(dim)
                    e[n + i] = 1
                    G += [e, -e]
                    h += [delta, delta]
            G, h = np.array(G), np.array(h)
            feas = linprog(np.zeros(dim), A_ub=G, b_ub=h, bounds=[(None, None)] * dim, method="highs")
            if feas.status != 0:
                continue
            val, v = _max_quadratic_on_polytope(H, g, c0, G, h)
            if val > best:
                best, arg = val, v
    return best, arg


def grid_max_dV(dV, lo, hi, excluded_lo, excluded_hi, delta, n_grid=200, n_w=3):
    """Dense-grid maximum of ``dV(X, W)`` over a box minus an open box."""
    u = np.linspace(lo[0], hi[0], n_grid)
    v = np.linspace(lo[1], hi[1], n_grid)
    X = np.array(np.meshgrid(u, v, indexing="ij")).reshape(2, -1).T
    keep = ~np.all((X > excluded_lo) & (X < excluded_hi), axis=1)
    X = X[keep]
    ws = np.linspace(-delta, delta, n_w) if delta > 0 else np.zeros(1)
    best = -np.inf
    for a in ws:
        for b in ws:
            W = np.tile([a, b], (len(X), 1))
            best = max(best, float(np.max(dV(X, W))))
    return best


def brute_force_max(f, points):
    vals = f(points)
    i = int(np.argmax(vals))
    return float(vals[i]), points[i]


def tiny_instance(seed):
    """Seeded 2-D verifier instance with at most 3 hidden neurons and k <= 1.

    Returns ``(system, layers, candidate, delta)``.
    """
    from scipy.linalg import solve_discrete_lyapunov

    from roacert.dynamics import UncertainSystem
    from roacert.error_model import ErrorBound
    from roacert.geometry import Box
    from roacert.lyapunov import LyapCandidate
    from roacert.relu_net import ReluNetwork

    rng = np.random.default_rng(seed)
    k = seed % 2
    h = 2 if k else 3
    layers = [(rng.normal(size=(h, 2)) * 0.6, rng.normal(size=h) * 0.2), (rng.normal(size=(2, h)) * 0.3, np.zeros(2))]
    th, rho = rng.uniform(0, np.pi), rng.uniform(0.4, 0.95)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    A = rho * rot * np.array([[1, 0], [0, rng.uniform(0.6, 1)]])
    delta = [0.0, 0.01, 0.03][seed % 3]
    d = 2 * (k + 1)
    if seed % 4 < 2:
        R = rng.normal(size=(d, d))
        P = R @ R.T + 0.3 * np.eye(d)
        P /= np.abs(P).max()
    else:
        P = solve_discrete_lyapunov(np.kron(np.eye(k + 1), A).T, np.eye(d))
        P /= np.linalg.eigvalsh(P).max()
    sys = UncertainSystem(A, ReluNetwork.from_layers(layers), ErrorBound(((0.0, delta),)),
                          Box.cube(1, 2).as_polytope(), Box.cube(0.2, 2))
    return sys, layers, LyapCandidate(k, P), delta


def complement_slabs(sys):
    from roacert.verifier import complement_roots

    return [(r.lo[:sys.dim], r.hi[:sys.dim]) for r in complement_roots(sys.roi, sys.excluded, None)]
