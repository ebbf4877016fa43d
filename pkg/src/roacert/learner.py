"""Analytic-center learner over the localization set of Lyapunov parameters.

The localization set is ``{P : eps I < P < (1 - eps) I, <P, C_i> < 0}``.
Its analytic center minimizes::

    -sum_i log(-<P, C_i>) - log det(P - eps I) - log det((1 - eps) I - P)

Newton's method runs in the orthonormal coordinates of symmetric matrices
(``svec``). A barrier phase-I finds a strictly feasible start or proves
emptiness with a nonnegative combination of the cuts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np

logger = logging.getLogger(__name__)


class LearnerStatus(str, Enum):
    CANDIDATE = "CANDIDATE"
    INFEASIBLE = "INFEASIBLE"
    FEASIBILITY_UNKNOWN = "FEASIBILITY_UNKNOWN"


@dataclass
class LearnerConfig:
    tol: float = 1e-9  # gradient norm at the analytic center
    max_newton: int = 200
    phase1_max_outer: int = 30
    phase1_max_newton: int = 80
    eps_int: float = 1e-6
    armijo: float = 0.25
    backtrack: float = 0.5

    def __post_init__(self):
        if not (0 < self.eps_int < 0.5):
            raise ValueError("eps_int must lie in (0, 0.5)")
        for name in ("tol", "max_newton", "phase1_max_outer", "phase1_max_newton", "armijo", "backtrack"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class LearnerOutcome:
    status: LearnerStatus
    P: np.ndarray | None = None
    newton_steps: int = 0
    phase1_steps: int = 0
    grad_norm: float = float("nan")
    certificate: np.ndarray | None = None  # cut weights proving emptiness
    diagnostics: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def is_candidate(self) -> bool:
        return self.status == LearnerStatus.CANDIDATE


@lru_cache(maxsize=None)
def svec_basis(d: int) -> np.ndarray:
    """Orthonormal basis ``(m, d, d)`` of symmetric matrices, ``m = d(d+1)/2``."""
    mats = []
    for i in range(d):
        for j in range(i, d):
            E = np.zeros((d, d))
            if i == j:
                E[i, i] = 1.0
            else:
                E[i, j] = E[j, i] = 1.0 / np.sqrt(2.0)
            mats.append(E)
    out = np.array(mats)
    out.setflags(write=False)
    return out


def svec(S: np.ndarray) -> np.ndarray:
    E = svec_basis(S.shape[0])
    return np.einsum("aij,ij->a", E, S)


def smat(p: np.ndarray, d: int) -> np.ndarray:
    return np.einsum("a,aij->ij", p, svec_basis(d))


def _inv_chol(S):
    L = np.linalg.cholesky(S)
    Li = np.linalg.inv(L)
    return Li.T @ Li, 2.0 * np.sum(np.log(np.diag(L)))


def _logdet_hessian(Sinv, E):
    m = E.shape[0]
    T = np.einsum("ij,ajk,kl->ail", Sinv, E, Sinv)
    return T.reshape(m, -1) @ E.reshape(m, -1).T


def certify_empty(cuts, weights, eps: float) -> float:
    """Lower bound of ``<sum_i weights_i C_i, P>`` over the spectral band.

    A positive value proves that no ``P`` in the band satisfies every cut.
    """
    M = sum(w * C for w, C in zip(weights, cuts))
    mu = np.linalg.eigvalsh(0.5 * (M + M.T))
    return float(eps * mu[mu > 0].sum() + (1 - eps) * mu[mu < 0].sum())


class _Barrier:
    def __init__(self, cvecs: np.ndarray, d: int, eps: float):
        self.c = cvecs  # (m, dim)
        self.d = d
        self.eps = eps
        self.E = svec_basis(d)
        self.I = np.eye(d)

    def inside(self, p) -> bool:
        if self.c.shape[0] and np.any(self.c @ p >= 0):
            return False
        P = smat(p, self.d)
        try:
            np.linalg.cholesky(P - self.eps * self.I)
            np.linalg.cholesky((1 - self.eps) * self.I - P)
        except np.linalg.LinAlgError:
            return False
        return True

    def value(self, p) -> float:
        P = smat(p, self.d)
        s = -(self.c @ p)
        _, ld1 = _inv_chol(P - self.eps * self.I)
        _, ld2 = _inv_chol((1 - self.eps) * self.I - P)
        return float(-np.sum(np.log(s)) - ld1 - ld2)

    def derivatives(self, p):
        P = smat(p, self.d)
        s = -(self.c @ p)
        S1i, ld1 = _inv_chol(P - self.eps * self.I)
        S2i, ld2 = _inv_chol((1 - self.eps) * self.I - P)
        f = float(-np.sum(np.log(s)) - ld1 - ld2)
        g = (self.c / s[:, None]).sum(axis=0) - svec(S1i) + svec(S2i)
        H = (self.c / s[:, None]).T @ (self.c / s[:, None])
        H = H + _logdet_hessian(S1i, self.E) + _logdet_hessian(S2i, self.E)
        return f, g, H


def _newton_direction(g, H):
    try:
        L = np.linalg.cholesky(H)
        y = np.linalg.solve(L, -g)
        return np.linalg.solve(L.T, y), False
    except np.linalg.LinAlgError:
        return -g, True


def _normalize(cuts) -> tuple[np.ndarray, list]:
    vecs, mats = [], []
    for C in cuts:
        C = 0.5 * (np.asarray(C, dtype=float) + np.asarray(C, dtype=float).T)
        v = svec(C)
        nv = np.linalg.norm(v)
        vecs.append(v / nv if nv > 0 else v)
        mats.append(C / nv if nv > 0 else C)
    return np.array(vecs), mats


def phase_one(cuts, d: int, config: LearnerConfig | None = None, start: np.ndarray | None = None):
    """Find a strictly feasible ``P`` or decide emptiness.

    Returns ``(status, P or None, steps, certificate weights or None)`` with
    status ``CANDIDATE`` meaning a strictly feasible point was found.
    """
    config = config or LearnerConfig()
    eps = config.eps_int
    cvecs, mats = _normalize(cuts)
    m = len(mats)
    if m == 0:
        return LearnerStatus.CANDIDATE, 0.5 * np.eye(d), 0, None
    # zero or positive semidefinite cuts cannot be satisfied by any P > 0
    for i, C in enumerate(mats):
        w = np.zeros(m)
        w[i] = 1.0
        if not np.any(C):
            return LearnerStatus.INFEASIBLE, None, 0, w
        if certify_empty([C], [1.0], eps) > 0:
            return LearnerStatus.INFEASIBLE, None, 0, w

    E = svec_basis(d)
    I = np.eye(d)
    p = svec(0.5 * np.eye(d) if start is None else 0.5 * (start + start.T))
    bar = _Barrier(np.zeros((0, p.size)), d, eps)
    if not bar.inside(p):
        p = svec(0.5 * np.eye(d))
    if np.all(cvecs @ p < 0):
        return LearnerStatus.CANDIDATE, smat(p, d), 0, None
    sigma = float(np.max(cvecs @ p)) + 1.0
    nu = m + 2 * d
    t = 1.0
    steps = 0

    def inside(p, sigma):
        if np.any(sigma - cvecs @ p <= 0):
            return False
        return bar.inside(p)

    def derivs(p, sigma, t):
        P = smat(p, d)
        gi = sigma - cvecs @ p
        S1i, ld1 = _inv_chol(P - eps * I)
        S2i, ld2 = _inv_chol((1 - eps) * I - P)
        f = t * sigma - np.sum(np.log(gi)) - ld1 - ld2
        a = np.hstack([-cvecs, np.ones((m, 1))]) / gi[:, None]
        g = -a.sum(axis=0)
        g[-1] += t
        g[:-1] += -svec(S1i) + svec(S2i)
        H = a.T @ a
        H[:-1, :-1] += _logdet_hessian(S1i, E) + _logdet_hessian(S2i, E)
        return f, g, H, gi

    for outer in range(config.phase1_max_outer):
        for _ in range(config.phase1_max_newton):
            f, g, H, gi = derivs(p, sigma, t)
            dx, _ = _newton_direction(g, H)
            lam2 = -g @ dx
            if lam2 / 2 <= 1e-10:
                break
            step = 1.0
            while step > 1e-12:
                pn, sn = p + step * dx[:-1], sigma + step * dx[-1]
                if inside(pn, sn) and derivs(pn, sn, t)[0] <= f + config.armijo * step * (g @ dx):
                    break
                step *= config.backtrack
            else:
                break
            p, sigma = pn, sn
            steps += 1
            if sigma < 0:
                return LearnerStatus.CANDIDATE, smat(p, d), steps, None
        gi = sigma - cvecs @ p
        weights = 1.0 / (t * gi)
        weights = weights / weights.sum()
        if certify_empty(mats, weights, eps) > 1e-12:
            return LearnerStatus.INFEASIBLE, None, steps, weights
        if nu / t < 1e-12:
            break
        t *= 10.0
    return LearnerStatus.FEASIBILITY_UNKNOWN, None, steps, None


def analytic_center(cuts, d: int, config: LearnerConfig | None = None, warm_start: np.ndarray | None = None) -> LearnerOutcome:
    """Analytic center of the localization set defined by ``cuts`` (``d x d`` matrices)."""
    config = config or LearnerConfig()
    cuts = [np.asarray(C, dtype=float) for C in cuts]
    for C in cuts:
        if C.shape != (d, d):
            raise ValueError(f"cut of shape {C.shape} does not match dimension {d}")
    status, P0, p1_steps, cert = phase_one(cuts, d, config, start=warm_start)
    if status != LearnerStatus.CANDIDATE:
        return LearnerOutcome(status, None, 0, p1_steps, certificate=cert)
    cvecs, _ = _normalize(cuts)
    bar = _Barrier(cvecs if len(cuts) else np.zeros((0, d * (d + 1) // 2)), d, config.eps_int)
    p = svec(P0)
    diags, notes = [], []
    gnorm = float("inf")
    steps = 0
    for it in range(config.max_newton):
        f, g, H = bar.derivatives(p)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= config.tol:
            break
        dx, fallback = _newton_direction(g, H)
        if fallback:
            notes.append(f"step {it}: singular Hessian, gradient step")
        step = 1.0
        while step > 1e-14:
            pn = p + step * dx
            if bar.inside(pn) and bar.value(pn) <= f + config.armijo * step * (g @ dx):
                break
            step *= config.backtrack
        else:
            notes.append(f"step {it}: line search stalled")
            break
        p = pn
        steps += 1
        diags.append({"step": it, "objective": f, "grad_norm": gnorm, "damping": step})
        logger.debug("newton %d  obj %.12g  |g| %.3e  t %.3g", it, f, gnorm, step)
    P = smat(p, d)
    P = 0.5 * (P + P.T)
    return LearnerOutcome(LearnerStatus.CANDIDATE, P, steps, p1_steps, gnorm, None, diags, notes)
