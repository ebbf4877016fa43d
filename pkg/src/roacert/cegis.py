"""Counterexample-guided synthesis of robust Lyapunov functions.

The learner proposes the analytic center of the cuts collected so far; the
verifier either certifies it or returns a pair ``(x*, w*)`` whose cut removes
the candidate. The loop ends with a certificate, a proof that no candidate
exists, or an exhausted budget.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

import numpy as np

from .dynamics import UncertainSystem
from .learner import LearnerConfig, LearnerStatus, analytic_center
from .lyapunov import LyapCandidate, SampleSet, cut_matrix
from .roa import LevelSetIndeterminate, estimate
from .verifier import VerifierConfig, VerifierStatus, max_dV

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class CegisStatus(str, Enum):
    CERTIFIED = "CERTIFIED"
    INFEASIBLE = "INFEASIBLE"
    FEASIBILITY_UNKNOWN = "FEASIBILITY_UNKNOWN"
    BUDGET_EXCEEDED = "BUDGET_EXCEEDED"


class DigestMismatchError(ValueError):
    pass


@dataclass
class CegisConfig:
    k: int = 1
    max_iter: int = 100
    initial_samples: tuple = ()  # (x, w) pairs
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    verifier: VerifierConfig = field(default_factory=VerifierConfig)
    seed: int = 0
    compute_levels: bool = True

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.k < 0:
            raise ValueError("k must be nonnegative")


def _num(v):
    """JSON-safe float: infinities become null."""
    v = float(v)
    return v if math.isfinite(v) else None


@dataclass
class IterationRecord:
    iteration: int
    n_samples: int
    outcome: str
    ub: float
    incumbent: float
    newton_steps: int
    nodes: int
    x: list | None = None
    w: list | None = None

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "n_samples": self.n_samples,
            "outcome": self.outcome,
            "ub": _num(self.ub),
            "incumbent": _num(self.incumbent),
            "newton_steps": self.newton_steps,
            "nodes": self.nodes,
            "x": self.x,
            "w": self.w,
        }

    @classmethod
    def from_dict(cls, d) -> "IterationRecord":
        nan = float("nan")
        return cls(d["iteration"], d["n_samples"], d["outcome"],
                   nan if d["ub"] is None else d["ub"], nan if d["incumbent"] is None else d["incumbent"],
                   d["newton_steps"], d["nodes"], d.get("x"), d.get("w"))

    def log_line(self) -> str:
        return (f"iter {self.iteration:3d}  |S| {self.n_samples:3d}  {self.outcome:<14s}  "
                f"ub {self.ub:+.6e}  incumbent {self.incumbent:+.6e}  newton {self.newton_steps}")


def system_digests(sys: UncertainSystem) -> dict:
    bound = hashlib.sha256(json.dumps(sys.error_bound.to_dict(), sort_keys=True).encode()).hexdigest()
    return {
        "system": sys.digest(),
        "network": sys.net.digest(),
        "error_bound": bound,
        "roi": sys.roi.digest(),
    }


@dataclass
class Certificate:
    cand: LyapCandidate
    digests: dict
    ub: float
    c_max: float | None
    c_min: float | None
    provenance: str
    iterations: int
    history: list
    eps_margin: float
    warnings: list = field(default_factory=list)
    created: str = ""

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "k": self.cand.k,
            "P": self.cand.P.tolist(),
            "digests": dict(self.digests),
            "ub": self.ub,
            "eps_margin": self.eps_margin,
            "c_max": self.c_max,
            "c_min": self.c_min,
            "error_bound_provenance": self.provenance,
            "iterations": self.iterations,
            "history": [h.to_dict() for h in self.history],
            "warnings": list(self.warnings),
            "created": self.created,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, d) -> "Certificate":
        return cls(LyapCandidate(int(d["k"]), np.array(d["P"], dtype=float)), dict(d["digests"]), float(d["ub"]),
                   d["c_max"], d["c_min"], d["error_bound_provenance"], int(d["iterations"]),
                   [IterationRecord.from_dict(h) for h in d["history"]], float(d["eps_margin"]),
                   list(d.get("warnings", [])), d.get("created", ""))

    @classmethod
    def load(cls, path) -> "Certificate":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class CegisResult:
    status: CegisStatus
    certificate: Certificate | None
    history: list
    samples: SampleSet
    candidates: list = field(default_factory=list)  # P proposed at each iteration
    learner_certificate: np.ndarray | None = None  # cut weights when INFEASIBLE
    diagnostics: list = field(default_factory=list)
    wall_time: float = 0.0


def _seeds(seed: int, count: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


def run(sys: UncertainSystem, config: CegisConfig | None = None) -> CegisResult:
    config = config or CegisConfig()
    k = config.k
    d = (k + 1) * sys.dim
    samples = SampleSet()
    for x, w in config.initial_samples:
        samples.add(cut_matrix(sys, k, x, w))
    seeds = _seeds(config.seed, config.max_iter)
    history, candidates = [], []
    t0 = time.perf_counter()

    def done(status, cert=None, diag=None, weights=None):
        res = CegisResult(status, cert, history, samples, candidates, weights, diag or [], time.perf_counter() - t0)
        logger.info("CEGIS finished: %s after %d iterations", status.value, len(history))
        return res

    for it in range(config.max_iter):
        learned = analytic_center(samples.matrices(), d, config.learner)
        if learned.status == LearnerStatus.INFEASIBLE:
            return done(CegisStatus.INFEASIBLE, weights=learned.certificate,
                        diag=[f"localization set empty after {len(samples)} cuts"])
        if learned.status == LearnerStatus.FEASIBILITY_UNKNOWN:
            return done(CegisStatus.FEASIBILITY_UNKNOWN, diag=[f"phase-I inconclusive after {len(samples)} cuts"])
        cand = LyapCandidate(k, learned.P)
        candidates.append(cand.P)
        vcfg = VerifierConfig(**{**config.verifier.__dict__, "seed": seeds[it]})
        out = max_dV(sys, cand, vcfg)
        rec = IterationRecord(it + 1, len(samples), out.status.value, out.ub, out.value, learned.newton_steps, out.nodes,
                              None if out.x is None else out.x.tolist(), None if out.w is None else out.w.tolist())
        history.append(rec)
        logger.info(rec.log_line())
        if out.status == VerifierStatus.CERTIFIED:
            return done(CegisStatus.CERTIFIED, _certify(sys, cand, out.ub, config, history))
        if out.status != VerifierStatus.COUNTEREXAMPLE:
            return done(CegisStatus.BUDGET_EXCEEDED,
                        diag=[f"verifier {out.status.value} after {out.nodes} nodes (ub {out.ub:.6g})"])
        if samples.contains_pair(out.x, out.w):
            raise RuntimeError("counterexample repeated; the learner returned a point outside the localization set")
        cut = cut_matrix(sys, k, out.x, out.w)
        # the new cut must remove the candidate it was generated against
        assert cut.value(cand.P) >= -1e-12 * max(1.0, float(np.abs(cut.C).max())), "cut does not separate"
        samples.add(cut)
    return done(CegisStatus.BUDGET_EXCEEDED, diag=[f"iteration cap {config.max_iter} reached"])


def _certify(sys, cand, ub, config, history) -> Certificate:
    c_max = c_min = None
    warnings = []
    if config.compute_levels:
        try:
            est = estimate(sys, cand, config.verifier)
            c_max, c_min = est.c_max, est.c_min
            if est.degenerate:
                warnings.append("c_min >= c_max: the certified region statement is empty")
        except LevelSetIndeterminate as exc:
            warnings.append(f"level sets not computed: {exc}")
    return Certificate(cand, system_digests(sys), float(ub), c_max, c_min, sys.error_bound.provenance.value,
                       len(history), list(history), config.verifier.eps_margin, warnings,
                       datetime.now(timezone.utc).isoformat(timespec="seconds"))


def replay(cert: Certificate, sys: UncertainSystem, config: VerifierConfig | None = None, tol: float = 1e-6) -> bool:
    """Re-verify a stored certificate against ``sys``.

    Raises ``DigestMismatchError`` when the certificate was issued for a
    different system.
    """
    got = system_digests(sys)
    bad = [key for key, val in cert.digests.items() if got.get(key) != val]
    if bad:
        raise DigestMismatchError(f"digest mismatch for {', '.join(sorted(bad))}")
    config = config or VerifierConfig(eps_margin=cert.eps_margin)
    out = max_dV(sys, cert.cand, config)
    if out.status != VerifierStatus.CERTIFIED:
        logger.info("replay: verifier returned %s", out.status.value)
        return False
    if cert.c_max is None or cert.c_min is None:
        return True
    try:
        est = estimate(sys, cert.cand, config)
    except LevelSetIndeterminate:
        return False
    return abs(est.c_max - cert.c_max) <= tol and abs(est.c_min - cert.c_min) <= tol
