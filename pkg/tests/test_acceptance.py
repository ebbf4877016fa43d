"""Acceptance suite: one test per criterion, each recording a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v``; the summary lines appear at
the end of the terminal report. The full-pipeline criteria (1, 2, 10) train
networks from scratch and take several minutes.
"""

import itertools
import json
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record
from oracles import complement_slabs, exact_max_dV, grid_max_dV, tiny_instance
from roacert.cegis import CegisConfig, CegisStatus, Certificate, run
from roacert.cli import EXIT_OK, main
from roacert.dynamics import UncertainSystem, get_benchmark, jacobian_at_origin
from roacert.error_model import ErrorBound, Provenance, admissible_delta, concave_bound, inflate, residuals
from roacert.geometry import Box, Polytope, grid_eps_net
from roacert.learner import LearnerStatus, analytic_center
from roacert.lyapunov import LyapCandidate, cut_matrix, eval_dV
from roacert.relu_net import NeuronStatus, ReluNetwork, interval_bounds, load, neuron_status
from roacert.roa import RoaEstimate, validate_by_simulation
from roacert.shipped import example_certificate, example_system
from roacert.verifier import VerifierConfig, VerifierStatus, max_dV
from roacert.verifier.encoding import encode

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _pipeline(config, out, seed=None):
    argv = ["pipeline", "--config", str(config), "--out", str(out)]
    if seed is not None:
        argv += ["--seed", str(seed)]
    t0 = time.perf_counter()
    code = main(argv)
    return code, time.perf_counter() - t0


def _system_from(out, excluded):
    A = np.array(json.loads((out / "system.json").read_text())["A"])
    return UncertainSystem(A, load(out / "network.json"), ErrorBound.load(out / "error_bound.json"),
                           Polytope.load(out / "roi.json"), excluded)


@pytest.fixture(scope="module")
def run2d(tmp_path_factory):
    out = tmp_path_factory.mktemp("rational2d_a")
    code, wall = _pipeline(CONFIGS / "rational2d.toml", out)
    return out, code, wall


@pytest.fixture(scope="module")
def run3d(tmp_path_factory):
    out = tmp_path_factory.mktemp("poly3d")
    code, wall = _pipeline(CONFIGS / "poly3d.toml", out)
    return out, code, wall


# 1 --------------------------------------------------------------------------
def test_criterion_1_rational2d_pipeline(run2d):
    from roacert import config as cfgmod

    out, code, wall = run2d
    cfg = cfgmod.load(CONFIGS / "rational2d.toml")
    checks = {}
    checks["exit 0"] = code == EXIT_OK
    A = np.array(json.loads((out / "system.json").read_text())["A"])
    checks["A = diag(0, 0.75)"] = np.max(np.abs(A - np.diag([0.0, 0.75]))) <= 1e-6
    A_fd = jacobian_at_origin(get_benchmark("rational2d"), 2)
    checks["finite-difference A"] = np.max(np.abs(A_fd - np.diag([0.0, 0.75]))) <= 1e-6
    net = load(out / "network.json")
    checks["2-16-16-2"] = [net.input_dim, *net.hidden_sizes, net.output_dim] == [2, 16, 16, 2]
    checks["setup"] = (cfg.roi.tau == 0.9 and cfg.synthesize.k == 1 and len(cfg.error.gammas) == 3
                       and cfg.synthesize.excluded_lo == [-0.05, -0.2] and cfg.synthesize.excluded_hi == [0.05, 0.2])
    cert = Certificate.load(out / "certificate.json") if (out / "certificate.json").is_file() else None
    checks["certificate"] = cert is not None
    checks["<= 50 iterations"] = cert is not None and cert.iterations <= 50
    checks["<= 30 min"] = wall <= 1800
    violations = -1
    if cert is not None:
        sys = _system_from(out, Box(np.array([-0.05, -0.2]), np.array([0.05, 0.2])))
        lo, hi = sys.roi.bounding_box()
        u, v = np.linspace(lo[0], hi[0], 300), np.linspace(lo[1], hi[1], 300)
        X = np.array(np.meshgrid(u, v, indexing="ij")).reshape(2, -1).T
        X = X[sys.roi.contains(X) & ~sys.excluded.contains_interior(X)]
        r = sys.error_bound(X)[:, None]
        dirs = [np.zeros(2), np.array([1, 1]), np.array([1, -1]), np.array([-1, 1]), np.array([-1, -1])]
        worst = max(float(eval_dV(cert.cand, sys, X, r * d).max()) for d in dirs)
        violations = sum(int(np.sum(eval_dV(cert.cand, sys, X, r * d) >= 0)) for d in dirs)
        checks["grid dV < 0"] = violations == 0
    ok = all(checks.values())
    record(1, ok, f"exit {code}, {cert.iterations if cert else '-'} iterations, {wall:.0f} s, "
                  f"grid violations {violations}" + ("" if ok else f", failed: {[k for k, v in checks.items() if not v]}"))
    assert ok, checks
    assert worst < 0


# 2 --------------------------------------------------------------------------
def test_criterion_2_poly3d_pipeline(run3d):
    from roacert import config as cfgmod

    out, code, wall = run3d
    cfg = cfgmod.load(CONFIGS / "poly3d.toml")
    checks = {"exit 0": code == EXIT_OK}
    checks["setup"] = (cfg.system.dt == 0.1 and cfg.synthesize.k == 2 and cfg.error.gammas == [0.0]
                       and cfg.synthesize.excluded_hi == [0.05] * 3 and cfg.synthesize.excluded_lo == [-0.05] * 3)
    cert = Certificate.load(out / "certificate.json") if (out / "certificate.json").is_file() else None
    checks["certificate <= 50 iterations"] = cert is not None and cert.iterations <= 50
    bound = ErrorBound.load(out / "error_bound.json") if (out / "error_bound.json").is_file() else None
    checks["gamma = 0 sampled"] = bound is not None and bound.gammas.tolist() == [0.0] and \
        bound.provenance is Provenance.SAMPLED
    checks["slice plots"] = all((out / f).is_file() for f in ("roa_x1_0.svg", "roa_x3_0.svg", "roa_x1_0.csv",
                                                                "roa_x3_0.csv"))
    sim = json.loads((out / "simulation.json").read_text()) if (out / "simulation.json").is_file() else {}
    checks["500/500 trajectories"] = sim.get("n_trajectories") == 500 and sim.get("converged") == 500 and \
        sim.get("decrease_violations") == 0
    ok = all(checks.values())
    record(2, ok, f"exit {code}, {cert.iterations if cert else '-'} iterations, {wall:.0f} s, "
                  f"simulation {sim.get('converged', '-')}/{sim.get('n_trajectories', '-')}"
                  + ("" if ok else f", failed: {[k for k, v in checks.items() if not v]}"))
    assert ok, checks


# 3 --------------------------------------------------------------------------
def test_criterion_3_verifier_oracle():
    rows, ok = [], True
    for seed in range(20):
        sys, layers, cand, delta = tiny_instance(seed)
        status = neuron_status(interval_bounds(sys.net, -np.ones(2), np.ones(2)))
        unstable = sum(int(np.sum(s == NeuronStatus.UNSTABLE)) for s in status)
        exact, _ = exact_max_dV(layers, sys.A, cand.P, cand.k, complement_slabs(sys), delta)
        grid = grid_max_dV(lambda X, W: eval_dV(cand, sys, X, W), [-1, -1], [1, 1], sys.excluded.lo,
                           sys.excluded.hi, delta, n_grid=200, n_w=3)
        t0 = time.perf_counter()
        opt = max_dV(sys, cand, VerifierConfig(mode="optimize", gap_abs=1e-6, gap_rel=1e-6))
        dec = max_dV(sys, cand)
        elapsed = time.perf_counter() - t0
        want = VerifierStatus.CERTIFIED if exact < 0 else VerifierStatus.COUNTEREXAMPLE
        good = (unstable <= 5 and dec.status == want and abs(opt.value - exact) <= 1e-4
                and opt.ub >= exact - 1e-9 and opt.ub - exact <= 1e-4 and grid <= exact + 1e-9 and elapsed < 60)
        ok &= good
        rows.append((seed, exact, opt.value, dec.status.value, elapsed, good))
    worst = max(abs(r[1] - r[2]) for r in rows)
    slowest = max(r[4] for r in rows)
    record(3, ok, f"20 instances, max |value - exact| {worst:.2e}, slowest {slowest:.1f} s"
                  + ("" if ok else f", failing seeds {[r[0] for r in rows if not r[5]]}"))
    assert ok, rows


# 4 --------------------------------------------------------------------------
def _sample_pairs(sys, n, rng):
    lo, hi = sys.roi.bounding_box()
    xs = []
    total = 0
    while total < n:
        X = rng.uniform(lo, hi, size=(2 * n, sys.dim))
        X = X[sys.roi.contains(X) & ~sys.excluded.contains_interior(X)]
        xs.append(X)
        total += len(X)
    X = np.concatenate(xs)[:n]
    r = sys.error_bound(X)[:, None]
    W = rng.uniform(-1, 1, size=X.shape) * r
    corners = rng.random(n) < 0.5  # half the draws on vertices of the disturbance ball
    W[corners] = np.sign(W[corners]) * r[corners]
    return X, W


def test_criterion_4_soundness_fuzz():
    sys, cert = example_system(), example_certificate()
    rng = np.random.default_rng(2024)
    worst = -np.inf
    for _ in range(10):
        X, W = _sample_pairs(sys, 100_000, rng)
        worst = max(worst, float(eval_dV(cert.cand, sys, X, W).max()))
    sound = worst <= cert.ub
    # counterexamples on instances that have them
    cex_ok, n_cex = True, 0
    cases = [(example_system(), LyapCandidate(1, 0.5 * np.eye(4)))]
    cases += [(s, c) for s, _, c, _ in (tiny_instance(i) for i in range(20))]
    for s, c in cases:
        out = max_dV(s, c)
        if out.status is not VerifierStatus.COUNTEREXAMPLE:
            continue
        n_cex += 1
        val = float(eval_dV(c, s, out.x, out.w))
        feasible = (s.roi.contains(out.x, tol=1e-9) and not s.excluded.contains_interior(out.x)
                    and float(np.abs(out.w).max()) <= float(s.error_bound(out.x)) + 1e-9)
        cex_ok &= val >= 0 and feasible
    ok = sound and cex_ok and n_cex > 0
    record(4, ok, f"1e6 samples, max dV {worst:.3e} <= ub {cert.ub:.3e}: {sound}; {n_cex} counterexamples re-checked")
    assert ok


# 5 --------------------------------------------------------------------------
def test_criterion_5_learner():
    checks = {}
    for d in (2, 4, 6):
        out = analytic_center([], d)
        checks[f"I/2 d={d}"] = out.is_candidate and np.max(np.abs(out.P - 0.5 * np.eye(d))) <= 1e-8
    planted_ok = True
    for seed in range(30):
        rng = np.random.default_rng(seed)
        d = (2, 4, 6)[seed % 3]
        Q = np.linalg.qr(rng.normal(size=(d, d)))[0]
        Pstar = Q @ np.diag(rng.uniform(0.1, 0.9, d)) @ Q.T
        cuts = []
        while len(cuts) < 4 * d:
            R = rng.normal(size=(d, d))
            if np.sum(Pstar * (R + R.T)) < 0:
                cuts.append(R + R.T)
        out = analytic_center(cuts, d)
        ev = np.linalg.eigvalsh(out.P) if out.is_candidate else np.array([np.nan])
        planted_ok &= bool(out.is_candidate and ev.min() > 0 and ev.max() < 1
                           and all(np.sum(out.P * C) < 0 for C in cuts))
    checks["planted families"] = planted_ok
    checks["C = I infeasible"] = all(analytic_center([np.eye(d)], d).status is LearnerStatus.INFEASIBLE
                                     for d in (2, 4, 6))
    ok = all(checks.values())
    record(5, ok, ", ".join(f"{k}: {'ok' if v else 'FAIL'}" for k, v in checks.items()))
    assert ok, checks


# 6 --------------------------------------------------------------------------
def test_criterion_6_error_bound():
    sys = example_system()
    f = get_benchmark("rational2d")
    S = grid_eps_net(sys.roi, 0.01)
    xn, wn = residuals(f, sys.A, sys.net, S)
    checks = {"gamma=0 delta = max residual": admissible_delta(xn, wn, 0.0) == float(wn.max())}
    sampled = concave_bound(xn, wn, (0.0, 0.1, 0.2))
    lf, ln, eps = 3.0, 2.5, 0.01
    infl = inflate(sampled, eps, lf, ln)
    checks["inflation adds (L_w + gamma) eps"] = all(
        d2 == d + (lf + ln + g) * eps and g2 == g for (g, d), (g2, d2) in zip(sampled.pieces, infl.pieces))
    one = concave_bound(xn, wn, (0.0,))
    checks["K=3 <= K=1 at every sample"] = bool(np.all(sampled.at_norm(xn) <= one.at_norm(xn)))
    checks["bound covers samples"] = bool(np.all(sampled.at_norm(xn) >= wn))
    ok = all(checks.values())
    record(6, ok, ", ".join(f"{k}: {'ok' if v else 'FAIL'}" for k, v in checks.items()))
    assert ok, checks


# 7 --------------------------------------------------------------------------
def test_criterion_7_trajectory_decrease():
    sys, cert = example_system(), example_certificate()
    est = RoaEstimate(sys, cert.cand, cert.c_max, cert.c_min)
    reps = [validate_by_simulation(est, n_trajectories=500, steps=100, seed=s, policy=p)
            for s, p in ((7, "corner"), (8, "uniform"))]
    checks = sum(r.decrease_checks for r in reps)
    bad = sum(r.decrease_violations for r in reps)
    ok = bad == 0 and checks > 0
    record(7, ok, f"1000 trajectories, {checks} visited (x, w) outside B, {bad} with dV >= 0, "
                  f"max dV {max(r.max_dV_outside_B for r in reps):.3e}")
    assert ok


# 8 --------------------------------------------------------------------------
def _progress(res, sys, k):
    cex = [(i, h) for i, h in enumerate(res.history) if h.outcome == "COUNTEREXAMPLE"]
    pairs = {(tuple(h.x), tuple(h.w)) for _, h in cex}
    if len(pairs) != len(cex):
        return False
    for i, h in cex:
        C = cut_matrix(sys, k, h.x, h.w, self_check=False).C
        if np.sum(res.candidates[i] * C) < -1e-12 * max(1.0, np.abs(C).max()):
            return False
        if any(np.sum(P * C) >= 0 for P in res.candidates[i + 1:]):
            return False
    return True


def test_criterion_8_cutting_plane_progress():
    runs = []
    shear = UncertainSystem(np.array([[0.5, 1.0], [0.0, 0.5]]), ReluNetwork.zeros([2, 3, 2]),
                            ErrorBound(((0.0, 0.005),)), Box.cube(1, 2).as_polytope(), Box.cube(0.1, 2))
    for k in (0, 1):
        runs.append(("shear", shear, k, run(shear, CegisConfig(k=k, max_iter=50))))
    for seed in (2, 6, 10):
        sys, _, _, _ = tiny_instance(seed)
        runs.append((f"tiny{seed}", sys, 1, run(sys, CegisConfig(k=1, max_iter=50))))
    sys2d = example_system()
    runs.append(("rational2d", sys2d, 1, run(sys2d, CegisConfig(k=1, max_iter=50, seed=1, compute_levels=False))))
    ok = True
    parts = []
    for name, sys, k, res in runs:
        good = _progress(res, sys, k) and res.status is CegisStatus.CERTIFIED
        ok &= good
        parts.append(f"{name}/k{k}: {len(res.history)} it" + ("" if good else " FAIL"))
    record(8, ok, "; ".join(parts))
    assert ok


# 9 --------------------------------------------------------------------------
def test_criterion_9_encoding_projection():
    ok = True
    tested = 0
    for seed in range(6):
        sys, _, cand, delta = tiny_instance(seed)
        enc = encode(sys, cand)
        rng = np.random.default_rng(seed)
        net_bins = [col for c in enc.copies for layer in c["binary"] for col in layer if col >= 0]
        pos = {b: j for j, b in enumerate(enc.binaries)}
        for _ in range(4):
            x = rng.uniform(-1, 1, 2)
            while sys.excluded.contains_interior(x):
                x = rng.uniform(-1, 1, 2)
            w = rng.uniform(-delta, delta, 2)
            v = enc.complete(x, w, sys)
            ok &= enc.check(v, tol=1e-7)
            ok &= abs(enc.objective(v) - float(eval_dV(cand, sys, x, w))) <= 1e-7
            truth = v[enc.binaries]
            for bits in itertools.product((0.0, 1.0), repeat=len(net_bins)):
                assign = truth.copy()
                for b, val in zip(net_bins, bits):
                    assign[pos[b]] = val
                ok &= enc.fixed_binary_lp(x, w, assign) == np.array_equal(assign, truth)
                tested += 1
    record(9, ok, f"{tested} fixed-binary LPs over 6 tiny networks")
    assert ok


# 10 -------------------------------------------------------------------------
def test_criterion_10_determinism(run2d, tmp_path):
    out_a, code_a, _ = run2d
    code_b, _ = _pipeline(CONFIGS / "rational2d.toml", tmp_path)

    def strip(path):
        if not path.is_file():
            return None
        lines = path.read_bytes().splitlines(keepends=True)
        return b"".join(line for line in lines if not line.lstrip().startswith(b'"created"'))

    a, b = strip(out_a / "certificate.json"), strip(tmp_path / "certificate.json")
    ok = code_a == code_b == EXIT_OK and a is not None and a == b
    record(10, ok, "certificate JSON identical apart from the timestamp" if ok else "certificates differ")
    assert ok
