"""Command-line pipeline: approximate, build-roi, bound-error, synthesize, roa, simulate, replay."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .cegis import CegisConfig, CegisStatus, Certificate, DigestMismatchError, replay, run
from .dynamics import UncertainSystem, get_benchmark, jacobian_at_origin, simulate
from .error_model import ErrorBound, Provenance, concave_bound, inflate, residuals
from .estimators import ReluApproximator
from .geometry import Box, Polytope, build_roi, grid_eps_net
from .relu_net import NetworkFormatError, lipschitz_upper, load, save, write_dataset_csv
from .roa import LevelSetIndeterminate, RoaEstimate, estimate, grid, sample_inside, svg, validate_by_simulation

logger = logging.getLogger("roacert")

EXIT_OK, EXIT_FAIL, EXIT_INFEASIBLE, EXIT_UNKNOWN, EXIT_CONFIG = 0, 1, 2, 3, 4
STAGES = ("approximate", "build-roi", "bound-error", "synthesize", "roa", "simulate")
WORKERS_ENV = "ROACERT_WORKERS"
SCHEMA_VERSION = 1


class MissingArtifact(cfgmod.ConfigError):
    pass


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=1) + "\n")


def _read_json(path: Path) -> dict:
    if not path.is_file():
        raise MissingArtifact(f"{path} not found; run the stage that produces it first")
    return json.loads(path.read_text())


def _seeds(seed: int) -> dict:
    return {"train": seed, "cegis": seed + 1, "simulate": seed + 2}


class Context:
    def __init__(self, cfg: cfgmod.ExperimentConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.seeds = _seeds(cfg.seed)
        self.fmap = get_benchmark(cfg.system.name, cfg.system.dt)

    def path(self, name: str) -> Path:
        return self.out / name

    def A(self) -> np.ndarray:
        return np.array(_read_json(self.path("system.json"))["A"], dtype=float)

    def network(self):
        p = self.path("network.json")
        if not p.is_file():
            raise MissingArtifact(f"{p} not found; run the approximate stage first")
        return load(p)

    def roi(self) -> Polytope:
        return Polytope.from_dict(_read_json(self.path("roi.json")))

    def excluded(self) -> Box:
        s = self.cfg.synthesize
        return Box(np.array(s.excluded_lo, dtype=float), np.array(s.excluded_hi, dtype=float))

    def system(self) -> UncertainSystem:
        bound = ErrorBound.from_dict(_read_json(self.path("error_bound.json")))
        return UncertainSystem(self.A(), self.network(), bound, self.roi(), self.excluded())

    def verifier_config(self):
        return self.cfg.synthesize.verifier

    def certificate(self) -> Certificate:
        return Certificate.from_dict(_read_json(self.path("certificate.json")))


# stages ----------------------------------------------------------------------
def stage_approximate(ctx: Context) -> int:
    c, n = ctx.cfg.approximate, ctx.cfg.dim
    A = jacobian_at_origin(ctx.fmap, n, ctx.cfg.system.jacobian_step)
    A[np.abs(A) < ctx.cfg.system.jacobian_zero_tol] = 0.0
    _write_json(ctx.path("system.json"), {"schema_version": SCHEMA_VERSION, "name": ctx.cfg.system.name,
                                          "dt": ctx.cfg.system.dt, "A": A.tolist()})
    g = np.linspace(-c.region, c.region, c.grid)
    X = np.array(np.meshgrid(*[g] * n, indexing="ij")).reshape(n, -1).T
    Y = ctx.fmap(X) - X @ A.T
    write_dataset_csv(ctx.path("training_data.csv"), X, Y)
    est = ReluApproximator(hidden=tuple(c.hidden), epochs=c.epochs, learning_rate=c.learning_rate, l1=c.l1,
                           batch_size=c.batch_size, refine_epochs=c.refine_epochs, refine_power=c.refine_power,
                           refine_learning_rate=c.refine_learning_rate, refine_batch_size=c.refine_batch_size,
                           seed=ctx.seeds["train"])
    est.fit(X, Y)
    save(est.network_, ctx.path("network.json"))
    logger.info("approximate: %d samples, training max error %.4g, |f_NN(0)| = %.2g", len(X),
                est.max_error(X, Y), float(np.abs(est.predict(np.zeros((1, n)))).max()))
    return EXIT_OK


def stage_build_roi(ctx: Context) -> int:
    c = ctx.cfg.roi
    roi = build_roi(ctx.fmap, Box.cube(c.region, ctx.cfg.dim), c.density, c.steps, c.conv_tol, c.tau)
    roi.save(ctx.path("roi.json"))
    logger.info("build-roi: %d facets, bounding box %s", roi.n_facets, np.round(roi.bounding_box(), 4).tolist())
    return EXIT_OK


def stage_bound_error(ctx: Context) -> int:
    c = ctx.cfg.error
    A, net, roi = ctx.A(), ctx.network(), ctx.roi()
    S = grid_eps_net(roi, c.eps)
    xn, wn = residuals(ctx.fmap, A, net, S)
    sampled = concave_bound(xn, wn, c.gammas, radius=roi.max_inf_norm())
    if c.lipschitz_f is not None:
        bound = inflate(sampled, c.eps, c.lipschitz_f, lipschitz_upper(net, A))
    else:
        bound = ErrorBound(sampled.pieces, Provenance.SAMPLED, eps=c.eps)
    assert np.all(bound.at_norm(xn) >= wn), "error bound misses a sampled residual"
    bound.save(ctx.path("error_bound.json"))
    logger.info("bound-error: %d samples, max residual %.4g, pieces %s (%s)", len(S), wn.max(),
                [tuple(round(v, 6) for v in p) for p in bound.pieces], bound.provenance.value)
    return EXIT_OK


def stage_synthesize(ctx: Context) -> int:
    s = ctx.cfg.synthesize
    sysm = ctx.system()
    workers = os.environ.get(WORKERS_ENV)
    if workers is not None:
        try:
            if int(workers) > 1:
                logger.info("%s=%s requested; the verifier runs single-worker", WORKERS_ENV, workers)
        except ValueError as exc:
            raise cfgmod.ConfigError(f"{WORKERS_ENV} must be an integer, got {workers!r}") from exc
    conf = CegisConfig(k=s.k, max_iter=s.max_iter, learner=s.learner, verifier=s.verifier,
                       seed=ctx.seeds["cegis"], compute_levels=s.compute_levels)
    res = run(sysm, conf)
    summary = {"schema_version": SCHEMA_VERSION, "status": res.status.value, "iterations": len(res.history),
               "history": [h.to_dict() for h in res.history], "diagnostics": res.diagnostics}
    _write_json(ctx.path("synthesis.json"), summary)
    if res.status == CegisStatus.CERTIFIED:
        res.certificate.save(ctx.path("certificate.json"))
        for w in res.certificate.warnings:
            logger.warning("certificate: %s", w)
        logger.info("synthesize: certificate after %d iterations (ub %.3g, c_max %s, c_min %s)",
                    len(res.history), res.certificate.ub, res.certificate.c_max, res.certificate.c_min)
        return EXIT_OK
    logger.warning("synthesize: %s (%s)", res.status.value, "; ".join(res.diagnostics))
    return EXIT_INFEASIBLE if res.status == CegisStatus.INFEASIBLE else EXIT_UNKNOWN


def _estimate_from_certificate(ctx: Context) -> RoaEstimate:
    cert = ctx.certificate()
    sysm = ctx.system()
    if cert.c_max is not None and cert.c_min is not None:
        return RoaEstimate(sysm, cert.cand, cert.c_max, cert.c_min)
    return estimate(sysm, cert.cand, ctx.verifier_config())


def stage_roa(ctx: Context) -> int:
    est = _estimate_from_certificate(ctx)
    slices = grid(est, ctx.cfg.roa.resolution)
    names = ["roa"] if len(slices) == 1 else ["roa_x1_0", "roa_x3_0"]
    files = []
    for name, sl in zip(names, slices):
        sl.write_csv(ctx.path(f"{name}.csv"))
        title = name if not sl.fixed else ", ".join(f"x{i + 1} = {v:g}" for i, v in sl.fixed.items())
        ctx.path(f"{name}.svg").write_text(svg(est, sl, title=title))
        files += [f"{name}.csv", f"{name}.svg"]
    _write_json(ctx.path("roa.json"), {**est.to_dict(), "files": files})
    logger.info("roa: c_max %.6g, c_min %.6g%s", est.c_max, est.c_min, " (DEGENERATE)" if est.degenerate else "")
    return EXIT_OK


def stage_simulate(ctx: Context) -> int:
    c = ctx.cfg.simulate
    est = _estimate_from_certificate(ctx)
    rep = validate_by_simulation(est, c.n_trajectories, c.steps, ctx.seeds["simulate"], c.policy)
    _write_json(ctx.path("simulation.json"), rep.to_dict())
    x0 = sample_inside(est, 1, np.random.default_rng(ctx.seeds["simulate"]))[0]
    simulate(est.sys, x0, c.steps, c.policy, ctx.seeds["simulate"]).save_csv(ctx.path("trajectory.csv"))
    logger.info("simulate: %d/%d trajectories end in the attractor sublevel set, %d decrease violations",
                rep.converged, rep.n_trajectories, rep.decrease_violations)
    return EXIT_OK if rep.passed else EXIT_FAIL


def stage_replay(ctx: Context, certificate: str | None = None) -> int:
    path = Path(certificate) if certificate else ctx.path("certificate.json")
    cert = Certificate.from_dict(_read_json(path))
    try:
        ok = replay(cert, ctx.system(), ctx.verifier_config())
    except DigestMismatchError as exc:
        logger.error("replay: %s", exc)
        return EXIT_FAIL
    logger.info("replay: %s", "certificate reproduced" if ok else "certificate NOT reproduced")
    return EXIT_OK if ok else EXIT_FAIL


STAGE_FUNCS = {
    "approximate": stage_approximate,
    "build-roi": stage_build_roi,
    "bound-error": stage_bound_error,
    "synthesize": stage_synthesize,
    "roa": stage_roa,
    "simulate": stage_simulate,
}


def stage_pipeline(ctx: Context, start: str | None = None) -> int:
    stages = STAGES[STAGES.index(start):] if start else STAGES
    for name in stages:
        logger.info("== %s", name)
        code = STAGE_FUNCS[name](ctx)
        if code != EXIT_OK:
            return code
    return EXIT_OK


# entry point -------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roacert", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "replay", "pipeline"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="experiment TOML file")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int, help="run seed (overrides the config)")
        sp.add_argument("--verbose", "-v", action="count", default=0)
        if name == "pipeline":
            sp.add_argument("--stage", choices=STAGES, help="resume the pipeline at this stage")
        if name == "replay":
            sp.add_argument("--certificate", help="certificate JSON (default: <out>/certificate.json)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = cfgmod.load(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise cfgmod.ConfigError("--seed must be nonnegative")
            cfg.seed = args.seed
        out = Path(args.out or cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        ctx = Context(cfg, out)
        if args.command == "pipeline":
            return stage_pipeline(ctx, args.stage)
        if args.command == "replay":
            return stage_replay(ctx, args.certificate)
        return STAGE_FUNCS[args.command](ctx)
    except cfgmod.ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (NetworkFormatError, KeyError, json.JSONDecodeError) as exc:
        logger.error("artifact error: %s", exc)
        return EXIT_CONFIG
    except LevelSetIndeterminate as exc:
        logger.error("%s", exc)
        return EXIT_UNKNOWN


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
