"""Command line entry point: ``svloc simulate|localize|evaluate|oracle|replay``.

Every command writes a ``run_manifest.json`` next to its outputs. The
manifest holds everything needed to re-run the command (inputs, full
configuration, seeds) and no output location, so ``svloc replay`` can
reproduce a run in place or into another directory.

Exit codes: 0 ok, 2 input error, 3 no panorama localized, 4 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from importlib import resources

import numpy as np

from . import __version__
from .config import PipelineConfig, load_config
from .errors import (
    ConfigError,
    DegenerateGeometry,
    EmptyProblem,
    InfeasibleSpec,
    MissingGroundTruth,
    NoAcceptedPanoramas,
    NonFiniteResidual,
    SingularSystem,
    SvlocError,
)

EXIT_OK, EXIT_INPUT, EXIT_NO_LOCALIZATION, EXIT_SOLVER = 0, 2, 3, 4
MANIFEST = "run_manifest.json"

log = logging.getLogger("svloc")


def bundled_spec(name):
    """Path-like handle of a spec shipped with the package, or None."""
    ref = resources.files("svloc") / "data" / f"{name}.spec.json"
    return ref if ref.is_file() else None


def _read_spec(spec):
    from .io import read_json
    from .simworld import WorldSpec

    if not os.path.exists(spec):
        ref = bundled_spec(spec)
        if ref is None:
            raise ConfigError(f"spec {spec!r} is neither a file nor a bundled spec")
        import json
        return WorldSpec.from_dict(json.loads(ref.read_text()))
    d = read_json(spec)
    if not isinstance(d, dict):
        raise InfeasibleSpec("spec must be a JSON object")
    return WorldSpec.from_dict(d)


def _manifest(command, **fields):
    return {"command": command, "svloc_version": __version__, **fields}


# ------------------------------------------------------------------ commands


def do_simulate(spec_dict, out):
    from .io import write_dataset, write_json
    from .simworld import WorldSpec, generate

    spec = WorldSpec.from_dict(spec_dict)
    ds, truth = generate(spec)
    write_dataset(out, ds, truth)
    write_json(os.path.join(out, MANIFEST), _manifest("simulate", spec=spec.to_dict(), seed=spec.seed))
    log.info("wrote dataset with %d frames and %d panoramas to %s", len(ds.frames), len(ds.panoramas), out)


def do_localize(dataset, config_dict, out):
    from .io import read_dataset, write_json
    from .pipeline import run_localize

    cfg = PipelineConfig.from_dict(config_dict)
    ds = read_dataset(dataset, cfg.rig_spacing_deg, cfg.view_fov_deg, cfg.view_size)
    result = run_localize(ds, cfg)
    os.makedirs(out, exist_ok=True)
    write_json(os.path.join(out, "trajectory.json"), result.trajectory.to_dict())
    write_json(os.path.join(out, "localization.json"), result.to_dict())
    write_json(os.path.join(out, MANIFEST), _manifest("localize", dataset=os.path.abspath(dataset),
                                                      config=cfg.to_dict(), seed=cfg.seed))
    con = result.estimates["connected"]
    log.info("localized %d panoramas (connected), %d (independent); skipped %d",
             len(con), len(result.estimates["independent"]), len(result.skipped))


def _truth_path(results, truth):
    if truth:
        return truth
    from .io import read_json
    mpath = os.path.join(results, MANIFEST)
    if os.path.exists(mpath):
        m = read_json(mpath)
        if m.get("command") == "localize":
            return os.path.join(m["dataset"], "ground_truth.json")
    raise MissingGroundTruth(f"no --truth given and {results} has no localize manifest")


def do_evaluate(results, truth, out):
    from .io import atomic_write, read_json, read_truth, write_json
    from .pipeline import evaluate, format_table

    truth = _truth_path(results, truth)
    gt = read_truth(truth)
    loc = read_json(os.path.join(results, "localization.json"))
    metrics = evaluate(loc, gt)
    table = format_table(metrics)
    os.makedirs(out, exist_ok=True)
    write_json(os.path.join(out, "metrics.json"), metrics)
    atomic_write(os.path.join(out, "cumulative.txt"), table + "\n")
    write_json(os.path.join(out, MANIFEST), _manifest("evaluate", results=os.path.abspath(results),
                                                      truth=os.path.abspath(truth)))
    print(table)


def oracle_report(dataset, truth, n=5, sigma=0.005, seed=0, max_corr=40):
    """Cross-check the LM solvers against the grid oracles on ground truth.

    For ``n`` landmarks (seen in at least three frames) the noisy bearings
    from the true poses are triangulated both ways; for ``n`` panoramas the
    true correspondences (a random subset of at most ``max_corr``, since
    the pose grid is slow) are localized both ways.
    """
    from .geometry import LEVEL_PANO_TO_TRAJ, bearings_of_pixels
    from .nlls import Problem, solve
    from .factors import BearingFactors, bearing_information
    from .panoloc import localize_connected, CorrespondenceSet
    from .simworld import oracle_pose, oracle_triangulate

    rng = np.random.default_rng(seed)
    obs = {}
    for f, (frame, labels) in enumerate(zip(dataset.frames, truth.feature_landmark)):
        for i, lid in enumerate(labels):
            if lid >= 0:
                obs.setdefault(int(lid), []).append((f, frame.features.keypoints[i]))
    eligible = sorted(l for l, o in obs.items() if len(o) >= 3)
    picks = sorted(rng.choice(eligible, min(n, len(eligible)), replace=False).tolist()) if eligible else []
    tri = []
    for lid in picks:
        frames = [f for f, _ in obs[lid]]
        b = bearings_of_pixels(dataset.intrinsics, np.array([kp for _, kp in obs[lid]]))
        poses = [truth.poses[f] for f in frames]
        try:
            grid = oracle_triangulate(poses, b, sigma, box=(truth.landmarks[lid], 5.0))
        except DegenerateGeometry as exc:
            tri.append({"landmark": lid, "error": str(exc)})
            continue
        prob = Problem()
        for j, p in enumerate(poses):
            prob.add_pose(("x", j), p, fixed=True)
        prob.add_point("y", grid)
        prob.add(BearingFactors([("x", j) for j in range(len(poses))], ["y"] * len(poses), b,
                                bearing_information(b[:, 0], sigma)))
        solve(prob)
        lm = prob.value("y")
        rays = np.array([p.t for p in poses]) - lm
        rays /= np.linalg.norm(rays, axis=1, keepdims=True)
        parallax = math.degrees(math.acos(float(np.clip((rays @ rays.T).min(), -1.0, 1.0))))
        tri.append({"landmark": lid, "observations": len(frames), "parallax_deg": parallax,
                    "oracle": [float(x) for x in grid],
                    "lm": [float(x) for x in lm], "disagreement_m": float(np.linalg.norm(lm - grid)),
                    "truth_error_m": float(np.linalg.norm(lm - truth.landmarks[lid]))})
    pose = []
    for pano in dataset.panoramas[:n]:
        labels = truth.pano_feature_landmark[pano.id]
        vid, kps, lms = [], [], []
        for k, view in enumerate(pano.views):
            for i, lid in enumerate(labels[k]):
                vid.append(k)
                kps.append(view.features.keypoints[i])
                lms.append(int(lid))
        if len(lms) < 6:
            continue
        keep = np.sort(rng.choice(len(lms), min(max_corr, len(lms)), replace=False))
        vid = np.array(vid)[keep]
        kps = np.array(kps)[keep]
        lms = [lms[i] for i in keep]
        b = np.empty((len(vid), 2))
        for k in set(vid.tolist()):
            b[vid == k] = bearings_of_pixels(pano.views[k].intrinsics, kps[vid == k])
        rots = {k: pano.views[k].rotation for k in set(vid.tolist())}
        yaws = {k: pano.views[k].yaw for k in rots}
        corr = CorrespondenceSet(pano.id, vid, kps, np.array(lms), b, rots, yaws)
        Y = truth.landmarks[lms]
        true_rig = truth.pano_rigs[pano.id]
        try:
            pos, yaw = oracle_pose(Y, b, corr.rotations(), sigma, box=(true_rig.t, 3.0))
        except DegenerateGeometry as exc:
            pose.append({"pano_id": pano.id, "error": str(exc)})
            continue
        est = localize_connected(corr, {i: truth.landmarks[i] for i in set(lms)}, sigma)
        M = LEVEL_PANO_TO_TRAJ.T @ est.rig.R
        lm_yaw = math.atan2(M[0, 1], M[0, 0]) % (2.0 * math.pi)
        pose.append({"pano_id": pano.id, "correspondences": len(lms), "oracle": [float(x) for x in pos],
                     "oracle_yaw": yaw, "lm": [float(x) for x in est.rig.t], "lm_yaw": lm_yaw,
                     "disagreement_m": float(np.linalg.norm(est.rig.t - pos)),
                     "truth_error_m": float(np.linalg.norm(est.rig.t - true_rig.t))})
    return {"triangulation": tri, "pose": pose, "grid_resolution_m": 0.01}


def do_oracle(dataset, n, seed, out):
    from .io import read_dataset, read_truth, write_json

    ds = read_dataset(dataset)
    gt = read_truth(os.path.join(dataset, "ground_truth.json"))
    report = oracle_report(ds, gt, n, seed=seed)
    os.makedirs(out, exist_ok=True)
    write_json(os.path.join(out, "oracle.json"), report)
    write_json(os.path.join(out, MANIFEST), _manifest("oracle", dataset=os.path.abspath(dataset), n=n, seed=seed))
    for kind in ("triangulation", "pose"):
        worst = max([r.get("disagreement_m", 0.0) for r in report[kind]], default=0.0)
        print(f"{kind}: {len(report[kind])} checks, worst oracle/LM disagreement {worst:.4f} m")


def replay(manifest, out):
    """Re-run the command recorded in ``manifest`` writing into ``out``."""
    cmd = manifest.get("command")
    if cmd == "simulate":
        do_simulate(manifest["spec"], out)
    elif cmd == "localize":
        do_localize(manifest["dataset"], manifest["config"], out)
    elif cmd == "evaluate":
        do_evaluate(manifest["results"], manifest["truth"], out)
    elif cmd == "oracle":
        do_oracle(manifest["dataset"], manifest["n"], manifest["seed"], out)
    else:
        raise ConfigError(f"manifest has unknown command {cmd!r}")


# ------------------------------------------------------------------ parsing


def build_parser():
    p = argparse.ArgumentParser(prog="svloc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log stage timings and progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic dataset with ground truth")
    s.add_argument("spec", help="world spec JSON file, or the name of a bundled spec (e.g. parkinglot)")
    s.add_argument("out", help="dataset directory to write")
    s.add_argument("--seed", type=int, help="override the spec's seed")

    s = sub.add_parser("localize", help="run the localization pipeline on a dataset")
    s.add_argument("dataset")
    s.add_argument("out")
    s.add_argument("--config", help="pipeline config JSON")
    s.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (JSON value); repeatable")

    s = sub.add_parser("evaluate", help="score localization outputs against ground truth")
    s.add_argument("results", help="directory written by localize")
    s.add_argument("--truth", help="ground_truth.json (default: taken from the localize manifest)")
    s.add_argument("--out", help="output directory (default: <results>/evaluation)")

    s = sub.add_parser("oracle", help="cross-check the solvers against brute-force grid oracles")
    s.add_argument("dataset")
    s.add_argument("out")
    s.add_argument("-n", type=int, default=5, help="landmarks and panoramas to check")
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("replay", help="re-run a command from its run_manifest.json")
    s.add_argument("manifest")
    s.add_argument("--out", help="output directory (default: the manifest's directory)")
    return p


def run(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        spec = _read_spec(args.spec)
        if args.seed is not None:
            spec = type(spec).from_dict({**spec.to_dict(), "seed": args.seed})
        do_simulate(spec.to_dict(), args.out)
    elif args.command == "localize":
        cfg = load_config(args.config, args.overrides)
        do_localize(args.dataset, cfg.to_dict(), args.out)
    elif args.command == "evaluate":
        do_evaluate(args.results, args.truth, args.out or os.path.join(args.results, "evaluation"))
    elif args.command == "oracle":
        do_oracle(args.dataset, args.n, args.seed, args.out)
    elif args.command == "replay":
        from .io import read_json
        replay(read_json(args.manifest), args.out or os.path.dirname(os.path.abspath(args.manifest)))
    return EXIT_OK


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    verbose = "-v" in argv or "--verbose" in argv
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, stream=sys.stderr,
                        format="svloc: %(message)s")
    try:
        return run(argv)
    except (ConfigError, InfeasibleSpec, MissingGroundTruth) as exc:
        print(f"svloc: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NoAcceptedPanoramas as exc:
        print(f"svloc: no localization: {exc}", file=sys.stderr)
        return EXIT_NO_LOCALIZATION
    except (SingularSystem, NonFiniteResidual, EmptyProblem) as exc:
        print(f"svloc: solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SvlocError as exc:
        print(f"svloc: solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
