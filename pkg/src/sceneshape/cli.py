"""Command-line entry point: ``sceneshape <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.  On failure a JSON error record goes to stderr and, when the output
directory is usable, to ``<out>/error.json``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import warnings
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .camera import CameraIntrinsics, DepthMap
from .completion import SparsityPattern, complete_depth, gen_sparsity, inject_outliers, \
    robust_align_sparse
from .config import RunConfig, load_config
from .errors import ConfigError, DataError, ParameterError, SceneShapeError, NumericalError
from .gradcheck import run_gradcheck
from .io import dumps_json, read_depth, write_depth, write_json, write_ply, write_sparse_csv
from .losses import ilnr_loss, mae_loss, msg_loss, normalize_variants, sr_loss_map
from .metrics import evaluate, labels_to_regions
from .recovery import SearchSpec, reconstruct_scene
from .synth import (PerturbationSample, SceneConfig, apply_distortion, generate_scene,
                    render_depth, sample_perturbation, scale_normalize)

COMMANDS = ("synth", "distort", "recover", "complete", "eval", "losses")
GRADCHECK_TOL = 1e-5


def camera_to_dict(cam: CameraIntrinsics) -> dict:
    return asdict(cam)


def camera_from_file(path: str) -> CameraIntrinsics:
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such camera file: {path}")
    try:
        d = json.loads(p.read_text())
        return CameraIntrinsics(float(d["f"]), float(d["u0"]), float(d["v0"]),
                                int(d["width"]), int(d["height"]))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed camera file {path}: {exc}") from None


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    import scipy
    import sklearn
    return {"sceneshape": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


class Run:
    """Book-keeping for one command: output dir, inputs, outputs, manifest."""

    def __init__(self, command: str, cfg: RunConfig, argv: list[str]):
        self.command = command
        self.cfg = cfg
        self.argv = argv
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: list[Path] = []
        self.outputs: list[str] = []

    def input(self, path: Optional[str]) -> Optional[str]:
        if path is not None:
            self.inputs.append(Path(path))
        return path

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def finish(self) -> None:
        write_json(self.cfg.to_dict(), self.path("config.json"))
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "seed": self.cfg.seed,
            "config_sha256": self.cfg.sha256(),
            "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in self.inputs if p.exists()],
            "outputs": sorted(set(self.outputs)),
            "versions": _versions(),
        }
        write_json(manifest, self.out / "manifest.json")


def _camera(args, cfg: RunConfig, shape) -> CameraIntrinsics:
    if getattr(args, "camera", None):
        return camera_from_file(args.camera)
    fov = args.fov if getattr(args, "fov", None) is not None else cfg.recovery.fov_guess
    return CameraIntrinsics.from_fov(fov, shape[1], shape[0])


def cmd_synth(run: Run, args) -> None:
    cfg = run.cfg
    scfg = SceneConfig(resolution=cfg.synth.resolution, fov_deg=cfg.synth.fov)
    cam = scfg.camera()
    for i in range(cfg.synth.count):
        seed = cfg.seed + i
        scene = generate_scene(seed, scfg)
        depth, labels, _ = render_depth(scene, cam)
        name = f"scene_{i:03d}"
        write_depth(depth, run.path(f"{name}/depth.pfm"))
        run.outputs.append(f"{name}/depth.pfm.json")
        np.save(run.path(f"{name}/labels.npy"), labels)
        run.path(f"{name}/scene.json").write_text(scene.to_json())
        write_json(camera_to_dict(cam), run.path(f"{name}/camera.json"))


def cmd_distort(run: Run, args) -> None:
    cfg = run.cfg
    depth = read_depth(run.input(args.input))
    cam = _camera(args, cfg, depth.shape)
    if args.camera:
        run.input(args.camera)
    rng = np.random.default_rng(cfg.seed)
    drawn = sample_perturbation(rng)
    dc = cfg.distort
    if dc.mode == "shift":
        p = PerturbationSample(delta_d=drawn.delta_d if dc.delta_d is None else dc.delta_d)
        base = depth if depth.unit == "normalized" else scale_normalize(depth)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = apply_distortion(base, cam, p, "shift")
    elif dc.mode == "focal":
        p = PerturbationSample(alpha_f=drawn.alpha_f if dc.alpha_f is None else dc.alpha_f)
        res = apply_distortion(depth, cam, p, "focal")
    else:
        raise ParameterError(f"distort mode must be 'shift' or 'focal', got {dc.mode!r}")
    write_depth(res.depth, run.path("distorted.pfm"))
    run.outputs.append("distorted.pfm.json")
    write_ply(res.cloud, run.path("distorted.ply"), color_by="depth", binary=True)
    write_json(camera_to_dict(res.camera), run.path("camera.json"))
    write_json({"mode": dc.mode, "delta_d": p.delta_d, "alpha_f": p.alpha_f,
                "masked_pixels": res.n_masked}, run.path("perturbation.json"))


def cmd_recover(run: Run, args) -> None:
    cfg = run.cfg
    depth = read_depth(run.input(args.input))
    cam = _camera(args, cfg, depth.shape)
    if args.camera:
        run.input(args.camera)
    r = cfg.recovery
    cloud, rec = reconstruct_scene(
        depth, cam,
        shift_search=SearchSpec(r.shift.lower, r.shift.upper, r.shift.step, r.shift.tol),
        focal_search=SearchSpec(r.focal.lower, r.focal.upper, r.focal.step, r.focal.tol),
        segment_params=cfg.segment_params())
    result = {
        "delta_d": rec.shift.delta_d,
        "alpha_f": rec.focal.alpha_f,
        "focal": rec.focal.focal,
        "segments_used": {"shift": rec.shift.segments_used, "focal": rec.focal.segments_used},
        "objective_trace": {"shift": [list(t) for t in rec.shift.objective_trace],
                            "focal": [list(t) for t in rec.focal.objective_trace]},
        "camera": camera_to_dict(rec.camera),
    }
    write_json(result, run.path("recovery.json"))
    write_ply(cloud, run.path("corrected.ply"), color_by="depth", binary=True)
    write_depth(rec.depth, run.path("corrected.pfm"))
    run.outputs.append("corrected.pfm.json")
    write_json(camera_to_dict(rec.camera), run.path("camera.json"))


def _pattern(cfg: RunConfig, args) -> SparsityPattern:
    d = dict(cfg.completion.pattern)
    d.setdefault("seed", cfg.seed)
    return SparsityPattern.from_dict(d)


def cmd_complete(run: Run, args) -> None:
    cfg = run.cfg
    gt = read_depth(run.input(args.gt))
    rng = np.random.default_rng(cfg.seed)
    if args.prior:
        prior = read_depth(run.input(args.prior))
    else:
        # synthetic relative prior: an unknown positive affine map of gt
        s, t = rng.uniform(0.2, 5.0), rng.uniform(-1.0, 1.0)
        prior = DepthMap((gt.values - t) / s, gt.mask, "affine")
    sparse = gen_sparsity(gt, _pattern(cfg, args))
    if cfg.completion.outlier_fraction > 0:
        sparse = inject_outliers(sparse, cfg.completion.outlier_fraction, rng)
    fit = robust_align_sparse(prior, sparse)
    res = complete_depth(prior, sparse, cfg.completion.screening, fit=fit)
    write_depth(res.depth, run.path("completed.pfm"))
    run.outputs.append("completed.pfm.json")
    write_sparse_csv(sparse, run.path("sparse.csv"))
    flagged = np.flatnonzero(sparse.mask & ~fit.inliers)
    write_json({"s": fit.s, "t": fit.t, "iterations": fit.iterations, "converged": fit.converged,
                "n_sparse": sparse.n_points, "n_flagged": int(flagged.size),
                "n_injected": int(sparse.outliers.size),
                "injected_flagged": int(np.isin(sparse.outliers, flagged).sum())},
               run.path("fit.json"))
    rep = evaluate(res.depth, gt, align_mode="none", dbe_max_dist=cfg.eval.dbe_max_dist)
    run.path("metrics.csv").write_text(rep.to_csv())
    write_json(rep.to_dict(), run.path("metrics.json"))
    sys.stdout.write(rep.to_table())


def cmd_eval(run: Run, args) -> None:
    cfg = run.cfg
    pred = read_depth(run.input(args.pred))
    gt = read_depth(run.input(args.gt))
    cam = camera_from_file(run.input(args.camera)) if args.camera else None
    regions = None
    if args.labels:
        labels = np.load(run.input(args.labels))
        if labels.shape != gt.shape:
            raise DataError("label image and depth differ in shape")
        regions = labels_to_regions(labels, min_pixels=3)
    rep = evaluate(pred, gt, align_mode=cfg.eval.align, cam=cam, regions=regions,
                   tau=cfg.losses.tau, dbe_max_dist=cfg.eval.dbe_max_dist)
    run.path("metrics.csv").write_text(rep.to_csv())
    write_json(rep.to_dict(), run.path("metrics.json"))
    sys.stdout.write(rep.to_table())


def cmd_losses(run: Run, args) -> None:
    cfg = run.cfg
    rng = np.random.default_rng(cfg.seed)
    gt = DepthMap(rng.uniform(1.0, 5.0, (16, 16)))
    pred = DepthMap(rng.uniform(1.0, 5.0, (16, 16)))
    a = rng.integers(0, 16, (64, 2))
    b = rng.integers(0, 16, (64, 2))
    values = {
        "ILNR": ilnr_loss(pred, gt).value,
        "MAE": mae_loss(pred, gt).value,
        "MSG": msg_loss(pred, normalize_variants(gt, "ilnr"), cfg.losses.msg_scales).value,
        "SR": sr_loss_map(pred, gt, a, b, cfg.losses.tau).value,
    }
    rep = run_gradcheck(cfg.losses.gradcheck_fixtures, cfg.seed)
    report = {"loss_values": values, "gradcheck": {
        "max_relative_error": rep.max_error, "fixtures_per_loss": rep.n_fixtures,
        "tolerance": GRADCHECK_TOL, "passed": rep.passed(GRADCHECK_TOL)}}
    write_json(report, run.path("losses.json"))
    for name, err in rep.max_error.items():
        status = "ok" if err <= GRADCHECK_TOL else "FAIL"
        sys.stdout.write(f"{name:<5} max relative gradient error {err:.3e}  {status}\n")
    if not rep.passed(GRADCHECK_TOL):
        raise NumericalError(f"gradient check failed: worst error {rep.worst:.3e}")


_HANDLERS = {"synth": cmd_synth, "distort": cmd_distort, "recover": cmd_recover,
             "complete": cmd_complete, "eval": cmd_eval, "losses": cmd_losses}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (flags override it)")
    common.add_argument("--seed", type=int, help="run seed")
    common.add_argument("--out", help="output directory")

    ap = argparse.ArgumentParser(prog="sceneshape", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="render synthetic Manhattan scenes")
    p.add_argument("--count", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--fov", type=float)

    p = sub.add_parser("distort", parents=[common], help="apply a depth shift or focal scale")
    p.add_argument("--input", required=True, help="depth file")
    p.add_argument("--camera", help="camera JSON (default: --fov)")
    p.add_argument("--fov", type=float)
    p.add_argument("--mode", choices=("shift", "focal"))
    p.add_argument("--delta", type=float, help="depth shift (default: drawn from the seed)")
    p.add_argument("--alpha", type=float, help="focal scale (default: drawn from the seed)")

    p = sub.add_parser("recover", parents=[common], help="recover shift and focal, write cloud")
    p.add_argument("--input", required=True, help="depth file")
    p.add_argument("--camera", help="initial camera JSON (default: --fov)")
    p.add_argument("--fov", type=float, help="initial field of view in degrees")

    p = sub.add_parser("complete", parents=[common], help="sparse sampling + completion")
    p.add_argument("--gt", required=True, help="ground-truth metric depth file")
    p.add_argument("--prior", help="relative depth prior (default: synthetic affine of gt)")
    p.add_argument("--pattern", help="sparsity pattern as JSON, e.g. '{\"kind\": \"uniform\"}'")
    p.add_argument("--outliers", type=float, help="outlier fraction")

    p = sub.add_parser("eval", parents=[common], help="compare a prediction with ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--align", choices=("none", "scale", "scale_shift"))
    p.add_argument("--camera", help="camera JSON, enables planarity errors with --labels")
    p.add_argument("--labels", help="plane label image (.npy), enables LSIV/PE")

    p = sub.add_parser("losses", parents=[common], help="loss suite and gradient check")
    p.add_argument("--fixtures", type=int, help="fixtures per loss")
    return ap


def _overrides(args) -> dict:
    o = {"seed": args.seed, "out": args.out}
    c = args.command
    if c == "synth":
        o.update({"synth.count": args.count, "synth.resolution": args.resolution,
                  "synth.fov": args.fov})
    elif c == "distort":
        o.update({"distort.mode": args.mode, "distort.delta_d": args.delta,
                  "distort.alpha_f": args.alpha})
    elif c == "recover":
        o["recovery.fov_guess"] = args.fov
    elif c == "complete":
        if args.pattern:
            try:
                o["completion.pattern"] = json.loads(args.pattern)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"--pattern is not valid JSON: {exc}") from None
        o["completion.outlier_fraction"] = args.outliers
    elif c == "eval":
        o["eval.align"] = args.align
    elif c == "losses":
        o["losses.gradcheck_fixtures"] = args.fixtures
    return o


def error_record(exc: BaseException, code: int) -> dict:
    return {"error": type(exc).__name__, "message": str(exc), "exit_code": code}


def run_pipeline(command: str, cfg: RunConfig, args=None, argv=None) -> int:
    """Run one command with an already-resolved config; returns the exit code."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    run = Run(command, cfg, list(argv or []))
    _HANDLERS[command](run, args)
    run.finish()
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    cfg = None
    try:
        cfg = load_config(args.config, _overrides(args))
        return run_pipeline(args.command, cfg, args, argv)
    except (SceneShapeError, OSError, ValueError) as exc:
        if isinstance(exc, SceneShapeError):
            code = exc.exit_code
        elif isinstance(exc, OSError):
            code = DataError.exit_code
        else:
            code = ConfigError.exit_code
        rec = error_record(exc, code)
        sys.stderr.write(json.dumps(rec) + "\n")
        if cfg is not None:
            try:
                out = Path(cfg.out)
                out.mkdir(parents=True, exist_ok=True)
                (out / "error.json").write_text(dumps_json(rec))
            except OSError:
                pass
        return code


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
