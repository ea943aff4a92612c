"""Command-line entry point: preprocess -> train -> analyze, plus selfcheck.

Exit codes: 0 success, 2 input error, 3 divergence, 4 selfcheck failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (SurfaceProjector, classify_singular_edges_discrete, discretize_volume_field,
                       extract_singular_points, extract_surface_cross_field, trace_streamline)
from .features import FeatureSet, detect_features
from .formats import (MeshParseError, load_tet_mesh, read_feature_file, read_obj_features, write_cross_field,
                      write_feature_file, write_frames, write_medit, write_obj_polylines, write_singular_ply)
from .mesh import (PRIMITIVES, AffineTransform, MeshError, PointLocator, build_dual_graph, generate_primitive,
                   normalize_to_unit_box, subdivide_multi_boundary_tets)
from .siren import load_checkpoint, save_checkpoint
from .training import DivergenceError, TrainConfig, prepare_training_data, train, write_loss_csv

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED, EXIT_SELFCHECK = 0, 2, 3, 4
SEED_ENV = "NEURFRAME_SEED"

SOURCE_MESH = "source.mesh"
TRAIN_MESH = "train.mesh"
FEATURES = "features.feat"
BUNDLE_INFO = "bundle.json"
CHECKPOINT = "checkpoint.nfck"


class InputError(Exception):
    pass


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def bundle_hash(bundle) -> str:
    h = hashlib.sha256()
    for name in (TRAIN_MESH, FEATURES, BUNDLE_INFO):
        h.update(name.encode())
        h.update(Path(bundle, name).read_bytes())
    return h.hexdigest()


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def resolve_seed(flag, config_seed=None, default: int = 0) -> int:
    """flag > NEURFRAME_SEED > config file > default."""
    if flag is not None:
        return int(flag)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise InputError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return int(config_seed) if config_seed is not None else default


# ---------------------------------------------------------------------------
# preprocess


def load_features(path) -> FeatureSet:
    if Path(path).suffix.lower() == ".obj":
        return read_obj_features(path)
    return read_feature_file(path)


def cmd_preprocess(args) -> int:
    t0 = time.perf_counter()
    out = Path(args.out)
    if args.primitive:
        source = generate_primitive(args.primitive, args.resolution)
        inputs = {"primitive": args.primitive, "resolution": args.resolution}
    elif args.mesh:
        source = load_tet_mesh(args.mesh)
        inputs = {"mesh": sha256_file(args.mesh)}
    else:
        raise InputError("give a mesh file or --primitive")
    t_load = time.perf_counter()

    normalized, xf = normalize_to_unit_box(source)
    mesh = subdivide_multi_boundary_tets(normalized)
    if args.features:
        features = load_features(args.features).transformed(xf.apply)
        inputs["features"] = sha256_file(args.features)
    elif args.no_features:
        features = FeatureSet.empty()
    else:
        features = detect_features(mesh, np.radians(args.feature_angle))
    dual = build_dual_graph(mesh)
    t_prep = time.perf_counter()

    out.mkdir(parents=True, exist_ok=True)
    write_medit(out / SOURCE_MESH, source)
    write_medit(out / TRAIN_MESH, mesh)
    write_feature_file(out / FEATURES, features)
    stats = {"tets": mesh.n_tets, "dual_edges": len(dual.edges),
             "boundary_tets": len(mesh.boundary_tets), "features": len(features),
             "source_tets": source.n_tets}
    info = {
        "version": __version__,
        "inputs": inputs,
        "transform": {"center": [float(c) for c in xf.center], "scale": float(xf.scale)},
        "stats": stats,
    }
    write_json(out / BUNDLE_INFO, info)
    write_json(out / "preprocess_manifest.json", {
        **info, "bundle_hash": bundle_hash(out),
        "timings": {"load": t_load - t0, "preprocess": t_prep - t_load, "total": time.perf_counter() - t0},
    })
    print(f"|P|={stats['tets']} |E|={stats['dual_edges']} |Pbar|={stats['boundary_tets']} |F|={stats['features']}")
    return EXIT_OK


class Bundle:
    def __init__(self, path):
        self.path = Path(path)
        if not (self.path / BUNDLE_INFO).is_file():
            raise InputError(f"{path} is not a preprocessed bundle (missing {BUNDLE_INFO})")
        self.info = json.loads((self.path / BUNDLE_INFO).read_text())
        tr = self.info["transform"]
        self.transform = AffineTransform(np.array(tr["center"]), tr["scale"])
        self.hash = bundle_hash(self.path)

    def mesh(self):
        return load_tet_mesh(self.path / TRAIN_MESH)

    def source(self):
        return load_tet_mesh(self.path / SOURCE_MESH)

    def features(self) -> FeatureSet:
        return read_feature_file(self.path / FEATURES)


# ---------------------------------------------------------------------------
# train

_CONFIG_FLAGS = ("lambda_s", "lambda_b", "lambda_f", "sigma", "iterations", "lr",
                 "batch_edges", "batch_boundary", "batch_points", "checkpoint_every")


def build_config(args) -> TrainConfig:
    values = {}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        # a run manifest carries its config under "config"
        values.update(loaded.get("config", loaded) if isinstance(loaded, dict) else {})
    for key in _CONFIG_FLAGS:
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    values["seed"] = resolve_seed(args.seed, values.get("seed"))
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad config: {exc}") from None


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    bundle = Bundle(args.bundle)
    config = build_config(args)
    out = Path(args.out) if args.out else bundle.path / "train"
    out.mkdir(parents=True, exist_ok=True)
    data = prepare_training_data(bundle.mesh(), bundle.features())
    t_prep = time.perf_counter()
    meta = {"bundle": bundle.hash, "config": config.to_dict(), "version": __version__}
    xf = bundle.transform

    def on_step(it, params, report):
        if config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            save_checkpoint(out / f"checkpoint_{it + 1:06d}.nfck", params, xf.center, xf.scale, meta)
        if args.progress and (it + 1) % args.progress == 0:
            print(f"iter {it + 1} total {report.total:.6g}", file=sys.stderr)

    result = train(data, config, callback=on_step)
    t_train = time.perf_counter()
    save_checkpoint(out / CHECKPOINT, result.params, xf.center, xf.scale, meta)
    write_loss_csv(out / "loss.csv", result.history)
    write_json(out / "manifest.json", {
        "command": "train", "version": __version__, "config": config.to_dict(), "seed": config.seed,
        "inputs": {"bundle": bundle.hash}, "outputs": {CHECKPOINT: sha256_file(out / CHECKPOINT)},
        "timings": {"prepare": t_prep - t0, "train": t_train - t_prep},
    })
    last = result.history[-1].total if result.history else float("nan")
    print(f"trained {config.iterations} iterations, final loss {last:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze


def _load_checked(args):
    bundle = Bundle(args.bundle)
    try:
        params, center, scale, meta = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot read checkpoint {args.checkpoint}: {exc}") from None
    if meta.get("bundle") != bundle.hash:
        raise InputError("checkpoint was not trained on this bundle (hash mismatch)")
    return bundle, params, AffineTransform(center, scale), meta


def _analyze_singularities(args, bundle, params, xf, out):
    mesh = bundle.mesh()
    seed = resolve_seed(args.seed)
    sp = extract_singular_points(params, PointLocator(mesh), n_seeds=args.seeds,
                                 max_depth=args.max_depth, seed=seed)
    write_singular_ply(out / "singularities.ply", xf.inverse(sp.points), sp.rotation_class)
    disc = classify_singular_edges_discrete(discretize_volume_field(params, mesh).frames, mesh)
    print(f"{len(sp)} singular points")
    return {"seed": seed, "seeds": args.seeds, "max_depth": args.max_depth, "points": len(sp),
            "discrete_singular_edges": len(disc.singular), "unclassified_edges": len(disc.unclassified)}, \
        ["singularities.ply"]


def _analyze_streamlines(args, bundle, params, xf, out):
    mesh = bundle.mesh()
    seed = resolve_seed(args.seed)
    rng = np.random.default_rng(seed)
    lines = []
    if args.surface:
        surf = SurfaceProjector(mesh.vertices, mesh.boundary_faces, mesh.boundary_normals)
        picks = rng.choice(len(mesh.boundary_faces), size=args.count, replace=len(mesh.boundary_faces) < args.count)
        seeds = mesh.face_centroids()[picks]
        for s in seeds:
            lines.append(trace_streamline(params, s, args.step, args.max_steps, surface=surf))
    else:
        loc = PointLocator(mesh)
        seeds = mesh.centroids()[rng.choice(mesh.n_tets, size=args.count, replace=mesh.n_tets < args.count)]
        for s in seeds:
            lines.append(trace_streamline(params, s, args.step, args.max_steps, domain=loc))
    write_obj_polylines(out / "streamlines.obj", [xf.inverse(l.points) for l in lines])
    reasons = {}
    for l in lines:
        reasons[l.reason] = reasons.get(l.reason, 0) + 1
    print(f"{len(lines)} streamlines")
    return {"seed": seed, "count": args.count, "surface": bool(args.surface), "reasons": reasons}, ["streamlines.obj"]


def _analyze_crossfield(args, bundle, params, xf, out):
    source = bundle.source()
    verts = xf.apply(source.vertices)
    cf = extract_surface_cross_field(params, verts, source.boundary_faces, source.boundary_normals)
    write_cross_field(out / "crossfield.txt", cf.u, cf.v)
    print(f"{len(cf.u)} triangles, {len(cf.flagged)} flagged")
    return {"triangles": len(cf.u), "flagged": cf.flagged.tolist()}, ["crossfield.txt"]


def _analyze_discretize(args, bundle, params, xf, out):
    source = bundle.source()
    df = discretize_volume_field(params, source, xf)
    write_frames(out / "frames.txt", df.frames)
    print(f"{len(df.frames)} frames, {len(df.failed)} projection failures")
    return {"tets": len(df.frames), "failed": df.failed.tolist()}, ["frames.txt"]


_ANALYSES = {
    "singularities": _analyze_singularities,
    "streamlines": _analyze_streamlines,
    "crossfield": _analyze_crossfield,
    "discretize": _analyze_discretize,
}


def cmd_analyze(args) -> int:
    t0 = time.perf_counter()
    bundle, params, xf, _ = _load_checked(args)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    summary, files = _ANALYSES[args.analysis](args, bundle, params, xf, out)
    write_json(out / f"{args.analysis}_manifest.json", {
        "command": f"analyze {args.analysis}", "version": __version__, "summary": summary,
        "inputs": {"bundle": bundle.hash, "checkpoint": sha256_file(args.checkpoint)},
        "outputs": {f: sha256_file(out / f) for f in files},
        "timings": {"total": time.perf_counter() - t0},
    })
    return EXIT_OK


# ---------------------------------------------------------------------------
# selfcheck


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck

    results = run_selfcheck()
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("selfcheck passed" if ok else "selfcheck FAILED")
    return EXIT_OK if ok else EXIT_SELFCHECK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neurframe", description="Neural octahedral frame fields on tet meshes.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    pp = sub.add_parser("preprocess", help="normalize, subdivide and extract features")
    pp.add_argument("mesh", nargs="?", help="input MEDIT .mesh file")
    pp.add_argument("--primitive", choices=PRIMITIVES, help="generate a fixture instead of reading a file")
    pp.add_argument("--resolution", type=int, default=4)
    pp.add_argument("--features", help="feature segments (.feat or .obj); overrides detection")
    pp.add_argument("--no-features", action="store_true", help="train without feature alignment")
    pp.add_argument("--feature-angle", type=float, default=45.0, help="dihedral threshold in degrees")
    pp.add_argument("-o", "--out", default="bundle")
    pp.set_defaults(func=cmd_preprocess)

    tp = sub.add_parser("train", help="fit the network on a bundle")
    tp.add_argument("bundle")
    tp.add_argument("--config", help="config JSON (or a previous run manifest)")
    tp.add_argument("--seed", type=int)
    tp.add_argument("--iterations", type=int)
    tp.add_argument("--lr", type=float)
    tp.add_argument("--lambda-s", dest="lambda_s", type=float)
    tp.add_argument("--lambda-b", dest="lambda_b", type=float)
    tp.add_argument("--lambda-f", dest="lambda_f", type=float)
    tp.add_argument("--sigma", type=float)
    tp.add_argument("--batch-edges", type=int)
    tp.add_argument("--batch-boundary", type=int)
    tp.add_argument("--batch-points", type=int)
    tp.add_argument("--checkpoint-every", type=int)
    tp.add_argument("--progress", type=int, default=0, help="print the loss every N iterations")
    tp.add_argument("-o", "--out", help="run directory (default BUNDLE/train)")
    tp.set_defaults(func=cmd_train)

    ap = sub.add_parser("analyze", help="post-process a trained field")
    ap.add_argument("analysis", choices=sorted(_ANALYSES))
    ap.add_argument("checkpoint")
    ap.add_argument("--bundle", required=True)
    ap.add_argument("-o", "--out", help="output directory (default next to the checkpoint)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--seeds", type=int, default=500, help="seed triangles for singularity extraction")
    ap.add_argument("--max-depth", type=int, default=8)
    ap.add_argument("--count", type=int, default=50, help="number of streamlines")
    ap.add_argument("--step", type=float, default=0.01)
    ap.add_argument("--max-steps", type=int, default=2000)
    ap.add_argument("--surface", action="store_true", help="trace streamlines on the boundary surface")
    ap.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("selfcheck", help="run the embedded oracle suite")
    sp.set_defaults(func=cmd_selfcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InputError, MeshError, MeshParseError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
