"""Fit a frame field on a cube and inspect it.

A cube admits a singularity-free field (the coordinate frame), so a good fit
aligns with the faces and has no singular points.

Run: python3 demos/train_cube.py --iterations 2000
"""
import argparse
import time

import numpy as np

from neurframe import TrainConfig, evaluate, generate_primitive, normalize_to_unit_box, prepare_training_data, train
from neurframe import subdivide_multi_boundary_tets
from neurframe.analysis import discretize_volume_field, extract_singular_points, trace_streamline
from neurframe.features import detect_features
from neurframe.mesh import PointLocator
from neurframe.sh_frame import SQRT_7_12

parser = argparse.ArgumentParser()
parser.add_argument("--resolution", type=int, default=4)
parser.add_argument("--iterations", type=int, default=2000)
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()

mesh, _ = normalize_to_unit_box(generate_primitive("cube", args.resolution))
mesh = subdivide_multi_boundary_tets(mesh)
data = prepare_training_data(mesh, detect_features(mesh))
print(f"{mesh.n_tets} tets, {len(data.boundary.points)} boundary samples")

t0 = time.time()
result = train(data, TrainConfig(iterations=args.iterations, seed=args.seed),
               callback=lambda it, p, r: it % 250 == 0 and print(f"  {it:5d} total {r.total:.3e}"))
print(f"trained in {time.time() - t0:.0f}s, final loss {result.history[-1].total:.3e}")

q = evaluate(result.params, data.boundary.points)
res = np.abs(SQRT_7_12 - np.sum(data.boundary_rows * q, axis=1))
print(f"boundary alignment residual: mean {res.mean():.2e}")

frames = discretize_volume_field(result.params, mesh).frames
dev = np.degrees(np.arccos(np.abs(frames).max(axis=1).min()))
print(f"largest axis deviation from the coordinate frame: {dev:.2f} deg")

sing = extract_singular_points(result.params, PointLocator(mesh), n_seeds=500, seed=args.seed)
print(f"{len(sing)} singular points")

line = trace_streamline(result.params, np.zeros(3), step=0.01, direction=[1, 0, 0], domain=PointLocator(mesh))
print(f"streamline from the center: {len(line.points)} points, ended by {line.reason}")
