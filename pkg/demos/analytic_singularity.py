"""Locate a known singular line with both extractors.

The fixture field turns by a quarter turn around the z-axis, so every loop
around that axis picks up a 90-degree rotation.

Run: python3 demos/analytic_singularity.py
"""
import numpy as np

from neurframe.analysis import classify_singular_edges_discrete, discretize_volume_field, extract_singular_points
from neurframe.analytic import valence3_field
from neurframe.mesh import generate_primitive, normalize_to_unit_box
from neurframe.octahedral import element_order

field = valence3_field()

# Continuous extractor: random small triangles, refined where the holonomy is nontrivial.
points = extract_singular_points(field, None, n_seeds=20000, seed=0)
radial = np.hypot(points.points[:, 0], points.points[:, 1])
print(f"{len(points)} singular points, farthest {radial.max():.1e} from the axis")
print("holonomy orders:", sorted({element_order(int(g)) for g in points.rotation_class}))

# Discrete extractor: frames per tet, loop rotation around every interior edge.
mesh = normalize_to_unit_box(generate_primitive("cylinder", 4))[0]
frames = discretize_volume_field(field, mesh).frames
edges = classify_singular_edges_discrete(frames, mesh)
ends = mesh.vertices[np.array([e for e, _ in edges.singular])]
print(f"{len(edges.singular)} singular edges, z range [{ends[..., 2].min():.2f}, {ends[..., 2].max():.2f}], "
      f"max radius {np.hypot(ends[..., 0], ends[..., 1]).max():.1e}")
print(f"{len(edges.unclassified)} boundary edges left unclassified")
