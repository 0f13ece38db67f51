"""Walk through the transition matrix and why flips act on it as a conjugation.

Run with ``python3 demos/transition_equivariance.py``.
"""
import numpy as np

from scribbleseg.gridtransform import TransformSpec, apply_spatial, apply_transform_to_transition, build_computing_matrices
from scribbleseg.spectral import eigendecompose_transition, laplacian_relation_check
from scribbleseg.transition import compute_transition, random_walk_embedded

rng = np.random.default_rng(0)

# A 3x4 grid of 5-dimensional features, flattened row-major into 12 nodes.
f = rng.normal(size=(3, 4, 5))
p = compute_transition(f).numpy()
print("P is", p.shape, "with row sums", p.sum(1).round(12)[:4], "...")

# Flipping the features permutes the nodes, so P moves by t_r @ P @ t_c.
flip = TransformSpec.flip()
cm = build_computing_matrices(flip, 3, 4)
direct = compute_transition(apply_spatial(f, flip)).numpy()
moved = apply_transform_to_transition(p, cm)
print("max |T(P(f)) - P(t(f))| =", np.abs(moved - direct).max())

# Translations wrap around, which keeps them exact permutations as well.
shift = TransformSpec.translation(1, -1)
cm_shift = build_computing_matrices(shift, 3, 4)
gap = np.abs(apply_transform_to_transition(p, cm_shift) - compute_transition(apply_spatial(f, shift)).numpy()).max()
print("translation gap:", gap)

# P is similar to a symmetric matrix, so its spectrum is real and tops out at 1.
es = eigendecompose_transition(p, f)
print("eigenvalues:", es.eigenvalues.round(4))
rep = laplacian_relation_check(es, p)
print("L = I - P shares eigenvectors; worst residual", rep.max_residual)

# One embedded random-walk step with a small alpha smooths features along P.
smoothed = random_walk_embedded(f, p, 0.5).numpy()
print("feature spread before/after:", f.std(axis=(0, 1)).mean().round(3), smoothed.std(axis=(0, 1)).mean().round(3))
