"""Eigen-analysis of transition matrices built by :func:`compute_transition`.

Because the Gram matrix is symmetric, ``P = D^-1 W`` with ``W = exp(G - g)``
symmetric and ``D`` its row sums. ``P`` is therefore similar to the symmetric
``S = D^-1/2 W D^-1/2`` and has a real spectrum. Decompositions go through
``S`` with a symmetric solver and are mapped back with ``D^-1/2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

DEGENERACY_TOL = 1e-6


@dataclass
class EigenSystem:
    eigenvalues: np.ndarray  # (MN,), descending
    eigenvectors: np.ndarray  # (MN, MN), column j pairs with eigenvalue j
    grid_m: int = 0
    grid_n: int = 0


@dataclass
class LaplacianReport:
    max_eigenvalue_deviation: float
    max_residual: float
    max_imaginary: float


def _numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive (lowest index on ties)."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def symmetric_factors(f, scale=None):
    """Return ``(W, d)`` with ``W`` symmetric and ``P = W / d[:, None]``."""
    f = np.asarray(_numpy(f), dtype=np.float64)
    m, n, k = f.shape
    flat = f.reshape(m * n, k)
    g = flat @ flat.T
    if scale is not None:
        g = g * scale
    w = np.exp(g - g.max())
    return w, w.sum(axis=1)


def eigendecompose_transition(p, f, scale=None) -> EigenSystem:
    p = np.asarray(_numpy(p), dtype=np.float64)
    f = _numpy(f)
    m, n = f.shape[0], f.shape[1]
    w, d = symmetric_factors(f, scale)
    if p.shape != w.shape:
        raise ValueError(f"P of shape {p.shape} does not match features on a {m}x{n} grid")
    recon = w / d[:, None]
    if np.max(np.abs(recon - p)) > 1e-6:
        raise ValueError("P was not produced from the supplied feature map")

    inv_sqrt_d = 1.0 / np.sqrt(d)
    s = inv_sqrt_d[:, None] * w * inv_sqrt_d[None, :]
    vals, vecs = np.linalg.eigh(0.5 * (s + s.T))
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    u = inv_sqrt_d[:, None] * vecs
    u /= np.linalg.norm(u, axis=0, keepdims=True)
    return EigenSystem(vals, fix_signs(u), m, n)


def laplacian_relation_check(es: EigenSystem, p) -> LaplacianReport:
    """Check that ``L = I - P`` has eigenvalues ``1 - lambda`` and shares eigenvectors with P."""
    p = np.asarray(_numpy(p), dtype=np.float64)
    lap = np.eye(p.shape[0]) - p
    lap_vals = np.linalg.eigvals(lap)
    expected = np.sort(1.0 - es.eigenvalues)
    got = np.sort(lap_vals.real)
    residual = lap @ es.eigenvectors - es.eigenvectors * (1.0 - es.eigenvalues)[None, :]
    return LaplacianReport(
        max_eigenvalue_deviation=float(np.max(np.abs(got - expected))),
        max_residual=float(np.max(np.abs(residual))),
        max_imaginary=float(np.max(np.abs(lap_vals.imag))),
    )


def trace(p):
    """Sum of diagonal entries over the last two axes (differentiable for tensors)."""
    if isinstance(p, torch.Tensor):
        return torch.diagonal(p, dim1=-2, dim2=-1).sum(-1)
    return np.trace(np.asarray(p), axis1=-2, axis2=-1)


def degenerate_blocks(eigenvalues: np.ndarray, tol: float = DEGENERACY_TOL) -> list[range]:
    """Group consecutive (sorted) eigenvalue indices closer than ``tol``."""
    blocks, start = [], 0
    for i in range(1, len(eigenvalues) + 1):
        if i == len(eigenvalues) or abs(eigenvalues[i - 1] - eigenvalues[i]) >= tol:
            blocks.append(range(start, i))
            start = i
    return blocks


def explicit_eigenspace_ss(es_a: EigenSystem, es_b: EigenSystem, cm, k: int) -> float:
    """Explicit eigenvector/eigenvalue consistency over the top ``k`` eigenpairs.

    Diagnostic only. Eigenvectors of ``es_a`` are moved by ``cm.t_r`` and
    compared with ``es_b``: for simple eigenvalues by mean squared difference
    after sign alignment, and inside degenerate clusters by the squared
    Frobenius distance of the spanned-subspace projectors (per member, scaled
    to the same per-entry mean). The eigenvalue term is the mean squared
    difference of the top ``k`` eigenvalues.
    """
    size = es_a.eigenvectors.shape[0]
    if es_b.eigenvectors.shape[0] != size or cm.t_r.shape[0] != size:
        raise ValueError("eigen systems and computing matrices must share the grid")
    if not 1 <= k <= size:
        raise ValueError(f"k must lie in [1, {size}], got {k}")

    ua = cm.t_r @ es_a.eigenvectors
    ub = es_b.eigenvectors
    vec_terms = []
    for block in degenerate_blocks(es_b.eigenvalues):
        members = [j for j in block if j < k]
        if not members:
            break
        if len(block) == 1:
            j = block[0]
            sign = 1.0 if ua[:, j] @ ub[:, j] >= 0 else -1.0
            vec_terms.append(np.mean((sign * ua[:, j] - ub[:, j]) ** 2))
        else:
            cols = list(block)
            proj_a = ua[:, cols] @ ua[:, cols].T
            proj_b = ub[:, cols] @ ub[:, cols].T
            per_member = np.sum((proj_a - proj_b) ** 2) / (2 * len(cols) * size)
            vec_terms.extend([per_member] * len(members))
    val_term = np.mean((es_a.eigenvalues[:k] - es_b.eigenvalues[:k]) ** 2)
    return float(np.mean(vec_terms) + val_term)


def eigenvector_images(es: EigenSystem, k: int, m: int | None = None, n: int | None = None):
    """Top-``k`` eigenvectors reshaped to the grid, min-max scaled to uint8."""
    m = m or es.grid_m
    n = n or es.grid_n
    images = []
    for j in range(k):
        v = es.eigenvectors[:, j].reshape(m, n)
        lo, hi = v.min(), v.max()
        if hi - lo <= 1e-12:
            scaled = np.zeros_like(v)
        else:
            scaled = (v - lo) / (hi - lo)
        images.append(np.round(scaled * 255).astype(np.uint8))
    return images
