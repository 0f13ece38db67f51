"""SLIC superpixels and the pseudo-boundary masks derived from them."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

# Colours are compared on a 0..100 scale (like Lab lightness) so that the
# usual compactness of 10 keeps its customary balance for [0, 1] images.
COLOR_SCALE = 100.0
_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass
class SuperpixelLabeling:
    labels: np.ndarray
    n_segments: int


def default_n_segments(h: int, w: int) -> int:
    return max(1, math.ceil(h * w / 256))


def _grid_shape(h: int, w: int, n_segments: int) -> tuple[int, int]:
    rows = max(1, min(h, round(math.sqrt(n_segments * h / w))))
    cols = max(1, min(w, round(n_segments / rows)))
    return rows, cols


def _gradient_magnitude(img: np.ndarray) -> np.ndarray:
    padded = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    gy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    gx = padded[1:-1, 2:] - padded[1:-1, :-2]
    return (gx ** 2).sum(-1) + (gy ** 2).sum(-1)


def _perturb_centers(centers: np.ndarray, grad: np.ndarray) -> np.ndarray:
    h, w = grad.shape
    out = centers.copy()
    for idx, (cy, cx) in enumerate(centers.astype(int)):
        best, best_pos = np.inf, (cy, cx)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                y, x = cy + dy, cx + dx
                if 0 <= y < h and 0 <= x < w and grad[y, x] < best:
                    best, best_pos = grad[y, x], (y, x)
        out[idx] = best_pos
    return out


def _enforce_connectivity(labels: np.ndarray) -> np.ndarray:
    """Merge every non-largest component of a label into its largest adjacent segment."""
    comp = np.full(labels.shape, -1, dtype=np.int64)
    comp_label, comp_size, n_comp = [], [], 0
    for lab in np.unique(labels):
        cc, k = ndimage.label(labels == lab, structure=_FOUR)
        for i in range(1, k + 1):
            region = cc == i
            comp[region] = n_comp
            comp_label.append(lab)
            comp_size.append(int(region.sum()))
            n_comp += 1
    comp_size = np.array(comp_size)
    comp_label = np.array(comp_label)

    orphans = []
    for lab in np.unique(comp_label):
        ids = np.flatnonzero(comp_label == lab)
        keep = ids[np.argmax(comp_size[ids])]
        orphans.extend(i for i in ids if i != keep)
    if not orphans:
        return labels

    parent = np.arange(n_comp)

    def root(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    size = comp_size.copy()
    for o in sorted(orphans, key=lambda i: (comp_size[i], i)):
        r_o = root(o)
        region = ndimage.binary_dilation(comp == o, structure=_FOUR) & (comp != o)
        neighbours = {root(c) for c in np.unique(comp[region])} - {r_o}
        if not neighbours:
            continue
        target = max(neighbours, key=lambda r: (size[r], -r))
        parent[r_o] = target
        size[target] += size[r_o]

    roots = np.array([root(i) for i in range(n_comp)])
    return comp_label[roots][comp]


def _relabel(labels: np.ndarray) -> tuple[np.ndarray, int]:
    uniq, inverse = np.unique(labels, return_inverse=True)
    return inverse.reshape(labels.shape), len(uniq)


def slic(image: np.ndarray, n_segments: int | None = None, compactness: float = 10.0,
         max_iters: int = 10) -> SuperpixelLabeling:
    """Simple linear iterative clustering on an ``H x W x 3`` image in [0, 1].

    Distance is ``sqrt(d_color**2 + (d_xy / S)**2 * compactness**2)`` with the
    search for each centre restricted to a ``2S x 2S`` window.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    h, w = img.shape[:2]
    if h * w == 0:
        raise ValueError("image is empty")
    if n_segments is None:
        n_segments = default_n_segments(h, w)
    if n_segments < 1 or n_segments > h * w:
        raise ValueError(f"n_segments must lie in [1, {h * w}], got {n_segments}")
    if n_segments == 1:
        return SuperpixelLabeling(np.zeros((h, w), dtype=np.int64), 1)

    img = img * COLOR_SCALE
    step = math.sqrt(h * w / n_segments)
    rows, cols = _grid_shape(h, w, n_segments)
    cy = (np.arange(rows) + 0.5) * h / rows
    cx = (np.arange(cols) + 0.5) * w / cols
    centers = np.stack(np.meshgrid(cy, cx, indexing="ij"), -1).reshape(-1, 2)
    centers = _perturb_centers(np.floor(centers), _gradient_magnitude(img))
    colors = img[centers[:, 0].astype(int), centers[:, 1].astype(int)]

    yy, xx = np.mgrid[0:h, 0:w]
    labels = np.full((h, w), -1, dtype=np.int64)
    spatial_w = (compactness / step) ** 2
    radius = int(math.ceil(step))
    for _ in range(max_iters):
        dist = np.full((h, w), np.inf)
        new = labels.copy()
        for k, ((y, x), col) in enumerate(zip(centers, colors)):
            y0, y1 = max(0, int(y) - radius), min(h, int(y) + radius + 1)
            x0, x1 = max(0, int(x) - radius), min(w, int(x) + radius + 1)
            win = img[y0:y1, x0:x1]
            d_col = ((win - col) ** 2).sum(-1)
            d_xy = (yy[y0:y1, x0:x1] - y) ** 2 + (xx[y0:y1, x0:x1] - x) ** 2
            d = d_col + spatial_w * d_xy
            better = d < dist[y0:y1, x0:x1]
            dist[y0:y1, x0:x1][better] = d[better]
            new[y0:y1, x0:x1][better] = k
        # pixels outside every window keep their previous (or nearest-centre) label
        unassigned = new < 0
        if unassigned.any():
            d_all = (yy[..., None] - centers[:, 0]) ** 2 + (xx[..., None] - centers[:, 1]) ** 2
            new[unassigned] = np.argmin(d_all, axis=-1)[unassigned]
        converged = np.array_equal(new, labels)
        labels = new
        if converged:
            break
        for k in range(len(centers)):
            mask = labels == k
            if mask.any():
                centers[k] = (yy[mask].mean(), xx[mask].mean())
                colors[k] = img[mask].mean(axis=0)

    labels = _enforce_connectivity(labels)
    labels, n = _relabel(labels)
    return SuperpixelLabeling(labels, n)


def boundary_mask(sp: SuperpixelLabeling | np.ndarray, dilation: int = 1) -> np.ndarray:
    """Pixels with a 4-neighbour in another segment, grown by ``dilation`` (Chebyshev)."""
    labels = sp.labels if isinstance(sp, SuperpixelLabeling) else np.asarray(sp)
    if dilation < 0:
        raise ValueError("dilation must be non-negative")
    mask = np.zeros(labels.shape, dtype=bool)
    vert = labels[1:, :] != labels[:-1, :]
    horiz = labels[:, 1:] != labels[:, :-1]
    mask[1:, :] |= vert
    mask[:-1, :] |= vert
    mask[:, 1:] |= horiz
    mask[:, :-1] |= horiz
    if dilation and mask.any():
        size = 2 * dilation + 1
        mask = ndimage.binary_dilation(mask, structure=np.ones((size, size), dtype=bool))
    return mask


def reduce_mask(mask: np.ndarray, m: int, n: int, threshold: float = 0.25) -> np.ndarray:
    """Reduce an ``H x W`` mask to ``m x n`` cells; a cell is boundary when at
    least ``threshold`` of its pixels are."""
    h, w = mask.shape
    if (h, w) == (m, n):
        return mask.copy()
    if h % m or w % n:
        raise ValueError(f"{h}x{w} mask cannot be reduced to {m}x{n} cells")
    frac = mask.reshape(m, h // m, n, w // n).mean(axis=(1, 3))
    return frac >= threshold


def pseudo_boundaries(image: np.ndarray, n_segments: int | None = None, compactness: float = 10.0,
                      max_iters: int = 10, dilation: int = 1) -> np.ndarray:
    return boundary_mask(slic(image, n_segments, compactness, max_iters), dilation)


def cache_key(image: np.ndarray, **params) -> str:
    h = hashlib.sha256(np.ascontiguousarray(image).tobytes())
    h.update(str(image.shape).encode())
    h.update(json.dumps(params, sort_keys=True).encode())
    return h.hexdigest()[:32]


def cached_pseudo_boundaries(image: np.ndarray, cache_dir: str | Path | None, **params) -> np.ndarray:
    """:func:`pseudo_boundaries` with an on-disk PNG cache (0 keep, 255 boundary)."""
    if cache_dir is None:
        return pseudo_boundaries(image, **params)
    path = Path(cache_dir) / f"{cache_key(image, **params)}.png"
    if path.exists():
        return np.asarray(PILImage.open(path)) > 127
    mask = pseudo_boundaries(image, **params)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(mask.astype(np.uint8) * 255).save(path)
    return mask
