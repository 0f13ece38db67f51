"""Spatial transforms on grids and their permutation counterparts on transition matrices.

A transform acts on the two spatial axes of an array (rows, cols). Flattening
of an ``m x n`` grid is row-major everywhere in this package, so a transform
induces a permutation of the ``m * n`` flattened indices. The permutation
matrix ``t_r`` and its transpose ``t_c`` realise the same transform directly
on an ``MN x MN`` transition matrix: ``T(P) = t_r @ P @ t_c``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch

FLIP = "horizontal_flip"
TRANSLATION = "translation"


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    dx: int = 0
    dy: int = 0

    def __post_init__(self):
        if self.kind not in (FLIP, TRANSLATION):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == FLIP and (self.dx or self.dy):
            raise ValueError("horizontal_flip takes no shift parameters")

    @classmethod
    def flip(cls) -> "TransformSpec":
        return cls(FLIP)

    @classmethod
    def translation(cls, dx: int, dy: int) -> "TransformSpec":
        return cls(TRANSLATION, int(dx), int(dy))

    def check_grid(self, m: int, n: int) -> None:
        if m < 1 or n < 1:
            raise ValueError(f"grid must be non-empty, got {m}x{n}")
        if self.kind == TRANSLATION and (abs(self.dx) >= n or abs(self.dy) >= m):
            raise ValueError(
                f"translation ({self.dy}, {self.dx}) too large for a {m}x{n} grid"
            )

    def inverse(self) -> "TransformSpec":
        if self.kind == FLIP:
            return self
        return TransformSpec.translation(-self.dx, -self.dy)

    def scaled_down(self, stride: int) -> "TransformSpec":
        """The same transform expressed on a grid ``stride`` times coarser.

        Only stride-aligned translations have an exact coarse counterpart.
        """
        if self.kind == FLIP:
            return self
        if self.dx % stride or self.dy % stride:
            raise ValueError(
                f"translation ({self.dy}, {self.dx}) is not aligned to stride {stride}"
            )
        return TransformSpec.translation(self.dx // stride, self.dy // stride)

    def scaled_up(self, stride: int) -> "TransformSpec":
        if self.kind == FLIP:
            return self
        return TransformSpec.translation(self.dx * stride, self.dy * stride)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dx": self.dx, "dy": self.dy}


class ComputingMatrices(NamedTuple):
    t_r: np.ndarray
    t_c: np.ndarray
    grid_m: int
    grid_n: int


def apply_spatial(x, phi: TransformSpec, axes=(0, 1)):
    """Apply ``phi`` to the (row, col) axes of a numpy array or torch tensor.

    Translation is a circular shift: content moves ``dy`` rows down and
    ``dx`` columns right, wrapping around the border.
    """
    row_ax, col_ax = axes
    if x.ndim == 0 or 0 in x.shape:
        raise ValueError("cannot transform an empty array")
    phi.check_grid(x.shape[row_ax], x.shape[col_ax])
    if isinstance(x, torch.Tensor):
        if phi.kind == FLIP:
            return torch.flip(x, dims=(col_ax,))
        return torch.roll(x, shifts=(phi.dy, phi.dx), dims=(row_ax, col_ax))
    x = np.asarray(x)
    if phi.kind == FLIP:
        return np.flip(x, axis=col_ax).copy()
    return np.roll(x, shift=(phi.dy, phi.dx), axis=(row_ax, col_ax))


def flat_permutation(phi: TransformSpec, m: int, n: int) -> np.ndarray:
    """Index array ``perm`` with ``apply_spatial(x).ravel()[i] == x.ravel()[perm[i]]``."""
    phi.check_grid(m, n)
    return apply_spatial(np.arange(m * n).reshape(m, n), phi).ravel()


def build_computing_matrices(phi: TransformSpec, m: int, n: int) -> ComputingMatrices:
    perm = flat_permutation(phi, m, n)
    t_r = np.eye(m * n)[perm]
    return ComputingMatrices(t_r, t_r.T.copy(), m, n)


def apply_transform_to_transition(p, cm: ComputingMatrices):
    """Return ``t_r @ p @ t_c``. Accepts a single matrix or a batch ``(..., MN, MN)``."""
    size = cm.grid_m * cm.grid_n
    if p.shape[-2:] != (size, size):
        raise ValueError(
            f"transition matrix of shape {tuple(p.shape)} does not match "
            f"a {cm.grid_m}x{cm.grid_n} grid"
        )
    if isinstance(p, torch.Tensor):
        t_r = torch.as_tensor(cm.t_r, dtype=p.dtype, device=p.device)
        t_c = torch.as_tensor(cm.t_c, dtype=p.dtype, device=p.device)
        return t_r @ p @ t_c
    return cm.t_r @ np.asarray(p) @ cm.t_c


def translation_radius(m: int, n: int) -> int:
    return math.ceil(0.25 * min(m, n))


def sample_transform(rng: np.random.Generator, mode: str, m: int, n: int) -> TransformSpec:
    """Draw a feature-grid transform for one batch.

    ``mode`` is one of ``flip``, ``translation`` or ``random`` (flip or
    translation with equal probability). Translation shifts are drawn
    uniformly from ``[-r, r]`` per axis with ``r = ceil(0.25 * min(m, n))``,
    clipped so the grid constraint holds.
    """
    if mode == "random":
        mode = "flip" if rng.random() < 0.5 else "translation"
    if mode == "flip":
        return TransformSpec.flip()
    if mode != "translation":
        raise ValueError(f"unknown transform mode {mode!r}")
    r = translation_radius(m, n)
    rx, ry = min(r, n - 1), min(r, m - 1)
    dx = int(rng.integers(-rx, rx + 1))
    dy = int(rng.integers(-ry, ry + 1))
    return TransformSpec.translation(dx, dy)
