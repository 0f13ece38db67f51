"""Training losses.

Predictions are channel-last probabilities ``(..., H, W, C)``. Every loss
accepts optional leading batch dimensions and returns the mean of the
per-sample values, so results do not depend on how a batch is split.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .gridtransform import ComputingMatrices, TransformSpec, apply_spatial, apply_transform_to_transition
from .spectral import trace

IGNORE = 255
LOG_EPS = 1e-12

WARMUP = "warmup"
FULL = "full"


@dataclass
class LossWeights:
    omega1: float = 0.5
    omega2: float = 0.1
    gamma: float = 1.0
    warmup_fraction: float = 0.5

    def __post_init__(self):
        for name in ("omega1", "omega2", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValueError(f"warmup_fraction must lie in [0, 1], got {self.warmup_fraction}")


def _safe_log(x: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.clamp(x, min=LOG_EPS))


def _per_sample_mean(values: torch.Tensor, n_lead: int) -> torch.Tensor:
    return values.reshape(-1).mean() if n_lead else values


def partial_cross_entropy(probs: torch.Tensor, scribbles, ignore_index: int = IGNORE) -> torch.Tensor:
    """Mean of ``-log p[label]`` over scribble pixels; 0 for an unlabeled sample."""
    scribbles = torch.as_tensor(scribbles, device=probs.device).long()
    if probs.shape[:-1] != scribbles.shape:
        raise ValueError(f"prediction {tuple(probs.shape)} and scribbles {tuple(scribbles.shape)} disagree")
    n_classes = probs.shape[-1]
    labeled = scribbles != ignore_index
    if bool(((scribbles < 0) | (labeled & (scribbles >= n_classes))).any()):
        raise ValueError(f"scribble class index outside [0, {n_classes})")
    target = torch.where(labeled, scribbles, torch.zeros_like(scribbles))
    picked = torch.gather(probs, -1, target.unsqueeze(-1)).squeeze(-1)
    nll = -_safe_log(picked) * labeled
    spatial = (-2, -1)
    count = labeled.sum(dim=spatial)
    per_sample = nll.sum(dim=spatial) / count.clamp(min=1)
    return _per_sample_mean(per_sample, probs.ndim - 3)


def pixel_entropy(probs: torch.Tensor) -> torch.Tensor:
    """Per-pixel entropy ``-sum_c s log s`` (``0 log 0 = 0``)."""
    return -(probs * _safe_log(probs)).sum(-1)


def entropy_full(probs: torch.Tensor) -> torch.Tensor:
    ent = pixel_entropy(probs)
    return _per_sample_mean(ent.mean(dim=(-2, -1)), probs.ndim - 3)


def entropy_soft(probs: torch.Tensor, boundary) -> torch.Tensor:
    """Entropy summed off the boundary but normalised by the full pixel count ``H * W``."""
    boundary = torch.as_tensor(boundary, device=probs.device).bool()
    if boundary.shape != probs.shape[:-1]:
        raise ValueError(f"boundary mask {tuple(boundary.shape)} does not match prediction {tuple(probs.shape)}")
    ent = pixel_entropy(probs) * (~boundary)
    h, w = probs.shape[-3], probs.shape[-2]
    return _per_sample_mean(ent.sum(dim=(-2, -1)) / (h * w), probs.ndim - 3)


def feature_ss(f_a: torch.Tensor, f_b: torch.Tensor, phi: TransformSpec) -> torch.Tensor:
    """Mean squared difference between the transformed ``f(x)`` and ``f(t(x))``.

    Feature maps are channel-last ``(..., M, N, K)``.
    """
    if f_a.shape != f_b.shape:
        raise ValueError(f"feature maps {tuple(f_a.shape)} and {tuple(f_b.shape)} differ in shape")
    moved = apply_spatial(f_a, phi, axes=(-3, -2))
    return ((moved - f_b) ** 2).mean()


def _kl_rows(p_a: torch.Tensor, p_b: torch.Tensor) -> torch.Tensor:
    mn = p_a.shape[-2]
    per_sample = (p_a * (_safe_log(p_a) - _safe_log(p_b))).sum(dim=(-2, -1)) / mn
    return _per_sample_mean(per_sample, p_a.ndim - 2)


def kl_rowwise(p_a: torch.Tensor, p_b: torch.Tensor) -> torch.Tensor:
    """``(1/MN) * sum_rows KL(p_a[row] || p_b[row])``."""
    if p_a.shape != p_b.shape:
        raise ValueError(f"transition matrices {tuple(p_a.shape)} and {tuple(p_b.shape)} differ in shape")
    if bool((p_a <= 0).any()) or bool((p_b <= 0).any()):
        raise ValueError("transition matrices must be strictly positive")
    return _kl_rows(p_a, p_b)


def kl_rowwise_log(logp_a: torch.Tensor, logp_b: torch.Tensor) -> torch.Tensor:
    """:func:`kl_rowwise` from log-probabilities; stays exact when P underflows to 0."""
    if logp_a.shape != logp_b.shape:
        raise ValueError(f"transition matrices {tuple(logp_a.shape)} and {tuple(logp_b.shape)} differ in shape")
    mn = logp_a.shape[-2]
    per_sample = (logp_a.exp() * (logp_a - logp_b)).sum(dim=(-2, -1)) / mn
    return _per_sample_mean(per_sample, logp_a.ndim - 2)


def soft_eigenspace_ss(p_x: torch.Tensor, p_tx: torch.Tensor, cm: ComputingMatrices, gamma: float,
                       log_p_x: torch.Tensor | None = None, log_p_tx: torch.Tensor | None = None) -> torch.Tensor:
    """Row-wise KL between ``T(P(x))`` and ``P(t(x))`` plus ``gamma`` times the squared trace gap.

    When the log transition matrices are supplied the KL term is evaluated
    from them (permutation conjugation commutes with the elementwise log).
    """
    moved = apply_transform_to_transition(p_x, cm)
    if moved.shape != p_tx.shape:
        raise ValueError(f"transition matrices {tuple(moved.shape)} and {tuple(p_tx.shape)} differ in shape")
    if log_p_x is not None and log_p_tx is not None:
        kl = kl_rowwise_log(apply_transform_to_transition(log_p_x, cm), log_p_tx)
    else:
        kl = kl_rowwise(moved, p_tx)
    gap = (trace(moved) - trace(p_tx)) ** 2
    return kl + gamma * _per_sample_mean(gap, p_x.ndim - 2)


def combine_terms(partial_ce, soft_entropy, ss_value, w: LossWeights, stage: str):
    """Weighted sum of the loss terms under the two-stage schedule.

    In the warmup stage the self-supervision value is ignored entirely.
    """
    if stage not in (WARMUP, FULL):
        raise ValueError(f"unknown stage {stage!r}")
    total = partial_ce + w.omega1 * soft_entropy
    if stage == FULL and ss_value is not None:
        total = total + w.omega2 * ss_value
    return total


def total_loss(probs, scribbles, boundary, ss_value, w: LossWeights, stage: str):
    pce = partial_cross_entropy(probs, scribbles)
    ent = entropy_soft(probs, boundary) if boundary is not None else entropy_full(probs)
    return combine_terms(pce, ent, ss_value, w, stage)
